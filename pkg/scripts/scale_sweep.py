"""Scale recovery against the true ratio, swept over ratios and noise levels."""
import argparse

import numpy as np

from mapmerge.errors import MapMergeError
from mapmerge.pipeline import merge_pair
from mapmerge.scene import ScenarioConfig, generate


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--ratios", type=float, nargs="+", default=[0.5, 0.8, 1.15, 1.5, 2.0, 2.84, 3.0])
    p.add_argument("--noise", type=float, nargs="+", default=[0.0, 1.0, 2.0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--state", default="b", choices=list("abcd"))
    args = p.parse_args()
    print(f"{'ratio':>6} {'noise':>6} {'median err %':>13} {'max err %':>10} {'branches':>20}")
    for r in args.ratios:
        for noise in args.noise:
            errs, branches = [], []
            for seed in range(args.seeds):
                sc = generate(args.state, ScenarioConfig(scales=(r, 1.0)).with_noise(noise), seed)
                try:
                    res = merge_pair(sc.agent("A"), sc.agent("B"))
                except MapMergeError as exc:
                    branches.append(type(exc).__name__)
                    continue
                errs.append(100 * abs(res.sigma_star / r - 1))
                branches.append(res.selection.branch)
            med = np.median(errs) if errs else float("nan")
            mx = np.max(errs) if errs else float("nan")
            counts = ",".join(f"{b}:{branches.count(b)}" for b in sorted(set(branches)))
            print(f"{r:6.2f} {noise:6.1f} {med:13.3f} {mx:10.3f} {counts:>20}")


if __name__ == "__main__":
    main()
