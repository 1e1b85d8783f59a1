"""Method comparison over seeds: median RMSE, scale error and wall time per method.

    python3 scripts/compare_methods.py --state d --seeds 20 --noise 0 1 2
"""
import argparse

from mapmerge.evaluation import METHODS
from mapmerge.experiment import ExperimentConfig, run_experiment


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--state", default="b", choices=list("abcd"))
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--noise", type=float, nargs="+", default=[1.0])
    p.add_argument("--methods", nargs="+", default=list(METHODS), choices=list(METHODS))
    p.add_argument("--out-dir", default=None)
    args = p.parse_args()
    cfg = ExperimentConfig(state=args.state, seeds=list(range(args.seeds)), noise=args.noise,
                           methods=args.methods)
    out = run_experiment(cfg, args.out_dir)
    print(out["table"].split("\n\n")[1])


if __name__ == "__main__":
    main()
