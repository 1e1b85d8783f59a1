"""Command-line entry point: generate, run, compare, metrics."""
from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import MapMergeError

OUT_DIR_ENV = "MAPMERGE_OUT_DIR"
DEFAULT_OUT_DIR = "mapmerge_out"


def default_out_dir():
    return os.environ.get(OUT_DIR_ENV, DEFAULT_OUT_DIR)


def _emit(obj, fmt, table=None):
    if fmt == "json":
        print(json.dumps(obj, indent=2, sort_keys=True, default=str))
    else:
        print(table if table is not None else obj)


def _scenario(args):
    from .scene import ScenarioConfig, generate, load_scenario
    if getattr(args, "scenario", None):
        return load_scenario(args.scenario)
    return generate(args.state, ScenarioConfig().with_noise(args.noise), args.seed)


def cmd_generate(args):
    from .scene import save_scenario, write_ply
    import numpy as np
    sc = _scenario(args)
    os.makedirs(args.out_dir, exist_ok=True)
    stem = os.path.join(args.out_dir, f"scenario_{sc.state.value}_seed{args.seed}")
    save_scenario(sc, stem + ".json")
    pts, owner = [], []
    for a, track in enumerate(sc.agents):
        for kf in track.keyframes:
            pts.append(kf.pose.apply(kf.cloud))
            owner.append(np.full(len(kf.cloud), a))
    write_ply(stem + "_clouds.ply", np.concatenate(pts), {"agent": np.concatenate(owner)})
    write_ply(stem + "_landmarks.ply", sc.landmarks)
    info = {"state": sc.state.value, "seed": sc.rng_seed, "scenario": stem + ".json",
            "agents": {t.agent_id: len(t) for t in sc.agents}, "extent": sc.extent()}
    table = "\n".join(f"{k}: {v}" for k, v in info.items())
    _emit(info, args.format, table)


def cmd_run(args):
    from .bus import BusMode, SessionParams, run_session
    from .evaluation import merged_trajectory_rmse, write_tum
    from .scene import write_ply
    sc = _scenario(args)
    os.makedirs(args.out_dir, exist_ok=True)
    params = SessionParams(transcript_path=os.path.join(args.out_dir, "transcript.jsonl"))
    res = run_session(sc, BusMode(args.mode), params)
    mm = res.merged
    write_ply(os.path.join(args.out_dir, "merged.ply"), mm.points, {"agent": mm.point_agent})
    for a in mm.agents:
        write_tum(os.path.join(args.out_dir, f"merged_{a}.tum"), mm.poses_of(a))
    rmse = merged_trajectory_rmse(sc, mm)
    out = {
        "mode": res.mode.value,
        "rmse": rmse,
        "rmse_percent": 100 * rmse / sc.extent(),
        "notices": [{"pair": list(n.pair), "trigger": list(n.trigger),
                     "sigma_star": n.scale_report["sigma_star"],
                     "loop_report": n.loop_report, "scale_report": n.scale_report}
                    for n in res.notices],
        "timings": res.timings,
    }
    lines = [f"mode: {out['mode']}", f"merged RMSE: {rmse:.5g} ({out['rmse_percent']:.3f}% of extent)"]
    for n in out["notices"]:
        lines.append(f"merge {n['pair'][0]}<-{n['pair'][1]} at {n['trigger']}: "
                     f"sigma*={n['sigma_star']:.5g} ({n['scale_report']['branch']}), "
                     f"{n['loop_report']['verdict']} direction")
    with open(os.path.join(args.out_dir, "session.json"), "w") as f:
        json.dump(out, f, indent=2, sort_keys=True)
    _emit(out, args.format, "\n".join(lines))


def cmd_compare(args):
    from .experiment import ExperimentConfig, load_config, run_experiment
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig(state=args.state, seeds=args.seeds or [args.seed],
                               noise=[args.noise], methods=args.methods, export=args.export)
    out = run_experiment(cfg, out_dir=args.out_dir)
    _emit({"rows": out["rows"], "summary": out["summary"]}, args.format, out["table"])


def cmd_metrics(args):
    from .evaluation import metric_rmse, read_tum
    _, est = read_tum(args.estimated)
    _, ref = read_tum(args.reference)
    m = metric_rmse(est, ref, args.align)
    out = {"rmse": m.rmse, "alignment": m.alignment_used.value,
           "rpe_translation": vars(m.rpe_translation), "rpe_rotation": vars(m.rpe_rotation)}
    table = (f"alignment: {out['alignment']}\nrmse: {m.rmse:.6g}\n"
             f"rpe translation mean/median/max: {m.rpe_translation.mean:.6g} "
             f"{m.rpe_translation.median:.6g} {m.rpe_translation.max:.6g}\n"
             f"rpe rotation mean/median/max (rad): {m.rpe_rotation.mean:.6g} "
             f"{m.rpe_rotation.median:.6g} {m.rpe_rotation.max:.6g}")
    _emit(out, args.format, table)


def build_parser():
    from .evaluation import METHODS
    p = argparse.ArgumentParser(prog="mapmerge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        sp.add_argument("--format", choices=["json", "table"], default="table")
        sp.add_argument("--out-dir", default=default_out_dir(),
                        help=f"output directory (default: ${OUT_DIR_ENV} or {DEFAULT_OUT_DIR})")
        if scenario:
            sp.add_argument("--state", choices=["a", "b", "c", "d"], default="b")
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--noise", type=float, default=1.0,
                            help="noise level multiplier (0 = noiseless)")

    g = sub.add_parser("generate", help="synthesize a scenario (JSON + PLY)")
    common(g)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="stream a scenario through the master and merge")
    common(r)
    r.add_argument("--scenario", help="load a scenario JSON instead of generating")
    r.add_argument("--mode", choices=["centralized", "distributed"], default="centralized")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="method comparison table")
    common(c)
    c.add_argument("--methods", nargs="+", choices=list(METHODS), default=list(METHODS))
    c.add_argument("--seeds", type=int, nargs="+", help="several seeds (overrides --seed)")
    c.add_argument("--config", help="YAML experiment config (overrides scenario flags)")
    c.add_argument("--export", action="store_true", help="write merged PLY/TUM per run")
    c.set_defaults(func=cmd_compare)

    m = sub.add_parser("metrics", help="RMSE and RPE between two TUM trajectories")
    common(m, scenario=False)
    m.add_argument("estimated")
    m.add_argument("reference")
    m.add_argument("--align", choices=["none", "se3", "sim3"], default="none")
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (MapMergeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
