"""Batch experiments from a YAML config: comparison rows, tables and exported artifacts."""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError, MapMergeError
from .evaluation import METHODS, ComparisonRow, write_tum
from .posegraph import PgoConfiguration, compare_configurations
from .scene import ScenarioConfig, ScenarioState, generate, write_ply

PGO_METHODS = {"PgoStraight": PgoConfiguration.STRAIGHT,
               "PgoFullyConnected": PgoConfiguration.FULLY_CONNECTED,
               "PgoTopMatches": PgoConfiguration.TOP_MATCHES}


@dataclass
class ExperimentConfig:
    state: str = "b"
    seeds: list = field(default_factory=lambda: [0])
    noise: list = field(default_factory=lambda: [1.0])
    methods: list = field(default_factory=lambda: list(METHODS))
    out_dir: str | None = None
    export: bool = False
    jobs: int = 1


_SCHEMA = {
    "state": str, "seeds": (int, list), "noise": (int, float, list),
    "methods": list, "out_dir": str, "export": bool, "jobs": int,
}


def _fail(path, node, msg):
    line = node.start_mark.line + 1 if node is not None else 1
    raise ConfigError(f"{path}:{line}: {msg}")


def parse_config(text, path="<config>"):
    """Validate a YAML experiment config, reporting the offending line."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError(f"{path}:{line}: invalid YAML ({getattr(exc, 'problem', exc)})") from exc
    if root is None or not isinstance(root, yaml.MappingNode):
        _fail(path, root, "top level must be a mapping")
    data = yaml.safe_load(text)
    nodes = {k.value: v for k, v in root.value}
    for key, node in nodes.items():
        if key not in _SCHEMA:
            _fail(path, node, f"unknown key {key!r}")
        if not isinstance(data[key], _SCHEMA[key]) or isinstance(data[key], bool) != (_SCHEMA[key] is bool):
            _fail(path, node, f"{key!r} has the wrong type ({type(data[key]).__name__})")
    cfg = ExperimentConfig()
    if "state" in data:
        if data["state"] not in [s.value for s in ScenarioState]:
            _fail(path, nodes["state"], f"state must be one of a, b, c, d (got {data['state']!r})")
        cfg.state = data["state"]
    if "seeds" in data:
        s = data["seeds"]
        seeds = list(range(s)) if isinstance(s, int) else s
        if not seeds or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in seeds):
            _fail(path, nodes["seeds"], "seeds must be a positive count or a non-empty list of non-negative ints")
        cfg.seeds = sorted(seeds)
    if "noise" in data:
        n = data["noise"]
        levels = n if isinstance(n, list) else [n]
        if not levels or not all(isinstance(x, (int, float)) and not isinstance(x, bool) and x >= 0
                                 for x in levels):
            _fail(path, nodes["noise"], "noise levels must be non-negative numbers")
        cfg.noise = [float(x) for x in levels]
    if "methods" in data:
        m = data["methods"]
        if not m:
            _fail(path, nodes["methods"], "methods list is empty")
        for item, node in zip(m, nodes["methods"].value):
            if item not in METHODS:
                _fail(path, node, f"unknown method {item!r}; choose from {', '.join(METHODS)}")
        cfg.methods = list(dict.fromkeys(m))
    if "jobs" in data:
        if data["jobs"] < 1:
            _fail(path, nodes["jobs"], "jobs must be >= 1")
        cfg.jobs = data["jobs"]
    cfg.out_dir = data.get("out_dir")
    cfg.export = data.get("export", False)
    return cfg


def load_config(path):
    with open(path) as f:
        return parse_config(f.read(), path)


def run_case(state, seed, noise, methods, export_dir=None):
    """All requested methods on one generated scenario; rows in METHODS order."""
    sc = generate(state, ScenarioConfig().with_noise(noise), seed)
    configs = [PGO_METHODS[m] for m in methods if m in PGO_METHODS]
    try:
        rows = compare_configurations(sc, configs=configs)
    except MapMergeError as exc:
        rows = [ComparisonRow(m, float("nan"), float("nan"), float("nan"), sc.extent(),
                              error=f"{type(exc).__name__}: {exc}") for m in METHODS]
    rows = [r for r in rows if r.method in methods]
    rows.sort(key=lambda r: METHODS.index(r.method))
    if export_dir:
        _export(sc, export_dir, seed, noise)
    return sc, rows


def _export(sc, out_dir, seed, noise):
    from .pipeline import merge_pair
    ids = sorted(a.agent_id for a in sc.agents)
    src, tgt = sc.agent(ids[0]), sc.agent(ids[1])
    try:
        res = merge_pair(src, tgt)
    except MapMergeError:
        return
    mm = res.merged(src, tgt)
    stem = os.path.join(out_dir, f"{sc.state.value}_seed{seed}_noise{noise:g}")
    write_ply(stem + "_merged.ply", mm.points, {"agent": mm.point_agent.astype(int)})
    for a in mm.agents:
        write_tum(f"{stem}_{a}.tum", mm.poses_of(a))


def _median(values):
    v = [x for x in values if np.isfinite(x)]
    return float(np.median(v)) if v else float("nan")


def aggregate(records):
    """Median rmse, scale error and time per (noise, method)."""
    groups = {}
    for r in records:
        groups.setdefault((r["noise"], r["method"]), []).append(r)
    out = []
    for (noise, method), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], METHODS.index(kv[0][1]))):
        out.append({"noise": noise, "method": method, "runs": len(rs),
                    "median_rmse_percent": _median([r["rmse_percent"] for r in rs]),
                    "median_scale_error_percent": _median([r["scale_error_percent"] for r in rs]),
                    "median_wall_time_seconds": _median([r.get("wall_time_seconds", float("nan")) for r in rs]),
                    "failures": sum(r["error"] is not None for r in rs)})
    return out


def format_table(rows, columns):
    head = [c for c, _ in columns]
    body = []
    for r in rows:
        line = []
        for c, fmt in columns:
            v = r.get(c)
            line.append("-" if v is None else (fmt.format(v) if isinstance(v, (int, float)) else str(v)))
        body.append(line)
    widths = [max(len(h), *(len(b[k]) for b in body)) if body else len(h) for k, h in enumerate(head)]
    fmt_line = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    out = [fmt_line(head), fmt_line(["-" * w for w in widths])]
    out += [fmt_line(b) for b in body]
    return "\n".join(out)


ROW_COLUMNS = [("noise", "{:g}"), ("seed", "{:d}"), ("method", "{}"),
               ("scale_error_percent", "{:.3f}"), ("rmse_percent", "{:.4f}"),
               ("wall_time_seconds", "{:.3f}")]
SUMMARY_COLUMNS = [("noise", "{:g}"), ("method", "{}"), ("runs", "{:d}"),
                   ("median_scale_error_percent", "{:.3f}"), ("median_rmse_percent", "{:.4f}"),
                   ("median_wall_time_seconds", "{:.3f}"), ("failures", "{:d}")]


def _clean(v):
    return None if isinstance(v, float) and not np.isfinite(v) else v


def run_experiment(config, out_dir=None):
    """Run a config (path or ExperimentConfig); returns {"rows", "summary", "table"}.

    When an output directory is set, writes results.json (no timing fields, so
    it is byte-identical for identical configs), timings.json and table.txt.
    """
    cfg = load_config(config) if isinstance(config, (str, os.PathLike)) else config
    out_dir = out_dir or cfg.out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    cases = [(noise, seed) for noise in cfg.noise for seed in cfg.seeds]
    export_dir = out_dir if (out_dir and cfg.export) else None

    def one(case):
        noise, seed = case
        _, rows = run_case(cfg.state, seed, noise, cfg.methods, export_dir)
        return [{"state": cfg.state, "noise": noise, "seed": seed,
                 **{k: _clean(v) for k, v in r.as_dict().items()}} for r in rows]

    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as ex:
            results = list(ex.map(one, cases))
    else:
        results = [one(c) for c in cases]
    records = sorted((r for rs in results for r in rs),
                     key=lambda r: (r["noise"], r["seed"], METHODS.index(r["method"])))
    summary = aggregate([{k: (float("nan") if v is None and k != "error" else v) for k, v in r.items()}
                         for r in records])
    summary = [{k: _clean(v) for k, v in s.items()} for s in summary]
    table = format_table(records, ROW_COLUMNS) + "\n\n" + format_table(summary, SUMMARY_COLUMNS)
    if out_dir:
        timing = {"wall_time_seconds", "median_wall_time_seconds"}
        strip = lambda rs: [{k: v for k, v in r.items() if k not in timing} for r in rs]
        with open(os.path.join(out_dir, "results.json"), "w") as f:
            json.dump({"state": cfg.state, "rows": strip(records), "summary": strip(summary)},
                      f, indent=2, sort_keys=True)
        with open(os.path.join(out_dir, "timings.json"), "w") as f:
            json.dump([{"noise": r["noise"], "seed": r["seed"], "method": r["method"],
                        "wall_time_seconds": r["wall_time_seconds"]} for r in records], f, indent=2)
        with open(os.path.join(out_dir, "table.txt"), "w") as f:
            f.write(table + "\n")
    return {"rows": records, "summary": summary, "table": table}
