"""Pose-graph baselines over the matched keyframe triple."""
from __future__ import annotations

import enum
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import GaugeUnfixed, MapMergeError, MissingEstimate, NotConnected
from .geometry import (FrameId, SE3, Sim3, compose, inverse, quaternion_to_rotation,
                       rotation_to_quaternion, se3_exp, se3_log)


class PgoConfiguration(enum.Enum):
    STRAIGHT = "straight"
    FULLY_CONNECTED = "fully_connected"
    TOP_MATCHES = "top_matches"


@dataclass
class Edge:
    from_frame: FrameId
    to_frame: FrameId
    measurement: Sim3        # expected X_from^-1 X_to
    information: np.ndarray  # 6x6 over (rho, phi)
    kind: str = "inter"

    def __post_init__(self):
        info = np.asarray(self.information, dtype=float)
        if info.shape != (6, 6):
            raise ValueError("information must be 6x6")
        if not np.allclose(info, info.T, atol=1e-9 * max(1.0, np.abs(info).max())):
            raise ValueError("information must be symmetric")
        self.information = 0.5 * (info + info.T)


@dataclass
class PoseGraph:
    nodes: dict = field(default_factory=dict)   # FrameId -> Sim3 (rigid)
    edges: list = field(default_factory=list)
    fixed: FrameId | None = None

    def add_edge(self, edge):
        for f in (edge.from_frame, edge.to_frame):
            if f not in self.nodes:
                raise KeyError(f"edge endpoint {f} is not a node")
        self.edges.append(edge)

    def inter_edges(self):
        return [e for e in self.edges if e.kind == "inter"]

    def odometry_edges(self):
        return [e for e in self.edges if e.kind == "odometry"]

    def residual(self, edge, nodes=None):
        nodes = nodes or self.nodes
        Xi, Xj = nodes[edge.from_frame], nodes[edge.to_frame]
        return se3_log(compose(inverse(edge.measurement), compose(inverse(Xi), Xj)))

    def cost(self, nodes=None):
        return float(sum(r @ e.information @ r for e in self.edges
                         for r in [self.residual(e, nodes)]))

    def is_connected(self):
        if not self.nodes:
            return True
        adj = {n: set() for n in self.nodes}
        for e in self.edges:
            adj[e.from_frame].add(e.to_frame)
            adj[e.to_frame].add(e.from_frame)
        start = next(iter(self.nodes))
        seen, todo = {start}, deque([start])
        while todo:
            for nb in adj[todo.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    todo.append(nb)
        return len(seen) == len(self.nodes)

    def copy(self, nodes=None):
        return PoseGraph(dict(nodes if nodes is not None else self.nodes), list(self.edges), self.fixed)


@dataclass(frozen=True)
class PgoParams:
    max_iterations: int = 100
    tolerance: float = 1e-9
    initial_lambda: float = 1e-4
    robust: bool = False
    huber_factor: float = 3.0
    odometry_information: tuple = (1e4, 1e6)   # translation, rotation weights


# ----------------------------------------------------------------------------
# graph construction
# ----------------------------------------------------------------------------

def triple_nodes(triple):
    """(S1, S2, S3) and (T1, T2, T3) keyframe indices, one per z offset."""
    return [p[0] for p in triple.pairs], [p[1] for p in triple.pairs]


def required_pairs(config, triple):
    S, T = triple_nodes(triple)
    config = PgoConfiguration(config)
    if config is PgoConfiguration.TOP_MATCHES:
        k = int(np.argmax(triple.gammas))
        return [(S[k], T[k])]
    pairs = [(S[k], T[k]) for k in range(3)]
    if config is PgoConfiguration.FULLY_CONNECTED:
        # cross pairs {T1,S2}, {T2,S1}, {T2,S3}, {T3,S2}
        pairs += [(S[1], T[0]), (S[0], T[1]), (S[2], T[1]), (S[1], T[2])]
    return pairs


def scaled_source_pose(pose, sigma):
    """Source keyframe pose in the sigma-scaled source world, camera scaled alike."""
    return SE3(pose.rotation, sigma * pose.translation)


def build_graph(config, triple, estimates, tracks, sigma, target_transform, params=None):
    """Nodes at the triple's keyframes, initialised from the direct merge.

    estimates: dict (source index, target index) -> pipeline.EdgeEstimate
    tracks: (source, target) AgentTrack pair
    target_transform: target world -> merged frame from the direct merge
    """
    params = params or PgoParams()
    source, target = tracks
    S, T = triple_nodes(triple)
    W = target_transform.without_scale()
    g = PoseGraph()
    for i in sorted(set(S)):
        g.nodes[source[i].frame] = scaled_source_pose(source[i].pose, sigma)
    for j in sorted(set(T)):
        g.nodes[target[j].frame] = compose(W, target[j].pose).without_scale()
    g.fixed = source[S[0]].frame

    wt, wr = params.odometry_information
    odo_info = np.diag([wt] * 3 + [wr] * 3)
    for track, idx in ((source, sorted(set(S))), (target, sorted(set(T)))):
        for a, b in zip(idx[:-1], idx[1:]):
            fa, fb = track[a].frame, track[b].frame
            meas = compose(inverse(g.nodes[fa]), g.nodes[fb])
            g.add_edge(Edge(fa, fb, meas, odo_info, "odometry"))

    for pair in required_pairs(config, triple):
        if pair not in estimates:
            raise MissingEstimate(f"no edge estimate for keyframe pair {pair}")
        est = estimates[pair]
        g.add_edge(Edge(source[pair[0]].frame, target[pair[1]].frame,
                        est.measurement.without_scale(), est.information, "inter"))
    return g


# ----------------------------------------------------------------------------
# Levenberg-Marquardt on SE(3), right perturbation X <- X Exp(d)
# ----------------------------------------------------------------------------

def _edge_jacobians(graph, edge, nodes, h=1e-7):
    Xi, Xj = nodes[edge.from_frame], nodes[edge.to_frame]
    Zi = inverse(edge.measurement)
    Ji, Jj = np.zeros((6, 6)), np.zeros((6, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = h
        Ep, Em = se3_exp(d), se3_exp(-d)
        Ji[:, k] = (se3_log(compose(Zi, compose(inverse(compose(Xi, Ep)), Xj)))
                    - se3_log(compose(Zi, compose(inverse(compose(Xi, Em)), Xj)))) / (2 * h)
        Jj[:, k] = (se3_log(compose(Zi, compose(inverse(Xi), compose(Xj, Ep))))
                    - se3_log(compose(Zi, compose(inverse(Xi), compose(Xj, Em))))) / (2 * h)
    return Ji, Jj


def _huber(s2, k):
    """(cost, IRLS weight) for a squared Mahalanobis residual s2."""
    if k is None or s2 <= k * k:
        return s2, 1.0
    s = np.sqrt(s2)
    return 2 * k * s - k * k, k / s


def optimize(graph, params=None):
    """Returns (optimized graph, accepted cost trace)."""
    params = params or PgoParams()
    if graph.fixed is None or graph.fixed not in graph.nodes:
        raise GaugeUnfixed("no fixed node in the pose graph")
    if not graph.is_connected():
        raise NotConnected("pose graph is not connected")
    free = [n for n in graph.nodes if n != graph.fixed]
    col = {n: 6 * k for k, n in enumerate(free)}
    nodes = dict(graph.nodes)

    k_huber = None
    if params.robust:
        s = [np.sqrt(max(r @ e.information @ r, 0.0))
             for e in graph.edges for r in [graph.residual(e, nodes)]]
        k_huber = max(params.huber_factor * float(np.median(s)), 1e-12)

    def total(nodes):
        c = 0.0
        for e in graph.edges:
            r = graph.residual(e, nodes)
            c += _huber(float(r @ e.information @ r), k_huber)[0]
        return c

    cost = total(nodes)
    trace = [cost]
    lam = params.initial_lambda
    if not free:
        return graph.copy(nodes), trace
    for _ in range(params.max_iterations):
        n = 6 * len(free)
        H = np.zeros((n, n))
        b = np.zeros(n)
        for e in graph.edges:
            r = graph.residual(e, nodes)
            _, w = _huber(float(r @ e.information @ r), k_huber)
            Om = w * e.information
            Ji, Jj = _edge_jacobians(graph, e, nodes)
            blocks = [(e.from_frame, Ji), (e.to_frame, Jj)]
            for a, Ja in blocks:
                if a not in col:
                    continue
                ca = col[a]
                b[ca:ca + 6] += Ja.T @ Om @ r
                for c, Jc in blocks:
                    if c in col:
                        cc = col[c]
                        H[ca:ca + 6, cc:cc + 6] += Ja.T @ Om @ Jc
        if not np.all(np.isfinite(H)):
            break
        improved = False
        while lam < 1e12:
            A = H + lam * np.diag(np.diag(H) + 1e-12)
            try:
                delta = np.linalg.solve(A, -b)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = dict(nodes)
            for f in free:
                c = col[f]
                trial[f] = compose(nodes[f], se3_exp(delta[c:c + 6]))
            new = total(trial)
            if new < cost:
                nodes, improved = trial, True
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
        if not improved:
            break
        rel = (cost - new) / max(cost, 1e-300)
        cost = new
        trace.append(cost)
        if rel < params.tolerance or cost < 1e-30:
            break
    return graph.copy(nodes), trace


def merged_transform_from_graph(graph, tracks, triple, sigma):
    """Target world -> merged frame read off the S2/T2 node pair.

    The relative S2->T2 pose is anchored at the source's own S2 keyframe,
    so the source map itself is left unchanged.
    """
    source, target = tracks
    (_, s2, _), (_, t2, _) = triple_nodes(triple)
    fs, ft = source[s2].frame, target[t2].frame
    rel = compose(inverse(graph.nodes[fs]), graph.nodes[ft])
    anchor = scaled_source_pose(source[s2].pose, sigma)
    return compose(anchor, compose(rel, inverse(target[t2].pose)))


# ----------------------------------------------------------------------------
# comparison against the direct merge
# ----------------------------------------------------------------------------

def compare_configurations(scenario, params=None, pgo=None, configs=None, source_id=None,
                           target_id=None):
    """Direct merge, its unrefined baseline and the three pose-graph variants.

    Returns a list of ComparisonRow.  Failures in one configuration are
    reported in that row and do not stop the others.
    """
    from .evaluation import ComparisonRow, merged_trajectory_rmse
    from .pipeline import PipelineParams, merge_pair, pair_edge, pcr_pro_direct
    from .loops import PairMatcher
    from .registration import apply_merge

    params = params or PipelineParams()
    pgo = pgo or PgoParams()
    configs = configs or list(PgoConfiguration)
    ids = sorted(a.agent_id for a in scenario.agents)
    source = scenario.agent(source_id or ids[0])
    target = scenario.agent(target_id or ids[1])
    true_sigma = scenario.true_scale_ratio(source.agent_id, target.agent_id)
    tracks = (source, target)
    extent = scenario.extent()

    def rmse_of(transforms):
        mm = apply_merge([source, target], transforms, include_clouds=False)
        return merged_trajectory_rmse(scenario, mm)

    matcher = PairMatcher(source, target, params.loop)
    res = merge_pair(source, target, params, matcher=matcher)
    sigma = res.sigma_star
    rows = [ComparisonRow("LoopBox", rmse_of(res.transforms()), res.pipeline_seconds,
                          100 * abs(sigma / true_sigma - 1), extent)]

    t = time.perf_counter()
    s0, w0 = pcr_pro_direct(source, target, res.triple, res.estimates, params)
    pcr_time = res.timings["detect"] + time.perf_counter() - t
    rows.append(ComparisonRow("PcrProDirect", rmse_of([s0, w0]), pcr_time,
                              100 * abs(res.estimates[1].sigma / true_sigma - 1), extent))

    edge_cache, edge_time = {}, {}
    names = {PgoConfiguration.STRAIGHT: "PgoStraight",
             PgoConfiguration.FULLY_CONNECTED: "PgoFullyConnected",
             PgoConfiguration.TOP_MATCHES: "PgoTopMatches"}
    for cfg in configs:
        cfg = PgoConfiguration(cfg)
        try:
            spent = res.pipeline_seconds
            for pair in required_pairs(cfg, res.triple):
                if pair not in edge_cache:
                    t = time.perf_counter()
                    edge_cache[pair] = pair_edge(source, target, pair, sigma, params, matcher)
                    edge_time[pair] = time.perf_counter() - t
                spent += edge_time[pair]
            t = time.perf_counter()
            g = build_graph(cfg, res.triple, edge_cache, tracks, sigma, res.target_transform, pgo)
            g_opt, _ = optimize(g, pgo)
            W = merged_transform_from_graph(g_opt, tracks, res.triple, sigma)
            spent += time.perf_counter() - t
            rows.append(ComparisonRow(names[cfg], rmse_of([res.sigma_scaling, W]), spent,
                                      100 * abs(sigma / true_sigma - 1), extent))
        except MapMergeError as exc:
            rows.append(ComparisonRow(names[cfg], float("nan"), float("nan"), float("nan"),
                                      extent, error=f"{type(exc).__name__}: {exc}"))
    return rows


# ----------------------------------------------------------------------------
# g2o text format
# ----------------------------------------------------------------------------
# VERTEX_SE3:QUAT id x y z qx qy qz qw
# VERTEX_SIM3:QUAT id x y z qx qy qz qw s      (extension, written when s != 1)
# EDGE_SE3:QUAT i j x y z qx qy qz qw I11 I12 .. I66   (upper triangle)
# FIX id
# # FRAME id agent:index                          (keyframe identity, a comment to g2o)
# # KIND i j odometry|inter

_Q_FROM_PHI = np.diag([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])   # d(t, q_vec)/d(rho, phi), small angles


def _pose_fields(T):
    q = rotation_to_quaternion(T.rotation)
    return [*T.translation, *q]


def export_g2o(graph, path):
    ids = {f: k for k, f in enumerate(graph.nodes)}
    lines = []
    for f, k in ids.items():
        lines.append(f"# FRAME {k} {f}")
    for f, k in ids.items():
        T = graph.nodes[f]
        vals = " ".join(f"{v:.12g}" for v in _pose_fields(T))
        if abs(T.scale - 1.0) > 1e-12:
            lines.append(f"VERTEX_SIM3:QUAT {k} {vals} {T.scale:.12g}")
        else:
            lines.append(f"VERTEX_SE3:QUAT {k} {vals}")
    if graph.fixed is not None:
        lines.append(f"FIX {ids[graph.fixed]}")
    D = np.linalg.inv(_Q_FROM_PHI)
    for e in graph.edges:
        i, j = ids[e.from_frame], ids[e.to_frame]
        info = D.T @ e.information @ D
        upper = info[np.triu_indices(6)]
        vals = " ".join(f"{v:.12g}" for v in [*_pose_fields(e.measurement), *upper])
        lines.append(f"# KIND {i} {j} {e.kind}")
        lines.append(f"EDGE_SE3:QUAT {i} {j} {vals}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_frame(text):
    agent, _, idx = text.rpartition(":")
    return FrameId(agent, None if idx in ("", "world") else int(idx))


def import_g2o(path):
    frames, nodes, kinds = {}, {}, {}
    raw_edges, fixed = [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "#":
                if len(tok) >= 4 and tok[1] == "FRAME":
                    frames[int(tok[2])] = _parse_frame(tok[3])
                elif len(tok) >= 5 and tok[1] == "KIND":
                    kinds[(int(tok[2]), int(tok[3]))] = tok[4]
                continue
            head = tok[0]
            try:
                if head in ("VERTEX_SE3:QUAT", "VERTEX_SIM3:QUAT"):
                    k = int(tok[1])
                    v = [float(x) for x in tok[2:]]
                    s = v[7] if head == "VERTEX_SIM3:QUAT" else 1.0
                    nodes[k] = Sim3(quaternion_to_rotation(v[3:7]), v[:3], s)
                elif head == "EDGE_SE3:QUAT":
                    i, j = int(tok[1]), int(tok[2])
                    v = [float(x) for x in tok[3:]]
                    info = np.zeros((6, 6))
                    info[np.triu_indices(6)] = v[7:28]
                    info = info + np.triu(info, 1).T
                    raw_edges.append((i, j, SE3(quaternion_to_rotation(v[3:7]), v[:3]), info))
                elif head == "FIX":
                    fixed = int(tok[1])
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed {head} line") from exc
    frame = lambda k: frames.get(k, FrameId("g2o", k))
    g = PoseGraph({frame(k): T for k, T in nodes.items()}, [], frame(fixed) if fixed is not None else None)
    for i, j, meas, info in raw_edges:
        kind = kinds.get((i, j), "odometry" if frame(i).agent == frame(j).agent else "inter")
        g.add_edge(Edge(frame(i), frame(j), meas, _Q_FROM_PHI.T @ info @ _Q_FROM_PHI, kind))
    return g
