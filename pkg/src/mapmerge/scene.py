"""Synthetic multi-agent scenarios with ground truth.

Each scenario is a set of rooms ("zones").  Agents only see landmarks and
structure of the zone they are currently in, so covisibility between two
agents is confined to the shared window zones by construction.  Inside a
zone visibility is decided by a pinhole frustum and a range limit.

Every agent expresses its odometry in its own world frame (its first
keyframe is the origin) and in its own monocular scale: camera-frame
coordinates and translations are divided by ``local_scale``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError
from .geometry import SE3, FrameId, Sim3, compose, inverse, so3_exp

SCHEMA_NAME = "mapmerge.scenario"
SCHEMA_VERSION = 1


class ScenarioState(enum.Enum):
    SAME_DIR_MANY_LC = "a"
    SAME_DIR_SINGLE_LC = "b"
    OPPOSITE_DIR_MANY_LC = "c"
    OPPOSITE_DIR_SINGLE_LC = "d"

    @property
    def opposite(self):
        return self in (ScenarioState.OPPOSITE_DIR_MANY_LC, ScenarioState.OPPOSITE_DIR_SINGLE_LC)

    @property
    def single(self):
        return self in (ScenarioState.SAME_DIR_SINGLE_LC, ScenarioState.OPPOSITE_DIR_SINGLE_LC)


@dataclass(frozen=True)
class ScenarioConfig:
    step: float = 0.5
    window: Optional[int] = None  # covisible keyframes; None -> 5 (single LC) or 16 (many LC)
    n_pre: int = 6
    n_post: int = 6
    scales: tuple = (1.0, 2.0)
    lateral_offset: float = 0.8
    landmarks_per_unit: float = 25.0
    structure_per_unit: float = 150.0
    min_covisible: int = 8
    max_range: float = 14.0
    hfov_tan: float = 0.4
    vfov_tan: float = 0.75
    heading_jitter: float = 0.03
    descriptor_dim: int = 32
    descriptor_noise: float = 0.05
    landmark_noise: float = 0.01
    cloud_noise: float = 0.01
    odom_noise_frac: float = 0.005
    odom_sigma_r: float = 0.0005
    landmark_dropout: float = 0.0
    outlier_fraction: float = 0.0

    def noiseless(self):
        return replace(self, descriptor_noise=0.0, landmark_noise=0.0, cloud_noise=0.0,
                       odom_noise_frac=0.0, odom_sigma_r=0.0, landmark_dropout=0.0)

    def with_noise(self, level):
        """Multiply every noise magnitude by ``level`` (0 = noiseless, 1 = defaults)."""
        if level < 0:
            raise ConfigError("noise level must be >= 0")
        return replace(self, descriptor_noise=self.descriptor_noise * level,
                       landmark_noise=self.landmark_noise * level,
                       cloud_noise=self.cloud_noise * level,
                       odom_noise_frac=self.odom_noise_frac * level,
                       odom_sigma_r=self.odom_sigma_r * level)

    def window_for(self, state):
        if self.window is not None:
            return self.window
        return 5 if state.single else 16

    def validate(self, state=None):
        for name in ("descriptor_noise", "landmark_noise", "cloud_noise",
                     "odom_noise_frac", "odom_sigma_r", "landmark_dropout", "heading_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if state is not None and self.window_for(state) < 3:
            raise ConfigError("overlap window must be at least 3 keyframes")
        if any(s <= 0 for s in self.scales):
            raise ConfigError("agent scales must be positive")
        if self.step <= 0:
            raise ConfigError("step must be positive")
        if self.outlier_fraction > 0:
            raise NotImplementedError("outlier injection needs a robust eight-point solver")


@dataclass
class Keyframe:
    frame: FrameId
    pose: Sim3                 # camera -> agent world, rigid, agent scale
    zone: int
    landmark_ids: np.ndarray   # (K,)
    observations: np.ndarray   # (K, 3) camera frame, agent scale
    descriptors: np.ndarray    # (K, D)
    cloud: np.ndarray          # (M, 3) camera frame, agent scale

    @property
    def index(self):
        return self.frame.index


@dataclass
class AgentTrack:
    agent_id: str
    keyframes: list
    local_scale: float

    def __len__(self):
        return len(self.keyframes)

    def __getitem__(self, i):
        return self.keyframes[i]

    def positions(self):
        return np.array([kf.pose.translation for kf in self.keyframes])


@dataclass
class Scenario:
    state: Optional[ScenarioState]
    config: ScenarioConfig
    rng_seed: int
    agents: list
    landmarks: np.ndarray                      # (N, 3) global frame
    ground_truth: dict                         # agent -> Sim3 agent world -> global
    true_poses: dict                           # agent -> list of Sim3 camera -> global
    windows: list = field(default_factory=list)  # [{"zone": z, "agents": {id: [indices]}}]

    def agent(self, agent_id):
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(agent_id)

    def extent(self):
        """Diameter of the bounding box of all true camera positions (global units)."""
        P = np.concatenate([[T.translation for T in poses] for poses in self.true_poses.values()])
        return float(np.linalg.norm(P.max(0) - P.min(0)))

    def true_scale_ratio(self, source, target):
        return self.agent(source).local_scale / self.agent(target).local_scale


# ----------------------------------------------------------------------------
# layout
# ----------------------------------------------------------------------------

@dataclass
class _Window:
    zone: int
    origin: np.ndarray   # west end, on the source lane
    length: float


@dataclass
class _Pass:
    window: _Window
    westward: bool
    lateral: float       # southward offset from the window lane
    phase: float


def _unit(angle_deg):
    a = np.deg2rad(angle_deg)
    return np.array([np.cos(a), np.sin(a)])


def _pass_points(p, n, step):
    xs = p.phase + step * np.arange(n)
    if p.westward:
        xs = xs[::-1]
    pts = np.stack([p.window.origin[0] + xs, np.full(n, p.window.origin[1] - p.lateral)], 1)
    return pts


def _build_path(passes, n_win, step, pre_angle, post_angle, n_pre, n_post, zone_counter):
    """Returns (positions (K,2), zones (K,), private zone list)."""
    pts, zones, private = [], [], []

    def new_zone():
        z = zone_counter[0]
        zone_counter[0] += 1
        private.append(z)
        return z

    first = _pass_points(passes[0], n_win, step)
    zp = new_zone()
    d = _unit(pre_angle)
    for m in range(n_pre, 0, -1):
        pts.append(first[0] + d * step * m)
        zones.append(zp)
    for k, p in enumerate(passes):
        win = _pass_points(p, n_win, step)
        if k > 0:
            a, b = pts[-1], win[0]
            n_mid = max(int(np.ceil(np.linalg.norm(b - a) / step)) - 1, 1)
            zm = new_zone()
            for u in np.linspace(0, 1, n_mid + 2)[1:-1]:
                pts.append(a + u * (b - a))
                zones.append(zm)
        pts.extend(win)
        zones.extend([p.window.zone] * n_win)
    zq = new_zone()
    d = _unit(post_angle)
    last = pts[-1]
    for m in range(1, n_post + 1):
        pts.append(last + d * step * m)
        zones.append(zq)
    return np.array(pts), np.array(zones), private


def _headings(P, zones):
    """Unit direction of travel, differenced within each run of one zone."""
    H = np.zeros_like(P)
    n = len(P)
    for k in range(n):
        lo = k - 1 if k > 0 and zones[k - 1] == zones[k] else k
        hi = k + 1 if k + 1 < n and zones[k + 1] == zones[k] else k
        if lo == hi:
            lo, hi = max(k - 1, 0), min(k + 1, n - 1)
        H[k] = P[hi] - P[lo]
    return H / np.linalg.norm(H, axis=1, keepdims=True)


def _look_dirs(headings, look_left):
    # rotate the heading by +90 (left) or -90 (right) about the vertical axis
    L = np.stack([-headings[:, 1], headings[:, 0]], 1)
    return L if look_left else -L


def _camera_rotation(look2d, jitter):
    z = np.array([look2d[0], look2d[1], 0.0])
    y = np.array([0.0, 0.0, -1.0])
    x = np.cross(y, z)
    return np.stack([x, y, z], 1) @ so3_exp(jitter)


def _sample_box(rng, n, origin2d, along2d, lateral2d, along_range, lat_range, z_range):
    u = rng.uniform(*along_range, n)
    v = rng.uniform(*lat_range, n)
    w = rng.uniform(*z_range, n)
    xy = origin2d + u[:, None] * along2d + v[:, None] * lateral2d
    return np.column_stack([xy, w])


def _zone_geometry(rng, cfg, origin2d, along2d, lateral2d, along_range):
    """Landmarks and structure points for one zone laid out along a straight stretch."""
    length = along_range[1] - along_range[0]
    n_lm = max(int(round(cfg.landmarks_per_unit * length)), 1)
    lms = _sample_box(rng, n_lm, origin2d, along2d, lateral2d, along_range, (2.0, 5.0), (-1.5, 2.0))
    n_s = int(round(cfg.structure_per_unit * length))
    n_wall, n_ground, n_box = int(0.4 * n_s), int(0.3 * n_s), int(0.3 * n_s)
    wall = _sample_box(rng, n_wall, origin2d, along2d, lateral2d, along_range, (6.0, 6.0), (-1.5, 2.5))
    ground = _sample_box(rng, n_ground, origin2d, along2d, lateral2d, along_range, (1.5, 6.0), (-1.5, -1.5))
    boxes = []
    n_boxes = 3
    for b in range(n_boxes):
        c_u = rng.uniform(*along_range)
        c_v = rng.uniform(3.0, 5.0)
        size = rng.uniform(0.6, 1.5, 3)
        center = np.concatenate([origin2d + c_u * along2d + c_v * lateral2d, [-1.5 + size[2] / 2]])
        m = n_box // n_boxes
        face = rng.integers(0, 3, m)
        local = rng.uniform(-0.5, 0.5, (m, 3))
        local[np.arange(m), face] = np.sign(rng.uniform(-1, 1, m)) * 0.5
        local *= size
        R = np.column_stack([np.append(along2d, 0), np.append(lateral2d, 0), [0, 0, 1]])
        boxes.append(center + local @ R.T)
    neigh = (np.repeat(lms, 2, 0) + rng.normal(scale=0.1, size=(2 * len(lms), 3)))
    structure = np.concatenate([wall, ground, *boxes, neigh])
    return lms, structure


def _visible(R, c, X, cfg):
    P = (X - c) @ R
    z = P[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = ((z > 0.5) & (z < cfg.max_range)
              & (np.abs(P[:, 0]) <= cfg.hfov_tan * z)
              & (np.abs(P[:, 1]) <= cfg.vfov_tan * z))
    return ok, P


def _layout_two(state, cfg, rng):
    n_win = cfg.window_for(state)
    L = (n_win - 1) * cfg.step
    win = _Window(0, np.array([0.0, 0.0]), L)
    phase_t = rng.uniform(-0.2, 0.2) * cfg.step
    src = dict(agent="A", passes=[_Pass(win, False, 0.0, 0.0)], pre=215.0, post=-35.0, left=True)
    if state.opposite:
        tgt = dict(agent="B", passes=[_Pass(win, True, cfg.lateral_offset, phase_t)],
                   pre=35.0, post=145.0, left=False)
    else:
        tgt = dict(agent="B", passes=[_Pass(win, False, cfg.lateral_offset, phase_t)],
                   pre=145.0, post=35.0, left=True)
    return [win], [src, tgt], n_win


def _layout_chain(cfg, rng):
    """Three agents: A meets B (opposite directions) in window 0, B meets C (same direction) in window 1."""
    n_win = cfg.window_for(ScenarioState.SAME_DIR_SINGLE_LC)
    L = (n_win - 1) * cfg.step
    w0 = _Window(0, np.array([0.0, 0.0]), L)
    w1 = _Window(1, np.array([L + 12.0, -14.0]), L)
    ph = rng.uniform(-0.2, 0.2, 2) * cfg.step
    a = dict(agent="A", passes=[_Pass(w0, True, -cfg.lateral_offset, ph[0])], pre=35.0, post=145.0, left=False)
    b = dict(agent="B", passes=[_Pass(w0, False, 0.0, 0.0), _Pass(w1, False, 0.0, 0.0)],
             pre=215.0, post=35.0, left=True)
    c = dict(agent="C", passes=[_Pass(w1, False, cfg.lateral_offset, ph[1])], pre=145.0, post=-35.0, left=True)
    return [w0, w1], [a, b, c], n_win


def _synthesize(state, cfg, seed, layout_fn, scales):
    if len(scales) < 2:
        raise ConfigError("need at least two agents")
    ss = np.random.SeedSequence(seed)
    geo_seed, noise_seed, odo_seed = ss.spawn(3)
    rng = np.random.default_rng(geo_seed)
    nrng = np.random.default_rng(noise_seed)

    windows, plans, n_win = layout_fn(rng)
    if len(plans) != len(scales):
        raise ConfigError(f"layout has {len(plans)} agents but {len(scales)} scales were given")
    zone_counter = [len(windows)]
    zone_lms, zone_struct = {}, {}
    for w in windows:
        zone_lms[w.zone], zone_struct[w.zone] = _zone_geometry(
            rng, cfg, w.origin, np.array([1.0, 0.0]), np.array([0.0, 1.0]), (-4.0, w.length + 4.0))

    paths = []
    for plan in plans:
        P, Z, private = _build_path(plan["passes"], n_win, cfg.step, plan["pre"], plan["post"],
                                    cfg.n_pre, cfg.n_post, zone_counter)
        H = _headings(P, Z)
        look = _look_dirs(H, plan["left"])
        for z in private:
            idx = np.flatnonzero(Z == z)
            a, b = P[idx[0]], P[idx[-1]]
            along = b - a
            span = np.linalg.norm(along)
            along = along / span if span > 1e-9 else H[idx[0]]
            lat = look[idx].mean(0)
            lat -= along * np.dot(lat, along)
            lat /= np.linalg.norm(lat)
            zone_lms[z], zone_struct[z] = _zone_geometry(rng, cfg, a, along, lat, (-2.0, span + 2.0))
        paths.append((P, Z, look))

    # global landmark table
    zones_sorted = sorted(zone_lms)
    landmarks = np.concatenate([zone_lms[z] for z in zones_sorted])
    lm_zone = np.concatenate([[z] * len(zone_lms[z]) for z in zones_sorted])
    base_desc = rng.normal(size=(len(landmarks), cfg.descriptor_dim))
    base_desc /= np.linalg.norm(base_desc, axis=1, keepdims=True)

    agents, gts, true_poses = [], {}, {}
    odo_rngs = [np.random.default_rng(s) for s in odo_seed.spawn(len(plans))]
    for a_i, (plan, (P, Z, look), s_a) in enumerate(zip(plans, paths, scales)):
        aid = plan["agent"]
        poses = []
        for k in range(len(P)):
            R = _camera_rotation(look[k], rng.normal(scale=cfg.heading_jitter, size=3))
            poses.append(SE3(R, np.array([P[k, 0], P[k, 1], 0.0])))
        G = Sim3(poses[0].rotation, poses[0].translation, s_a)
        G_inv = inverse(G)
        kfs = []
        for k, C in enumerate(poses):
            zone = int(Z[k])
            Rc, c = C.rotation, C.translation
            sel = np.flatnonzero(lm_zone == zone)
            ok, Pc = _visible(Rc, c, landmarks[sel], cfg)
            ids = sel[ok]
            obs = Pc[ok]
            if cfg.landmark_dropout > 0 and len(ids):
                keep = nrng.uniform(size=len(ids)) >= cfg.landmark_dropout
                ids, obs = ids[keep], obs[keep]
            obs = obs + nrng.normal(scale=cfg.landmark_noise, size=obs.shape) if cfg.landmark_noise > 0 else obs
            # noise can push a point behind the camera at tiny depths; keep depth positive
            front = obs[:, 2] > 1e-3
            ids, obs = ids[front], obs[front]
            desc = base_desc[ids]
            if cfg.descriptor_noise > 0:
                desc = desc + nrng.normal(scale=cfg.descriptor_noise, size=desc.shape)
            okc, Sc = _visible(Rc, c, zone_struct[zone], cfg)
            cloud = Sc[okc]
            if cfg.cloud_noise > 0:
                cloud = cloud + nrng.normal(scale=cfg.cloud_noise, size=cloud.shape)
            local = compose(G_inv, C)
            # G^-1 C has unit scale up to rounding; store it exactly rigid
            pose_local = SE3(local.rotation, local.translation)
            kfs.append(Keyframe(FrameId(aid, k), pose_local, zone, ids.astype(int),
                                obs / s_a, desc, cloud / s_a))
        track = AgentTrack(aid, kfs, float(s_a))
        sig_t = cfg.odom_noise_frac * cfg.step / s_a
        if sig_t > 0 or cfg.odom_sigma_r > 0:
            track = perturb_odometry(track, sig_t, cfg.odom_sigma_r, odo_rngs[a_i])
        agents.append(track)
        gts[aid] = G
        true_poses[aid] = poses

    win_records = []
    for w in windows:
        rec = {"zone": w.zone, "agents": {}}
        for t in agents:
            idx = [kf.index for kf in t.keyframes if kf.zone == w.zone]
            if idx:
                rec["agents"][t.agent_id] = idx
        shared = set()
        ids_by_agent = [set(np.concatenate([t[i].landmark_ids for i in idx]).tolist())
                        for (aid, idx) in rec["agents"].items() for t in [_find(agents, aid)]]
        if len(ids_by_agent) >= 2:
            shared = set.intersection(*ids_by_agent)
        if not shared:
            raise ConfigError(f"no covisible landmarks in window zone {w.zone}")
        win_records.append(rec)

    return Scenario(state, cfg, int(seed), agents, landmarks, gts, true_poses, win_records)


def _find(agents, aid):
    for a in agents:
        if a.agent_id == aid:
            return a
    raise KeyError(aid)


def generate(state, config=None, seed=0):
    """Two-agent scenario reproducing one of the four challenging states.

    Agent "A" is the source lane, agent "B" the target.  ``config.scales``
    holds the two local monocular scales.
    """
    config = config or ScenarioConfig()
    state = ScenarioState(state)
    config.validate(state)
    return _synthesize(state, config, seed, lambda rng: _layout_two(state, config, rng),
                       tuple(config.scales[:2]))


def generate_chain(config=None, seed=0, scales=(1.0, 2.0, 0.7)):
    """Three agents A, B, C where B overlaps both A and C and A never meets C."""
    config = config or ScenarioConfig()
    config.validate(ScenarioState.SAME_DIR_SINGLE_LC)
    return _synthesize(None, config, seed, lambda rng: _layout_chain(config, rng), tuple(scales))


def generate_disjoint(config=None, seed=0):
    """Two agents that never share a zone (no loop closure possible)."""
    config = config or ScenarioConfig()
    sc = generate(ScenarioState.SAME_DIR_SINGLE_LC, config, seed)
    b = sc.agent("B")
    far_zone = 10_000
    for kf in b.keyframes:
        if kf.zone == 0:
            kf.zone = far_zone
            # re-identify what B saw in the window as distinct landmarks
            kf.landmark_ids = kf.landmark_ids + len(sc.landmarks)
            kf.descriptors = np.roll(kf.descriptors, 7, axis=1) * -1.0
    sc.windows = []
    return sc


def perturb_odometry(track, sigma_t, sigma_r, seed):
    """Cumulative Gaussian drift on the relative pose chain; keyframe 0 stays put."""
    if sigma_t < 0 or sigma_r < 0:
        raise ConfigError("odometry sigmas must be >= 0")
    if sigma_t == 0 and sigma_r == 0:
        return AgentTrack(track.agent_id, list(track.keyframes), track.local_scale)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    kfs = [track.keyframes[0]]
    prev_true = track.keyframes[0].pose
    cur = prev_true
    for kf in track.keyframes[1:]:
        rel = compose(inverse(prev_true), kf.pose)
        noise = SE3(so3_exp(rng.normal(scale=sigma_r, size=3)), rng.normal(scale=sigma_t, size=3))
        cur = compose(cur, compose(rel, noise))
        cur = SE3(cur.rotation, cur.translation).renormalized()
        kfs.append(replace(kf, pose=cur))
        prev_true = kf.pose
    return AgentTrack(track.agent_id, kfs, track.local_scale)


def lift_pose(scenario, agent_id, pose_local):
    """Ground-truth camera -> global pose of a local pose (exact when noiseless)."""
    s = scenario.agent(agent_id).local_scale
    return compose(compose(scenario.ground_truth[agent_id], pose_local), Sim3.pure_scale(1.0 / s))


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------

def _arr(a):
    return np.asarray(a).tolist()


def scenario_to_dict(sc):
    return {
        "schema": SCHEMA_NAME,
        "version": SCHEMA_VERSION,
        "state": sc.state.value if sc.state is not None else None,
        "seed": sc.rng_seed,
        "config": asdict(sc.config),
        "landmarks": _arr(sc.landmarks),
        "ground_truth": {k: v.row_major() for k, v in sc.ground_truth.items()},
        "true_poses": {k: [p.row_major() for p in v] for k, v in sc.true_poses.items()},
        "windows": sc.windows,
        "agents": [
            {
                "id": t.agent_id,
                "local_scale": t.local_scale,
                "keyframes": [
                    {
                        "index": kf.index,
                        "zone": kf.zone,
                        "pose": kf.pose.row_major(),
                        "landmark_ids": _arr(kf.landmark_ids),
                        "observations": _arr(kf.observations),
                        "descriptors": _arr(kf.descriptors),
                        "cloud": _arr(kf.cloud),
                    }
                    for kf in t.keyframes
                ],
            }
            for t in sc.agents
        ],
    }


def _rigid_from_row_major(values):
    M = np.reshape(values, (4, 4))
    return SE3(M[:3, :3], M[:3, 3])


def scenario_from_dict(d):
    if d.get("schema") != SCHEMA_NAME or d.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported scenario document {d.get('schema')!r} v{d.get('version')!r}")
    cfg = d["config"]
    cfg["scales"] = tuple(cfg["scales"])
    config = ScenarioConfig(**cfg)
    agents = []
    for a in d["agents"]:
        D = config.descriptor_dim
        kfs = [
            Keyframe(
                FrameId(a["id"], k["index"]),
                _rigid_from_row_major(k["pose"]),
                k["zone"],
                np.array(k["landmark_ids"], dtype=int),
                np.array(k["observations"], dtype=float).reshape(-1, 3),
                np.array(k["descriptors"], dtype=float).reshape(-1, D),
                np.array(k["cloud"], dtype=float).reshape(-1, 3),
            )
            for k in a["keyframes"]
        ]
        agents.append(AgentTrack(a["id"], kfs, float(a["local_scale"])))

    def sim3_exact(v):
        M = np.reshape(v, (4, 4))
        A = M[:3, :3]
        s = float(np.linalg.norm(A[:, 0]))
        return Sim3(A / s, M[:3, 3], s)

    return Scenario(
        ScenarioState(d["state"]) if d["state"] is not None else None,
        config,
        int(d["seed"]),
        agents,
        np.array(d["landmarks"], dtype=float).reshape(-1, 3),
        {k: sim3_exact(v) for k, v in d["ground_truth"].items()},
        {k: [_rigid_from_row_major(p) for p in v] for k, v in d["true_poses"].items()},
        d["windows"],
    )


def save_scenario(sc, path):
    with open(path, "w") as f:
        json.dump(scenario_to_dict(sc), f)


def load_scenario(path):
    with open(path) as f:
        return scenario_from_dict(json.load(f))


def write_ply(path, points, scalars=None):
    """ASCII PLY with optional per-vertex scalar properties (name -> (N,) array)."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    scalars = scalars or {}
    cols = [P]
    header = ["ply", "format ascii 1.0", f"element vertex {len(P)}",
              "property float x", "property float y", "property float z"]
    for name, values in scalars.items():
        v = np.asarray(values).reshape(-1)
        if len(v) != len(P):
            raise ValueError(f"scalar {name!r} has {len(v)} values for {len(P)} points")
        kind = "int" if np.issubdtype(v.dtype, np.integer) else "float"
        header.append(f"property {kind} {name}")
        cols.append(v[:, None].astype(float))
    header.append("end_header")
    is_int = [False, False, False] + [h.startswith("property int") for h in header[6:-1]]
    data = np.hstack(cols)
    with open(path, "w") as f:
        f.write("\n".join(header) + "\n")
        for row in data:
            f.write(" ".join(str(int(x)) if isint else repr(float(x))
                             for x, isint in zip(row, is_int)) + "\n")


def read_ply(path):
    """Inverse of :func:`write_ply`; returns (points, scalars)."""
    with open(path) as f:
        lines = f.read().splitlines()
    end = lines.index("end_header")
    props = [l.split()[-1] for l in lines[:end] if l.startswith("property")]
    n = next(int(l.split()[-1]) for l in lines if l.startswith("element vertex"))
    data = np.array([[float(x) for x in l.split()] for l in lines[end + 1:end + 1 + n]]).reshape(n, len(props))
    return data[:, :3], {name: data[:, 3 + i] for i, name in enumerate(props[3:])}
