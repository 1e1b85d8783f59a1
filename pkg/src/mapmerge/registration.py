"""Cloud alignment chain, point-to-point ICP, ICP information matrix and map update."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import SingularHessian, TooFewPoints
from .geometry import SE3, Sim3, compose, inverse, skew, so3_exp, umeyama


@dataclass
class AlignmentChain:
    scaling: Sim3            # pure sigma* scale applied to the source cloud
    world_lift_target: Sim3  # target camera j -> target world (target keyframe pose)
    world_to_source: Sim3    # world -> source camera i (inverse source keyframe pose)
    initial_guess: Sim3
    icp_refinement: Sim3 = field(default_factory=Sim3.identity)

    def __post_init__(self):
        if self.icp_refinement.scale != 1.0:
            raise ValueError("ICP refinement must be rigid")

    @property
    def sigma(self):
        return self.scaling.scale

    def with_icp(self, transform):
        return replace(self, icp_refinement=Sim3(transform.rotation, transform.translation, 1.0))


def align_chain(cloud_s, cloud_t, pose_s, pose_t, sigma_star, initial_guess):
    """Scale the source cloud and carry the target cloud into the source camera frame.

    Returns (scaled source cloud, aligned target cloud, chain).  The target
    goes target camera -> world -> source camera -> initial guess, in that order.
    """
    if sigma_star <= 0:
        raise ValueError("sigma* must be positive")
    chain = AlignmentChain(Sim3.pure_scale(sigma_star), pose_t, inverse(pose_s), initial_guess)
    star = chain.scaling.apply(np.asarray(cloud_s).reshape(-1, 3))
    P = chain.world_lift_target.apply(np.asarray(cloud_t).reshape(-1, 3))
    P = chain.world_to_source.apply(P)
    plus = chain.initial_guess.apply(P)
    return star, plus, chain


# ----------------------------------------------------------------------------
# ICP
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class IcpParams:
    min_points: int = 50
    max_iterations: int = 100
    tolerance: float = 1e-8
    trim_fraction: float | None = None   # None: estimated from the initial residuals
    min_overlap: float = 0.4
    overlap_exponent: float = 2.0
    reciprocal: bool = False


@dataclass
class IcpResult:
    transform: Sim3               # maps the moving (target) cloud onto the fixed (source) cloud
    final_cost: float
    iterations: int
    converged: bool
    correspondences_used: int
    cost_trace: list
    moving_idx: np.ndarray
    fixed_idx: np.ndarray

    def rms(self):
        return float(np.sqrt(self.final_cost / max(self.correspondences_used, 1)))


def _select(moving_now, fixed, tree_fixed, keep, reciprocal):
    d, nn = tree_fixed.query(moving_now)
    idx = np.arange(len(moving_now))
    if reciprocal:
        back = cKDTree(moving_now).query(fixed[nn])[1]
        mask = back == idx
        idx, d, nn = idx[mask], d[mask], nn[mask]
    k = min(keep, len(idx))
    order = np.argsort(d, kind="stable")[:k]
    return idx[order], nn[order]


def estimate_overlap(distances, min_overlap=0.4, exponent=2.0):
    """Overlap fraction minimising mean_sq(best xi) / xi**exponent (trimmed-ICP criterion).

    Ties go to the largest fraction, so perfectly matching subsets are kept whole.
    """
    d2 = np.sort(np.asarray(distances, dtype=float) ** 2)
    n = len(d2)
    if n == 0:
        return 1.0
    k = np.arange(1, n + 1)
    xi = k / n
    psi = (np.cumsum(d2) / k) / xi**exponent
    ok = xi >= min_overlap
    if not ok.any():
        return 1.0
    best = psi[ok].min()
    cand = np.flatnonzero(ok & (psi <= best * (1 + 1e-9) + 1e-300))
    return float(xi[cand[-1]])


def icp_point_to_point(source, target, params=None, init=None):
    """Rigid ICP moving ``target`` onto ``source``.

    The cost is the trimmed sum of squared distances over a fixed number of
    best pairs, which makes it non-increasing across iterations.  The number
    kept comes from ``trim_fraction`` or, when that is None, from the overlap
    estimated once at the starting pose.
    """
    params = params or IcpParams()
    fixed = np.asarray(source, dtype=float).reshape(-1, 3)
    moving = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(fixed) < params.min_points or len(moving) < params.min_points:
        raise TooFewPoints(f"ICP needs >= {params.min_points} points per cloud "
                           f"(got {len(fixed)} and {len(moving)})")
    tree = cKDTree(fixed)
    T = init.without_scale() if init is not None else Sim3.identity()
    frac = params.trim_fraction
    if frac is None:
        frac = estimate_overlap(tree.query(T.apply(moving))[0], params.min_overlap,
                                params.overlap_exponent)
    keep = max(3, int(np.ceil(frac * len(moving))))
    trace = []
    converged = False
    it = 0
    mi = fi = None

    def cost_of(T, mi, fi):
        r = T.apply(moving[mi]) - fixed[fi]
        return float(np.sum(r * r))

    prev = None
    for it in range(1, params.max_iterations + 1):
        mi, fi = _select(T.apply(moving), fixed, tree, keep, params.reciprocal)
        before = cost_of(T, mi, fi)
        T_new = umeyama(moving[mi], fixed[fi], with_scale=False)
        after = cost_of(T_new, mi, fi)
        if after <= before:
            T, cost = T_new, after
        else:
            cost = before
        if prev is not None and cost > prev:
            # only possible with reciprocal filtering, whose pair count varies
            cost = prev
            converged = True
            trace.append(cost)
            break
        trace.append(cost)
        if cost <= 1e-24 or (prev is not None and prev - cost <= params.tolerance * max(prev, 1e-300)):
            converged = True
            break
        prev = cost
    return IcpResult(T, trace[-1], it, converged, len(mi), trace, mi, fi)


# ----------------------------------------------------------------------------
# information matrix of the ICP solution
# ----------------------------------------------------------------------------

def icp_cost(P, Q, x, T0):
    """sum ||R P_i + t - Q_i||^2 with R = exp(phi) R0 and t = t0 + rho, x = (rho, phi)."""
    R = so3_exp(x[3:]) @ T0.rotation
    t = T0.translation + x[:3]
    G = P @ R.T + t - Q
    return float(np.sum(G * G))


def icp_derivatives(P, Q, T0):
    """Analytic d2J/dx2 (6x6) and d2J/dzdx (6 x 6n) at x = 0.

    z is ordered (P_1, Q_1, P_2, Q_2, ...), three coordinates each.
    """
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    Q = np.asarray(Q, dtype=float).reshape(-1, 3)
    R, t = T0.rotation, T0.translation
    n = len(P)
    V = P @ R.T
    G = V + t - Q
    H = np.zeros((6, 6))
    M = np.zeros((6, 6 * n))
    I3 = np.eye(3)
    for i in range(n):
        v, g = V[i], G[i]
        vx = skew(v)
        H[:3, :3] += I3
        H[:3, 3:] += -vx
        H[3:, :3] += vx
        H[3:, 3:] += -vx @ vx + 0.5 * (np.outer(g, v) + np.outer(v, g)) - np.dot(g, v) * I3
        M[:3, 6 * i:6 * i + 3] = R
        M[3:, 6 * i:6 * i + 3] = -skew(t - Q[i]) @ R
        M[:3, 6 * i + 3:6 * i + 6] = -I3
        M[3:, 6 * i + 3:6 * i + 6] = -vx
    return 2.0 * H, 2.0 * M


def icp_covariance(P, Q, T0, cov_z, condition_limit=1e10):
    n = len(np.asarray(P).reshape(-1, 3))
    if n < 3:
        raise SingularHessian("need at least 3 correspondences")
    H, M = icp_derivatives(P, Q, T0)
    c = np.linalg.cond(H)
    if not np.isfinite(c) or c > condition_limit:
        raise SingularHessian(f"ICP Hessian condition number {c:.3g}")
    Hinv = np.linalg.inv(H)
    cz = np.asarray(cov_z, dtype=float)
    if cz.ndim == 0:
        MC = M * float(cz)
    elif cz.ndim == 1:
        MC = M * cz[None, :]
    else:
        MC = M @ cz
    cov = Hinv @ MC @ M.T @ Hinv
    return 0.5 * (cov + cov.T)


def icp_information_matrix(P, Q, T0, cov_z, condition_limit=1e10):
    """Inverse of the ICP solution covariance, ordered (x, y, z, a, b, c).

    cov_z: scalar (isotropic per coordinate), a (6n,) diagonal or a full
    (6n, 6n) covariance of the stacked correspondences.
    """
    cov = icp_covariance(P, Q, T0, cov_z, condition_limit)
    info = np.linalg.inv(cov)
    return 0.5 * (info + info.T)


# ----------------------------------------------------------------------------
# composition and map update
# ----------------------------------------------------------------------------

def final_transform(chain):
    """ICP * initial guess * world->source * target->world, as one Sim3.

    Maps target camera j coordinates into the sigma-scaled source camera i frame.
    """
    return compose(chain.icp_refinement,
                   compose(chain.initial_guess,
                           compose(chain.world_to_source, chain.world_lift_target)))


def world_merge_transform(chain):
    """Target world -> merged frame (the source world scaled by sigma*)."""
    s = chain.sigma
    pose_s = inverse(chain.world_to_source)
    scaled_source_cam_to_merged = compose(Sim3.pure_scale(s), compose(pose_s, Sim3.pure_scale(1.0 / s)))
    return compose(scaled_source_cam_to_merged,
                   compose(final_transform(chain), inverse(chain.world_lift_target)))


@dataclass
class MergedMap:
    frames: list        # FrameId per merged keyframe
    poses: list         # camera -> merged frame, Sim3
    points: np.ndarray  # (N, 3)
    point_agent: np.ndarray  # (N,) index into ``agents``
    agents: list

    def positions(self, agent=None):
        return np.array([p.translation for f, p in zip(self.frames, self.poses)
                         if agent is None or f.agent == agent])

    def poses_of(self, agent):
        return [p for f, p in zip(self.frames, self.poses) if f.agent == agent]


def apply_merge(tracks, transforms, include_clouds=True):
    """Carry each agent's poses and clouds into a common frame.

    tracks: list of AgentTrack; transforms: agent world -> merged frame per track.
    For a source/target pair pass ``[S(sigma*), target_world_transform]``.
    """
    frames, poses, pts, owner = [], [], [], []
    agents = [t.agent_id for t in tracks]
    for a, (track, W) in enumerate(zip(tracks, transforms)):
        for kf in track.keyframes:
            pose = compose(W, kf.pose)
            frames.append(kf.frame)
            poses.append(pose)
            if include_clouds and len(kf.cloud):
                pts.append(pose.apply(kf.cloud))
                owner.append(np.full(len(kf.cloud), a))
    points = np.concatenate(pts) if pts else np.zeros((0, 3))
    point_agent = np.concatenate(owner) if owner else np.zeros(0, int)
    return MergedMap(frames, poses, points, point_agent, agents)
