"""Relative scale between two monocular maps from a triple of adjacent matches."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateGeometry, InsufficientMatches, NoAcceptablePair, NumericalError
from .geometry import SE3, Sim3, compose, inverse, project_to_rotation, skew, umeyama

INITIAL_DELTA = 5.0
LOW_OVERLAP = 0.5
Z_OFFSETS = (-1, 0, 1)


@dataclass(frozen=True)
class ScaleParams:
    process_var: float = 0.0
    meas_var: float = 0.05**2
    condition_limit: float = 1e8
    pure_rotation_tol: float = 1e-3  # rad, mean bearing residual accepted as zero baseline


@dataclass
class ScaleEstimate:
    z_offset: int
    sigma: float
    gamma: int
    relative_cam: Sim3     # target camera -> source camera, unit-norm translation
    initial_guess: Sim3    # see registration.align_chain for the frame it acts in
    pair: tuple = (0, 0)


@dataclass
class ScaleSelection:
    sigma_star: float
    initial_guess: Sim3
    chosen_z: int
    branch: str            # "refine" or "center"
    delta_star: float
    gamma_star: int
    r_vol: float
    accepted: list = field(default_factory=list)   # (x, y) pairs in acceptance order

    def __iter__(self):
        return iter((self.sigma_star, self.initial_guess))

    def report(self, estimates):
        return {
            "sigma_z": {str(e.z_offset): e.sigma for e in estimates},
            "gamma_z": {str(e.z_offset): e.gamma for e in estimates},
            "r_vol": self.r_vol,
            "branch": self.branch,
            "sigma_star": self.sigma_star,
            "delta_star": self.delta_star,
            "gamma_star": self.gamma_star,
            "chosen_z": self.chosen_z,
        }


# ----------------------------------------------------------------------------
# eight-point
# ----------------------------------------------------------------------------

def _hartley(x):
    c = x.mean(0)
    d = np.sqrt(((x - c) ** 2).sum(1)).mean()
    s = np.sqrt(2) / d if d > 0 else 1.0
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])
    xh = np.column_stack([x, np.ones(len(x))]) @ T.T
    return xh, T


def _triangulate_depths(R, t, xs, xt):
    """Depths (lambda_s, lambda_t) with lambda_s xs = R lambda_t xt + t, per point."""
    Rx = xt @ R.T
    out = np.empty((len(xs), 2))
    for k in range(len(xs)):
        A = np.column_stack([xs[k], -Rx[k]])
        out[k] = np.linalg.lstsq(A, t, rcond=None)[0]
    return out


def essential_matrix(xs, xt, condition_limit=1e8):
    """Normalized eight-point estimate of E with xs^T E xt = 0 (xs, xt: (N, 2))."""
    xs = np.asarray(xs, dtype=float)
    xt = np.asarray(xt, dtype=float)
    if len(xs) < 8 or len(xs) != len(xt):
        raise InsufficientMatches(f"eight-point needs >= 8 correspondences, got {len(xs)}")
    hs, Ts = _hartley(xs)
    ht, Tt = _hartley(xt)
    A = np.einsum("ni,nj->nij", hs, ht).reshape(-1, 9)
    _, S, Vt = np.linalg.svd(A)
    if S[7] <= S[0] / condition_limit:
        raise DegenerateGeometry(f"design matrix rank deficient (cond {S[0] / max(S[7], 1e-300):.3g})")
    En = Vt[-1].reshape(3, 3)
    E = Ts.T @ En @ Tt
    U, _, Vt = np.linalg.svd(E)
    E = U @ np.diag([1.0, 1.0, 0.0]) @ Vt
    return E / np.linalg.norm(E)


def eight_point_relative_pose(xs, xt, condition_limit=1e8):
    """Target-camera -> source-camera rigid transform from normalized image points.

    xs, xt: (N, 2) normalized coordinates (x/z, y/z) of the same points seen
    from the source and target cameras.  The translation is unit norm.
    """
    xs = np.asarray(xs, dtype=float)
    xt = np.asarray(xt, dtype=float)
    E = essential_matrix(xs, xt, condition_limit)
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    hs = np.column_stack([xs, np.ones(len(xs))])
    ht = np.column_stack([xt, np.ones(len(xt))])
    best, best_count = None, -1
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for t in (U[:, 2], -U[:, 2]):
            lam = _triangulate_depths(R, t, hs, ht)
            count = int(np.sum((lam[:, 0] > 0) & (lam[:, 1] > 0)))
            if count > best_count:
                best, best_count = (R, t), count
    R, t = best
    return SE3(project_to_rotation(R), t / np.linalg.norm(t))


def _pure_rotation(bs, bt):
    """Rotation with bs ~ R bt for unit bearings; returns (R, mean angular residual)."""
    H = bs.T @ bt
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    cos = np.clip(np.sum(bs * (bt @ R.T), axis=1), -1, 1)
    return R, float(np.mean(np.arccos(cos)))


# ----------------------------------------------------------------------------
# Kalman filtered scale
# ----------------------------------------------------------------------------

def kalman_scale_trace(source, target, process_var=0.0, meas_var=0.05**2,
                       prior_mean=None, prior_var=None):
    """Scalar filter over depth ratios |target_k| / |source_k|.

    Without a prior the state is initialised from the first measurement.
    Returns (means, variances), one entry per processed measurement.
    """
    S = np.asarray(source, dtype=float).reshape(-1, 3)
    T = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(S) == 0 or len(S) != len(T):
        raise ValueError("need matching, non-empty correspondence lists")
    ns = np.linalg.norm(S, axis=1)
    if np.any(ns < 1e-12):
        raise NumericalError("source vector norm below 1e-12")
    ratios = np.linalg.norm(T, axis=1) / ns
    meas_var = np.broadcast_to(np.asarray(meas_var, dtype=float), ratios.shape)
    if prior_mean is None:
        x, P = ratios[0], meas_var[0]
        start = 1
    else:
        x, P = float(prior_mean), float(prior_var if prior_var is not None else 1e6)
        start = 0
    means, variances = [x] if start else [], [P] if start else []
    for r, R in zip(ratios[start:], meas_var[start:]):
        P = P + process_var
        K = P / (P + R)
        x = x + K * (r - x)
        P = (1 - K) * P
        means.append(x)
        variances.append(P)
    return np.array(means), np.array(variances)


def kalman_scale(source, target, process_var=0.0, meas_var=0.05**2, prior_mean=None, prior_var=None):
    means, _ = kalman_scale_trace(source, target, process_var, meas_var, prior_mean, prior_var)
    return float(means[-1])


# ----------------------------------------------------------------------------
# per-match estimate and sigma* selection
# ----------------------------------------------------------------------------

def relative_camera(match, params=None):
    params = params or ScaleParams()
    so, to = match.source_obs, match.target_obs
    xs = so[:, :2] / so[:, 2:3]
    xt = to[:, :2] / to[:, 2:3]
    try:
        return eight_point_relative_pose(xs, xt, params.condition_limit)
    except DegenerateGeometry:
        bs = so / np.linalg.norm(so, axis=1, keepdims=True)
        bt = to / np.linalg.norm(to, axis=1, keepdims=True)
        R, resid = _pure_rotation(bs, bt)
        if resid > params.pure_rotation_tol:
            raise
        return SE3(R, np.zeros(3))


def estimate_match_scale(match, kf_s, kf_t, pose_s, pose_t, z_offset=0, params=None):
    """sigma_z, the relative camera pose and the initial-guess transform for one match.

    sigma is the factor that brings source-map lengths to target-map lengths.
    The initial guess maps target landmarks, carried through
    target camera -> target world -> source camera (``pose_s^-1 pose_t``),
    onto the sigma-scaled source landmarks.
    """
    params = params or ScaleParams()
    if match.gamma < 8:
        raise InsufficientMatches(f"gamma {match.gamma} < 8")
    rel = relative_camera(match, params)
    so, to = match.source_obs, match.target_obs
    # centroid-relative vectors make the ratio independent of the camera centres
    src = (so - so.mean(0)) @ rel.rotation      # rotated into the target camera axes
    tgt = to - to.mean(0)
    sigma = kalman_scale(src, tgt, params.process_var, params.meas_var)
    if not np.isfinite(sigma) or sigma <= 0:
        raise NumericalError(f"non-positive scale estimate {sigma}")
    carried = compose(inverse(pose_s), pose_t).apply(to)
    ig = umeyama(carried, sigma * so, with_scale=True)
    return ScaleEstimate(z_offset, sigma, match.gamma, rel, ig, match.pair)


def volume_ratio(cloud_a, cloud_b):
    """Smaller over larger axis-aligned bounding-box volume."""
    def vol(c):
        c = np.asarray(c).reshape(-1, 3)
        if len(c) == 0:
            return 0.0
        return float(np.prod(c.max(0) - c.min(0)))
    va, vb = vol(cloud_a), vol(cloud_b)
    hi = max(va, vb)
    return min(va, vb) / hi if hi > 0 else 0.0


def _pair_order():
    # x outer, y inner, both over -1..1; the second visit of a pair can never
    # be accepted (delta* <= delta after the first), so visit each once
    seen = []
    for x in Z_OFFSETS:
        for y in Z_OFFSETS:
            if x != y and (y, x) not in seen:
                seen.append((x, y))
    return seen


def optimal_scale(estimates, r_vol):
    by_z = {e.z_offset: e for e in estimates}
    if len(estimates) != 3 or set(by_z) != set(Z_OFFSETS):
        raise ValueError("need exactly three estimates with offsets -1, 0, 1")
    center = by_z[0]
    if r_vol <= LOW_OVERLAP:
        return ScaleSelection(center.sigma, center.initial_guess, 0, "center",
                              INITIAL_DELTA, center.gamma, r_vol)
    delta_star, gamma_star, sigma_star = INITIAL_DELTA, 0, None
    accepted = []
    for x, y in _pair_order():
        ex, ey = by_z[x], by_z[y]
        delta = abs(ex.sigma - ey.sigma)
        gamma_xy = min(ex.gamma, ey.gamma)
        if gamma_star < gamma_xy and delta_star > delta and delta_star != 0:
            sigma_star = (ex.sigma + ey.sigma) / 2
            delta_star = delta
            gamma_star = gamma_xy
            accepted.append((x, y))
    if sigma_star is None:
        raise NoAcceptablePair(f"no pair within delta* = {INITIAL_DELTA}")
    x, y = accepted[-1]
    ex, ey = by_z[x], by_z[y]
    if ex.gamma != ey.gamma:
        chosen = ex if ex.gamma > ey.gamma else ey
    else:
        chosen = ex if x == 0 or (y != 0 and abs(x) <= abs(y)) else ey
    return ScaleSelection(sigma_star, chosen.initial_guess, chosen.z_offset, "refine",
                          delta_star, gamma_star, r_vol, accepted)


def select_with_fallback(estimates, r_vol):
    """optimal_scale, falling back to the center match when no pair is acceptable."""
    try:
        return optimal_scale(estimates, r_vol)
    except NoAcceptablePair:
        center = next(e for e in estimates if e.z_offset == 0)
        return ScaleSelection(center.sigma, center.initial_guess, 0, "fallback",
                              INITIAL_DELTA, center.gamma, r_vol)
