"""Single-loop-closure merge of two agents."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientMatches, SessionTimeout
from .geometry import SE3, Sim3, compose, inverse, se3_log, so3_exp, umeyama
from .loops import LoopParams, PairMatcher, find_trigger, loop_report
from .registration import (IcpParams, align_chain, apply_merge, final_transform,
                           icp_information_matrix, icp_point_to_point, world_merge_transform)
from .scale import ScaleParams, estimate_match_scale, select_with_fallback, volume_ratio


@dataclass(frozen=True)
class PipelineParams:
    loop: LoopParams = field(default_factory=LoopParams)
    scale: ScaleParams = field(default_factory=ScaleParams)
    icp: IcpParams = field(default_factory=IcpParams)
    cloud_noise: float = 0.01    # per-coordinate std of cloud points, for cov(z)
    min_cloud_noise: float = 1e-3


@dataclass
class PairMergeResult:
    source: str
    target: str
    loop: object
    verdict: object
    triple: object
    estimates: list
    selection: object
    chain: object
    icp: object
    sigma_scaling: Sim3      # source world -> merged frame
    final: Sim3              # target camera j -> scaled source camera i
    target_transform: Sim3   # target world -> merged frame
    chosen_pair: tuple
    timings: dict = field(default_factory=dict)

    @property
    def sigma_star(self):
        return self.selection.sigma_star

    @property
    def pipeline_seconds(self):
        return sum(self.timings.values())

    def loop_report(self):
        return loop_report(self.triple, self.verdict)

    def scale_report(self):
        return self.selection.report(self.estimates)

    def relative(self):
        """Target world -> source world (unscaled)."""
        return compose(Sim3.pure_scale(1.0 / self.sigma_star), self.target_transform)

    def transforms(self):
        return [self.sigma_scaling, self.target_transform]

    def merged(self, source, target, include_clouds=True):
        return apply_merge([source, target], self.transforms(), include_clouds)


def initial_guess(match, pose_s, pose_t, sigma):
    """Similarity taking target landmarks (via pose_s^-1 pose_t) onto sigma-scaled source landmarks."""
    carried = compose(inverse(pose_s), pose_t).apply(match.target_obs)
    return umeyama(carried, sigma * match.source_obs, with_scale=True)


def estimate_triple(source, target, triple, params):
    ests = []
    for z, m in zip((-1, 0, 1), triple.matches):
        i, j = m.pair
        ests.append(estimate_match_scale(m, source[i], target[j], source[i].pose, target[j].pose,
                                         z, params.scale))
    return ests


def center_volume_ratio(source, target, triple, sigma):
    i, j = triple.center.pair
    a = Sim3.pure_scale(sigma).apply(source[i].pose.apply(source[i].cloud))
    b = target[j].pose.apply(target[j].cloud)
    return volume_ratio(a, b)


def register_pair(source, target, pair, sigma, ig, params, run_icp=True):
    i, j = pair
    star, plus, chain = align_chain(source[i].cloud, target[j].cloud, source[i].pose,
                                    target[j].pose, sigma, ig)
    icp = None
    if run_icp:
        icp = icp_point_to_point(star, plus, params.icp)
        chain = chain.with_icp(icp.transform)
    return chain, icp, star, plus


def merge_pair(source, target, params=None, matcher=None, trigger=None):
    """Detect -> scale -> register for one agent pair.

    Raises SessionTimeout when the tracks never produce a usable loop closure.
    """
    params = params or PipelineParams()
    timings = {}
    t0 = time.perf_counter()
    m = matcher or PairMatcher(source, target, params.loop)
    hit = trigger or find_trigger(source, target, matcher=m)
    if hit is None:
        raise SessionTimeout(f"no loop closure between {source.agent_id} and {target.agent_id}")
    lc, verdict, triple = hit
    t1 = time.perf_counter()
    timings["detect"] = t1 - t0

    ests = estimate_triple(source, target, triple, params)
    r_vol = center_volume_ratio(source, target, triple, ests[1].sigma)
    sel = select_with_fallback(ests, r_vol)
    t2 = time.perf_counter()
    timings["scale"] = t2 - t1

    pair = triple.pairs[sel.chosen_z + 1]
    chain, icp, _, _ = register_pair(source, target, pair, sel.sigma_star, sel.initial_guess, params)
    M = final_transform(chain)
    W = world_merge_transform(chain)
    timings["registration"] = time.perf_counter() - t2
    return PairMergeResult(source.agent_id, target.agent_id, lc, verdict, triple, ests, sel,
                           chain, icp, chain.scaling, M, W, pair, timings)


def pcr_pro_direct(source, target, triple, estimates, params=None):
    """Baseline: the center match's own scale and initial guess, no fine tuning, no ICP."""
    params = params or PipelineParams()
    center = estimates[1]
    chain, _, _, _ = register_pair(source, target, triple.center.pair, center.sigma,
                                   center.initial_guess, params, run_icp=False)
    return chain.scaling, world_merge_transform(chain)


# ----------------------------------------------------------------------------
# edges for the pose-graph baselines
# ----------------------------------------------------------------------------

@dataclass
class EdgeEstimate:
    pair: tuple
    measurement: Sim3     # target camera -> scaled source camera, rigid
    information: np.ndarray
    gamma: int


def _edge_information(icp, star, plus, K, params):
    """Information of the edge residual log(Z0^-1 Z) from the ICP information.

    The ICP chart perturbs (R, t) -> (exp(phi) R, t + rho); the edge chart is a
    right perturbation of Z = T_icp K.  Map between them with a numerical Jacobian.
    """
    P = plus[icp.moving_idx]
    Q = star[icp.fixed_idx]
    T0 = icp.transform
    eps = max(params.cloud_noise, params.min_cloud_noise)
    info_x = icp_information_matrix(P, Q, T0, eps**2)
    Z0 = compose(T0, K).without_scale()
    Z0_inv = inverse(Z0)

    def e(x):
        Tx = SE3(so3_exp(x[3:]) @ T0.rotation, T0.translation + x[:3])
        return se3_log(compose(Z0_inv, compose(Tx, K).without_scale()))

    h = 1e-6
    A = np.zeros((6, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = h
        A[:, k] = (e(d) - e(-d)) / (2 * h)
    Ainv = np.linalg.inv(A)
    info = Ainv.T @ info_x @ Ainv
    return 0.5 * (info + info.T)


def pair_edge(source, target, pair, sigma, params=None, matcher=None):
    params = params or PipelineParams()
    m = matcher or PairMatcher(source, target, params.loop)
    i, j = pair
    lc = m.match(i, j)
    if lc.gamma < max(params.loop.min_gamma, 3):
        raise InsufficientMatches(f"pair {pair} has gamma {lc.gamma}")
    ig = initial_guess(lc, source[i].pose, target[j].pose, sigma)
    chain, icp, star, plus = register_pair(source, target, pair, sigma, ig, params)
    M = final_transform(chain)
    K = compose(chain.initial_guess, compose(chain.world_to_source, chain.world_lift_target))
    info = _edge_information(icp, star, plus, K, params)
    return EdgeEstimate(pair, M.without_scale(), info, lc.gamma)
