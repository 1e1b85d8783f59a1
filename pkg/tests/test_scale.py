import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mapmerge.errors import DegenerateGeometry, InsufficientMatches, NoAcceptablePair, NumericalError
from mapmerge.geometry import Sim3, so3_exp
from mapmerge.loops import PairMatcher, find_trigger
from mapmerge.scale import (INITIAL_DELTA, ScaleEstimate, estimate_match_scale,
                            eight_point_relative_pose, kalman_scale, kalman_scale_trace, optimal_scale,
                            select_with_fallback, volume_ratio)
from mapmerge.scene import ScenarioConfig, generate

from conftest import scenario


def _views(rng, n=30, baseline=1.0):
    # moderate rotation keeps the points in front of both cameras
    R = so3_exp(rng.normal(scale=0.15, size=3))
    t = rng.normal(size=3)
    t = baseline * t / np.linalg.norm(t)
    Xt = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-2, 2, n), rng.uniform(4, 8, n)])
    Xs = Xt @ R.T + t
    return R, t, Xs[:, :2] / Xs[:, 2:], Xt[:, :2] / Xt[:, 2:]


@settings(max_examples=25)
@given(st.integers(0, 10**6))
def test_eight_point_recovers_pose(seed):
    rng = np.random.default_rng(seed)
    R, t, xs, xt = _views(rng)
    T = eight_point_relative_pose(xs, xt)
    assert np.abs(T.rotation - R).max() < 1e-6
    assert np.abs(T.translation - t / np.linalg.norm(t)).max() < 1e-6


def test_eight_point_zero_baseline_is_degenerate():
    rng = np.random.default_rng(1)
    X = np.column_stack([rng.uniform(-2, 2, 20), rng.uniform(-2, 2, 20), rng.uniform(4, 8, 20)])
    x = X[:, :2] / X[:, 2:]
    with pytest.raises(DegenerateGeometry):
        eight_point_relative_pose(x, x)


def test_eight_point_needs_eight():
    rng = np.random.default_rng(2)
    _, _, xs, xt = _views(rng, n=7)
    with pytest.raises(InsufficientMatches):
        eight_point_relative_pose(xs, xt)


def test_kalman_constant_ratio():
    rng = np.random.default_rng(0)
    S = rng.normal(size=(60, 3))
    assert kalman_scale(S, 2.0 * S) == pytest.approx(2.0, abs=1e-9)
    # a diffuse prior is forgotten after enough exact observations
    for mean in (0.1, 10.0, 1e3):
        assert kalman_scale(S, 2.0 * S, prior_mean=mean) == pytest.approx(2.0, abs=1e-6)


def test_kalman_matches_sample_mean():
    rng = np.random.default_rng(3)
    S = rng.normal(size=(100, 3))
    S /= np.linalg.norm(S, axis=1, keepdims=True)
    r = 2.0 + rng.normal(scale=0.01, size=100)
    sigma = kalman_scale(S, S * r[:, None])
    assert abs(sigma - 2.0) < 0.01
    assert sigma == pytest.approx(r.mean(), abs=1e-9)


def test_kalman_single_with_diffuse_prior():
    assert kalman_scale([[1, 0, 0]], [[3, 0, 0]], prior_mean=1.0, prior_var=1e12) == pytest.approx(3.0)


def test_kalman_variance_decreases():
    rng = np.random.default_rng(4)
    S = rng.normal(size=(20, 3))
    _, var = kalman_scale_trace(S, 1.5 * S)
    assert np.all(np.diff(var) < 0)


def test_kalman_rejects_tiny_norm():
    with pytest.raises(NumericalError):
        kalman_scale([[0, 0, 0], [1, 0, 0]], [[1, 0, 0], [1, 0, 0]])


def _estimates(sigmas, gammas):
    return [ScaleEstimate(z, s, g, Sim3.identity(), Sim3(scale=float(z + 2))) for z, s, g in
            zip((-1, 0, 1), sigmas, gammas)]


def test_optimal_scale_examples():
    sel = optimal_scale(_estimates((2.50, 2.52, 7.0), (100, 90, 20)), 0.8)
    assert sel.sigma_star == pytest.approx(2.51)
    assert sel.chosen_z == -1  # larger gamma of the accepted pair
    assert optimal_scale(_estimates((2, 2, 2), (30, 10, 50)), 0.8).sigma_star == 2
    low = optimal_scale(_estimates((1.3, 2.5, 4.0), (10, 20, 30)), 0.4)
    assert low.sigma_star == 2.5 and low.branch == "center"


def test_no_acceptable_pair_and_fallback():
    est = _estimates((1.0, 7.0, 13.0), (20, 20, 20))
    with pytest.raises(NoAcceptablePair):
        optimal_scale(est, 0.9)
    sel = select_with_fallback(est, 0.9)
    assert sel.sigma_star == 7.0 and sel.branch == "fallback"


triples = st.tuples(st.floats(0.1, 12), st.floats(0.1, 12), st.floats(0.1, 12))
gammas = st.tuples(st.integers(8, 200), st.integers(8, 200), st.integers(8, 200))


@settings(max_examples=300)
@given(triples, gammas, st.floats(0.51, 1.0))
def test_selection_properties(sig, gam, r_vol):
    est = _estimates(sig, gam)
    try:
        sel = optimal_scale(est, r_vol)
    except NoAcceptablePair:
        assert all(abs(a - b) >= INITIAL_DELTA for a, b in itertools.combinations(sig, 2))
        return
    # the accepted pair satisfies the gap bound
    x, y = sel.accepted[-1]
    assert abs(sig[x + 1] - sig[y + 1]) <= INITIAL_DELTA
    # storage order does not matter
    for perm in itertools.permutations(est):
        assert optimal_scale(list(perm), r_vol).sigma_star == sel.sigma_star


@settings(max_examples=300)
@given(triples, gammas, st.floats(0.51, 1.0))
def test_refinement_is_monotone(sig, gam, r_vol):
    try:
        sel = optimal_scale(_estimates(sig, gam), r_vol)
    except NoAcceptablePair:
        return
    deltas = [abs(sig[x + 1] - sig[y + 1]) for x, y in sel.accepted]
    gs = [min(gam[x + 1], gam[y + 1]) for x, y in sel.accepted]
    assert all(a > b for a, b in zip(deltas, deltas[1:]))
    assert all(a < b for a, b in zip(gs, gs[1:]))


def test_volume_ratio():
    box = np.array([[0, 0, 0], [1, 1, 1]], float)
    assert volume_ratio(box, box) == 1.0
    assert volume_ratio(box, 2 * box) == pytest.approx(1 / 8)
    assert 0 < volume_ratio(box, 3 * box) <= 1


def test_estimate_recovers_ratio_noiseless():
    cfg = ScenarioConfig(scales=(2.5, 1.0)).noiseless()
    sc = generate("d", cfg, 5)
    a, b = sc.agents
    assert sc.true_scale_ratio("A", "B") == pytest.approx(2.5)
    _, _, triple = find_trigger(a, b)
    for z, m in zip((-1, 0, 1), triple.matches):
        i, j = m.pair
        e = estimate_match_scale(m, a[i], b[j], a[i].pose, b[j].pose, z)
        assert e.sigma == pytest.approx(2.5, rel=0.01)
        assert e.gamma == m.gamma


def test_identical_agents():
    sc = scenario("b", 0, 0.0)
    a = sc.agents[0]
    m = PairMatcher(a, a).match(7, 7)
    e = estimate_match_scale(m, a[7], a[7], a[7].pose, a[7].pose)
    assert e.sigma == pytest.approx(1.0, abs=1e-6)
    assert e.initial_guess.allclose(Sim3.identity(), atol=1e-6)


def test_noisy_estimate_is_finite():
    sc = scenario("a", 3, 1.0)
    a, b = sc.agents
    _, _, triple = find_trigger(a, b)
    i, j = triple.center.pair
    e = estimate_match_scale(triple.center, a[i], b[j], a[i].pose, b[j].pose)
    assert np.isfinite(e.sigma) and e.sigma > 0 and e.gamma >= 8
