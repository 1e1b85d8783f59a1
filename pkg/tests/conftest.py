import functools

import numpy as np
import pytest

from mapmerge.scene import ScenarioConfig, generate, generate_chain


@functools.lru_cache(maxsize=None)
def scenario(state, seed=0, noise=1.0):
    return generate(state, ScenarioConfig().with_noise(noise), seed)


@functools.lru_cache(maxsize=None)
def chain_scenario(seed=0, noise=1.0):
    return generate_chain(ScenarioConfig().with_noise(noise), seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_icp_derivatives(P, Q, T0, h=1e-5):
    """Central finite differences of the ICP cost: d2J/dx2 and d2J/dzdx at x = 0.

    Independent of the analytic code path except for the cost itself.
    """
    from mapmerge.registration import icp_cost
    P = np.array(P, dtype=float)
    Q = np.array(Q, dtype=float)
    n = len(P)
    H = np.zeros((6, 6))
    e = np.eye(6) * h
    for a in range(6):
        for b in range(6):
            H[a, b] = (icp_cost(P, Q, e[a] + e[b], T0) - icp_cost(P, Q, e[a] - e[b], T0)
                       - icp_cost(P, Q, -e[a] + e[b], T0) + icp_cost(P, Q, -e[a] - e[b], T0)) / (4 * h * h)
    M = np.zeros((6, 6 * n))
    for k in range(6 * n):
        i, r = divmod(k, 6)
        which, c = divmod(r, 3)   # z ordered (P_i, Q_i)
        for sign in (1, -1):
            P2, Q2 = P.copy(), Q.copy()
            (P2 if which == 0 else Q2)[i, c] += sign * h
            for a in range(6):
                g = (icp_cost(P2, Q2, e[a], T0) - icp_cost(P2, Q2, -e[a], T0)) / (2 * h)
                M[a, k] += sign * g / (2 * h)
    return H, M


def random_registration(rng, n=20):
    from mapmerge.geometry import SE3, random_rotation
    P = rng.normal(size=(n, 3)) * [2.0, 1.0, 0.5]
    T0 = SE3(random_rotation(rng), rng.normal(size=3))
    Q = T0.apply(P) + rng.normal(scale=0.05, size=(n, 3))
    return P, Q, T0


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Call with (ok, detail); prints and records one PASS/FAIL line for the test."""
    def record(ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {request.node.name}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
