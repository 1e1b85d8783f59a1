import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mapmerge.geometry import (SE3, FrameId, Sim3, compose, inverse, is_rotation, project_to_rotation,
                               quaternion_to_rotation, random_rotation, random_sim3,
                               rotation_to_quaternion, se3_exp, se3_log, so3_exp, so3_log,
                               transform_cloud, transform_point, umeyama)

seeds = st.integers(0, 2**32 - 1)


def dense(T):
    # independent 4x4 built from the fields
    M = np.eye(4)
    M[:3, :3] = T.scale * T.rotation
    M[:3, 3] = T.translation
    return M


def test_identity_compose():
    T = random_sim3(np.random.default_rng(0))
    assert compose(Sim3.identity(), T).allclose(T)
    assert compose(T, Sim3.identity()).allclose(T)


def test_scale_multiplies():
    out = compose(Sim3.pure_scale(2), Sim3.pure_scale(3))
    assert out.allclose(Sim3.pure_scale(6))


@settings(max_examples=200)
@given(seeds)
def test_compose_matches_matrix_product(seed):
    rng = np.random.default_rng(seed)
    a, b = random_sim3(rng), random_sim3(rng)
    c = compose(a, b)
    assert np.allclose(c.matrix(), dense(a) @ dense(b), atol=1e-8)
    assert c.scale == pytest.approx(a.scale * b.scale)
    p = rng.normal(size=3)
    assert np.allclose(c.apply(p), a.apply(b.apply(p)))


def test_matrix_layout_is_literal():
    T = Sim3(so3_exp([0.1, 0.2, 0.3]), [1, 2, 3], 2.5)
    M = T.matrix()
    assert np.array_equal(M[:3, :3], 2.5 * T.rotation)
    assert np.array_equal(M[3], [0, 0, 0, 1])


def test_inverse_examples():
    assert inverse(Sim3.identity()).allclose(Sim3.identity())
    T = Sim3(np.eye(3), [1, 0, 0], 2.0)
    Ti = inverse(T)
    assert Ti.scale == 0.5
    assert np.allclose(Ti.translation, [-0.5, 0, 0])
    assert compose(T, Ti).allclose(Sim3.identity())


@given(seeds)
def test_inverse_involution(seed):
    T = random_sim3(np.random.default_rng(seed))
    assert inverse(inverse(T)).allclose(T, atol=1e-9)
    assert np.abs(compose(T, inverse(T)).matrix() - np.eye(4)).max() < 1e-9


def test_transform_point():
    assert np.allclose(transform_point(Sim3.identity(), [1, 2, 3]), [1, 2, 3])
    assert np.allclose(transform_point(Sim3.pure_scale(2), [1, 1, 1]), [2, 2, 2])
    rng = np.random.default_rng(3)
    T, p = random_sim3(rng), rng.normal(size=3)
    assert np.allclose(transform_point(T, p), (dense(T) @ np.append(p, 1))[:3])


@given(seeds)
def test_distance_scaling_and_centroid(seed):
    rng = np.random.default_rng(seed)
    T = random_sim3(rng)
    P = rng.normal(size=(20, 3))
    Q = transform_cloud(T, P)
    assert Q.shape == P.shape
    assert np.allclose(np.linalg.norm(Q[0] - Q[1]), T.scale * np.linalg.norm(P[0] - P[1]), atol=1e-8)
    assert np.allclose(Q.mean(0), transform_point(T, P.mean(0)))


def test_rotation_closure_after_long_chain():
    rng = np.random.default_rng(5)
    R = np.eye(3)
    for _ in range(100):
        R = R @ random_rotation(rng)
    R = project_to_rotation(R)
    assert is_rotation(R)
    assert np.linalg.det(R) > 1 - 1e-6


def test_immutable():
    T = Sim3.identity()
    with pytest.raises(AttributeError):
        T.scale = 2.0
    with pytest.raises(ValueError):
        T.translation[0] = 1.0


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        Sim3(scale=0.0)
    with pytest.raises(ValueError):
        FrameId("A", -1)


def test_frame_id():
    assert str(FrameId("A", 3)) == "A:3"
    assert FrameId.world("A").is_world
    assert not FrameId("A", 0).is_world


def test_row_major_roundtrip():
    T = random_sim3(np.random.default_rng(8))
    assert len(T.row_major()) == 16
    assert Sim3.from_row_major(T.row_major()).allclose(T)


@given(seeds)
def test_lie_roundtrip(seed):
    rng = np.random.default_rng(seed)
    xi = rng.normal(size=6)
    xi[3:] *= 0.9 * np.pi / max(np.linalg.norm(xi[3:]), 1e-9) * rng.uniform()
    assert np.allclose(se3_log(se3_exp(xi)), xi, atol=1e-8)


def test_so3_log_near_pi():
    phi = np.array([0.0, 0.0, np.pi - 1e-7])
    assert np.allclose(so3_exp(so3_log(so3_exp(phi))), so3_exp(phi), atol=1e-9)


def test_quaternion_roundtrip():
    R = random_rotation(np.random.default_rng(2))
    q = rotation_to_quaternion(R)
    assert q[3] >= 0
    assert np.allclose(quaternion_to_rotation(q), R)


@given(seeds)
def test_umeyama_recovers_similarity(seed):
    rng = np.random.default_rng(seed)
    T = random_sim3(rng)
    P = rng.normal(size=(30, 3))
    assert umeyama(P, T.apply(P)).allclose(T, atol=1e-7)
    R = SE3(T.rotation, T.translation)
    assert umeyama(P, R.apply(P), with_scale=False).allclose(R, atol=1e-7)
