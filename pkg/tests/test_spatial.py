import numpy as np
from hypothesis import given, strategies as st

from diffnea.spatial import (SpatialInertia, SpatialTransform, SpatialVector, ad_matrix, adjoint, adjoint_inverse,
                             co_adjoint_ad, rot_x, rot_y, rot_z, rpy_from_matrix, rpy_matrix, skew, transform_from_rpy)

vec3 = st.lists(st.floats(-5, 5), min_size=3, max_size=3).map(np.array)


def random_transform(rng):
    return transform_from_rpy(rng.uniform(-np.pi, np.pi, 3), rng.normal(size=3))


def test_rpy_identity():
    T = transform_from_rpy(np.zeros(3), np.zeros(3))
    assert np.allclose(T.rotation, np.eye(3)) and np.allclose(T.translation, 0)


def test_rpy_yaw_maps_x_to_y():
    R = rpy_matrix(np.array([0.0, 0.0, np.pi / 2]))
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_rpy_is_product_of_elementary_rotations():
    a, b, c = 0.1, 0.2, 0.3
    T = transform_from_rpy(np.array([a, b, c]), np.array([1.0, 2.0, 3.0]))
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    Rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    Ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    Rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    assert np.allclose(T.rotation, Rz @ Ry @ Rx, atol=1e-15)
    assert np.allclose(T.translation, [1, 2, 3])


def test_rotation_is_orthonormal(rng):
    for _ in range(100):
        R = rpy_matrix(rng.uniform(-4, 4, 3))
        assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-9
        assert abs(np.linalg.det(R) - 1) < 1e-9


def test_rpy_from_matrix_round_trip(rng):
    for _ in range(50):
        a = rng.uniform([-3, -1.5, -3], [3, 1.5, 3])
        assert np.allclose(rpy_matrix(rpy_from_matrix(rpy_matrix(a))), rpy_matrix(a), atol=1e-12)


def test_adjoint_identity_and_pure_rotation():
    assert np.allclose(adjoint(SpatialTransform.identity()), np.eye(6))
    R = rot_y(0.7)
    A = adjoint(SpatialTransform(R, np.zeros(3)))
    assert np.allclose(A[:3, :3], R) and np.allclose(A[3:, 3:], R)
    assert np.allclose(A[:3, 3:], 0) and np.allclose(A[3:, :3], 0)


def test_adjoint_homomorphism(rng):
    worst = 0.0
    for _ in range(1000):
        T1, T2 = random_transform(rng), random_transform(rng)
        worst = max(worst, np.abs(adjoint(T1 @ T2) - adjoint(T1) @ adjoint(T2)).max())
    assert worst < 1e-10


def test_adjoint_inverse_and_transform_inverse(rng):
    T = random_transform(rng)
    assert np.allclose(adjoint_inverse(T), np.linalg.inv(adjoint(T)), atol=1e-12)
    I = T @ T.inverse()
    assert np.allclose(I.rotation, np.eye(3), atol=1e-12) and np.allclose(I.translation, 0, atol=1e-12)


def test_composition_associative(rng):
    A, B, C = (random_transform(rng) for _ in range(3))
    assert np.allclose(((A @ B) @ C).matrix(), (A @ (B @ C)).matrix(), atol=1e-12)


def test_adjoint_matches_homogeneous_velocity_transport(rng):
    # a rigid motion with twist [w; v] in child coordinates, seen from the parent
    T = random_transform(rng)
    v = rng.normal(size=6)
    X = np.zeros((4, 4))
    X[:3, :3], X[:3, 3] = skew(v[:3]), v[3:]
    H = T.matrix()
    Xp = H @ X @ np.linalg.inv(H)
    vp = np.concatenate([[Xp[2, 1], Xp[0, 2], Xp[1, 0]], Xp[:3, 3]])
    assert np.allclose(adjoint(T) @ v, vp, atol=1e-12)


def test_co_adjoint_zero_and_single_axis():
    assert np.allclose(co_adjoint_ad(np.zeros(6)), 0)
    A = co_adjoint_ad(np.array([0, 0, 1.0, 0, 0, 0]))
    S = skew(np.array([0, 0, 1.0]))
    assert np.allclose(A[:3, :3], S.T) and np.allclose(A[3:, 3:], S.T)
    assert np.allclose(A[:3, 3:], 0) and np.allclose(A[3:, :3], 0)


def test_co_adjoint_matches_flow_derivative(rng):
    # d/dt Ad_{exp(t v)}^T f at t = 0 equals ad_v^T f
    v, f = rng.normal(size=6), rng.normal(size=6)
    h = 1e-6

    def flow(t):
        X = np.zeros((4, 4))
        X[:3, :3], X[:3, 3] = skew(t * v[:3]), t * v[3:]
        from scipy.linalg import expm
        H = expm(X)
        return adjoint(SpatialTransform(H[:3, :3], H[:3, 3])).T @ f

    fd = (flow(h) - flow(-h)) / (2 * h)
    assert np.allclose(co_adjoint_ad(v) @ f, fd, atol=1e-8)


def test_co_adjoint_is_bilinear(rng):
    a, b, f = rng.normal(size=6), rng.normal(size=6), rng.normal(size=6)
    assert np.allclose(co_adjoint_ad(2 * a + b) @ f, 2 * co_adjoint_ad(a) @ f + co_adjoint_ad(b) @ f)
    assert np.allclose(ad_matrix(a) @ a, 0, atol=1e-12)


@given(vec3)
def test_skew_antisymmetric(a):
    S = skew(a)
    assert np.array_equal(S.T, -S)


def test_spatial_vector_algebra(rng):
    a = SpatialVector.from_array(rng.normal(size=6))
    z = SpatialVector.zero()
    assert np.allclose((a + z).array, a.array)
    assert np.allclose((2.0 * a).array, 2 * a.array)


def test_momentum_transport_is_dual(rng):
    T = random_transform(rng)
    v, l = rng.normal(size=6), rng.normal(size=6)
    vj = SpatialVector.from_array(v).transform(T).array
    lj = SpatialVector.from_array(l).co_transform(T).array
    assert np.isclose(lj @ v, l @ vj)


@given(vec3, vec3, st.floats(0, 10))
def test_spatial_inertia_symmetric(w, com, m):
    R = rot_x(w[0]) @ rot_z(w[1])
    J = R @ np.diag(np.abs(w) + 0.1) @ R.T
    M = SpatialInertia(J, m, com).matrix()
    assert np.abs(M - M.T).max() < 1e-12
