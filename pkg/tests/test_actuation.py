import numpy as np
import pytest
from hypothesis import given, strategies as st

from diffnea import autodiff as ad
from diffnea.actuation import (KINDS, NETWORK_KINDS, PASSIVE_KINDS, ActuatorError, ActuatorModel, mlp_forward,
                               mlp_init, mlp_param_count, mlp_sizes, regularizer)


def random_actuator(kind, n, rng):
    if kind in NETWORK_KINDS:
        return ActuatorModel.network(kind, n, seed=int(rng.integers(1 << 30)))
    if kind == "viscous":
        return ActuatorModel.viscous(rng.uniform(0, 2, n))
    if kind == "stribeck":
        return ActuatorModel.stribeck(*(rng.uniform(0, 2, n) for _ in range(4)))
    return ActuatorModel.identity(n)


def test_viscous_example():
    a = ActuatorModel.viscous([0.1])
    assert np.isclose(a.apply(np.array([1.0]), np.zeros(1), np.array([2.0])), 0.8)


def test_stribeck_at_rest_passes_desired_torque():
    a = ActuatorModel.stribeck([0.3], [0.2], [4.0], [0.1])
    assert a.apply(np.array([1.5]), np.zeros(1), np.zeros(1))[0] == 1.5


def test_stribeck_formula():
    f_s, f_d, nu, mu, qd = 0.3, 0.2, 4.0, 0.1, -0.7
    a = ActuatorModel.stribeck([f_s], [f_d], [nu], [mu])
    expect = 1.0 + (f_s + f_d * np.exp(-nu * qd * qd)) - mu * qd
    assert np.isclose(a.apply(np.array([1.0]), np.zeros(1), np.array([qd]))[0], expect)


def test_stribeck_reduces_to_viscous(rng):
    mu = rng.uniform(0, 1, 3)
    s = ActuatorModel.stribeck(np.zeros(3), np.zeros(3), rng.uniform(0, 5, 3), mu)
    v = ActuatorModel.viscous(mu)
    tau, q, qd = (rng.normal(size=(20, 3)) for _ in range(3))
    assert np.allclose(s.apply(tau, q, qd), v.apply(tau, q, qd))


def test_negative_coefficients_rejected():
    with pytest.raises(ActuatorError):
        ActuatorModel.viscous([-0.1])
    with pytest.raises(ActuatorError):
        ActuatorModel.stribeck([0.1], [-0.1], [1.0], [0.1])
    with pytest.raises(ActuatorError):
        ActuatorModel("magic", 1)


def test_coefficients_round_trip():
    a = ActuatorModel.stribeck([0.1, 0.2], [0.3, 0.4], [5.0, 6.0], [0.7, 0.8])
    c = a.coefficients()
    assert np.allclose(c["f_s"], [0.1, 0.2]) and np.allclose(c["nu_s"], [5, 6]) and np.allclose(c["mu_v"], [0.7, 0.8])


@pytest.mark.parametrize("kind", PASSIVE_KINDS)
def test_passivity(kind, rng):
    for _ in range(20):
        a = random_actuator(kind, 2, rng)
        tau = rng.normal(scale=5, size=(500, 2))
        q, qd = rng.normal(scale=3, size=(500, 2)), rng.normal(scale=3, size=(500, 2))
        qd[::7, 0] = 0.0
        power = np.sum((a.apply(tau, q, qd) - tau) * qd, -1)
        assert power.max() <= 1e-12


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), st.integers(0, 2**16))
def test_nn_friction_passive_property(qd, seed):
    a = ActuatorModel.network("nn-friction", 3, seed=seed)
    qd = np.array(qd)
    assert np.sum(a.friction(np.ones(3), qd) * qd) <= 1e-12


def test_mlp_zero_weights_and_identity_layer():
    sizes = mlp_sizes(3, (), 3)
    x = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(mlp_forward(np.zeros(mlp_param_count(sizes)), x, sizes), np.zeros(3))
    psi = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    assert np.array_equal(mlp_forward(psi, x, sizes), x)
    with pytest.raises(ActuatorError):
        mlp_forward(psi, np.zeros(2), sizes)


def test_mlp_gradient(rng):
    sizes = mlp_sizes(4, (8, 8), 2)
    psi = mlp_init(sizes, rng, out_scale=1.0)
    x = rng.normal(size=(5, 4))
    assert ad.check_gradient(lambda p: ad.sum(mlp_forward(p, x, sizes) ** 2), psi) < 1e-5
    assert ad.check_gradient(lambda z: ad.sum(mlp_forward(psi, z, sizes) ** 2), x) < 1e-5


@pytest.mark.parametrize("kind", KINDS)
def test_actuator_gradients(kind, rng):
    a = random_actuator(kind, 2, rng)
    tau, q, qd = (rng.normal(size=(4, 2)) for _ in range(3))
    qd += np.sign(qd) * 0.1  # stay off the sign kink
    if a.n_params:
        f = lambda p: ad.sum(a.with_params(p).apply(tau, q, qd) ** 2)
        assert ad.check_gradient(f, np.asarray(a.params) + rng.normal(scale=0.05, size=a.n_params)) < 1e-4
    g = lambda x: ad.sum(a.apply(tau, x[:, :2], x[:, 2:]) ** 2)
    assert ad.check_gradient(g, np.concatenate([q, qd], 1)) < 1e-4


def test_additive_kinds_invert(rng):
    for kind in ("identity", "viscous", "stribeck", "nn-friction", "nn-residual"):
        a = random_actuator(kind, 2, rng)
        tau, q, qd = (rng.normal(size=(6, 2)) for _ in range(3))
        assert np.allclose(a.desired_from_applied(a.apply(tau, q, qd), q, qd), tau)


def test_regularizer_only_for_networks(rng):
    tau, q, qd = (rng.normal(size=(6, 2)) for _ in range(3))
    assert regularizer(ActuatorModel.viscous([1.0, 1.0]), tau, q, qd) == 0.0
    a = ActuatorModel.network("nn-residual", 2, seed=1)
    d = a.apply(tau, q, qd) - tau
    assert np.isclose(regularizer(a, tau, q, qd), np.sum(d * d))


def test_dimension_mismatch():
    with pytest.raises(ActuatorError):
        ActuatorModel.viscous([0.1, 0.2]).apply(np.zeros(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ActuatorError):
        ActuatorModel("viscous", 2, np.zeros(3))


def test_serialization_round_trip(rng):
    for kind in KINDS:
        a = random_actuator(kind, 2, rng)
        b = ActuatorModel.from_dict(a.to_dict())
        assert b.kind == a.kind and np.array_equal(np.asarray(b.params), np.asarray(a.params))
