import numpy as np
import pytest

from diffnea import autodiff as ad
from diffnea.dynamics import DegenerateInertiaError, DimensionError, aba, rnea, system_energy, total_energy
from diffnea.integrate import rollout
from diffnea.model import JointSpec, Link, LinkParams, RobotModel
from diffnea.systems import REGISTRY, get_system

from oracles import cartpole_textbook, lagrangian_inverse_dynamics


def random_states(system, n, rng):
    lo, hi = system.q_range.T
    q = rng.uniform(lo, hi, size=(n, system.n_joints))
    qd = rng.uniform(*system.qd_range.T, size=(n, system.n_joints))
    qdd = rng.normal(scale=5.0, size=(n, system.n_joints))
    return q, qd, qdd


def test_pendulum_equilibrium_and_quarter_turn():
    m = get_system("pendulum").model
    assert np.allclose(rnea(m, np.zeros(1), np.zeros(1), np.zeros(1)), 0, atol=1e-14)
    assert np.allclose(rnea(m, np.array([np.pi / 2]), np.zeros(1), np.zeros(1)), 9.81, atol=1e-12)
    assert np.allclose(aba(m, np.array([np.pi / 2]), np.zeros(1), np.zeros(1)), -9.81, atol=1e-12)


def test_pendulum_matches_analytic(rng):
    m = get_system("pendulum").model
    q = rng.uniform(-np.pi, np.pi, (50, 1))
    assert np.allclose(aba(m, q, np.zeros_like(q), np.zeros_like(q)), -9.81 * np.sin(q), atol=1e-12)


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_rnea_aba_round_trip(name, rng):
    system = get_system(name)
    q, qd, qdd = random_states(system, 1000, rng)
    back = aba(system.model, q, qd, rnea(system.model, q, qd, qdd))
    assert np.max(np.abs(back - qdd) / (np.abs(qdd) + 1.0)) < 1e-9


def test_double_pendulum_matches_lagrangian(rng):
    system = get_system("double_pendulum")
    tau_ref = lagrangian_inverse_dynamics(system.model)
    q, qd, qdd = random_states(system, 100, rng)
    diff = max(np.abs(rnea(system.model, a, b, c) - tau_ref(a, b, c)).max() for a, b, c in zip(q, qd, qdd))
    assert diff < 1e-9


@pytest.mark.parametrize("name", ["cartpole", "furuta"])
def test_other_systems_match_lagrangian(name, rng):
    system = get_system(name)
    tau_ref = lagrangian_inverse_dynamics(system.model)
    q, qd, qdd = random_states(system, 30, rng)
    for a, b, c in zip(q, qd, qdd):
        assert np.allclose(rnea(system.model, a, b, c), tau_ref(a, b, c), atol=1e-9)


def test_cartpole_textbook(rng):
    system = get_system("cartpole")
    ref = cartpole_textbook(system)
    worst = 0.0
    for _ in range(200):
        q, qd = rng.normal(size=2), rng.normal(size=2)
        F = np.array([rng.normal(scale=5), 0.0])
        worst = max(worst, np.abs(aba(system.model, q, qd, F) - ref(q, qd, F)).max())
    assert worst < 1e-8


def test_rnea_is_affine_in_acceleration(rng):
    m = get_system("furuta").model
    q, qd = rng.normal(size=2), rng.normal(size=2)
    a, b = rng.normal(size=2), rng.normal(size=2)
    t0 = rnea(m, q, qd, np.zeros(2))
    lin = lambda x: rnea(m, q, qd, x) - t0
    assert np.allclose(lin(2 * a + 3 * b), 2 * lin(a) + 3 * lin(b), atol=1e-12)


def test_batched_equals_single(rng):
    system = get_system("double_pendulum")
    q, qd, qdd = random_states(system, 5, rng)
    batch = rnea(system.model, q, qd, qdd)
    for k in range(5):
        assert np.allclose(batch[k], rnea(system.model, q[k], qd[k], qdd[k]), atol=1e-12)


def test_dimension_mismatch():
    m = get_system("cartpole").model
    with pytest.raises(DimensionError):
        rnea(m, np.zeros(3), np.zeros(2), np.zeros(2))


def test_degenerate_inertia_names_link():
    m = RobotModel((Link("ghost", -1, JointSpec(), LinkParams()),))
    with pytest.raises(DegenerateInertiaError, match="ghost"):
        aba(m, np.zeros(1), np.zeros(1), np.zeros(1))


def test_energy_examples():
    m = get_system("pendulum").model
    k, p = system_energy(m, np.zeros(1), np.zeros(1))
    assert k == 0.0 and np.isclose(p, -9.81)
    k1, _ = system_energy(m, np.array([0.3]), np.array([1.5]))
    k2, _ = system_energy(m, np.array([0.3]), np.array([3.0]))
    assert np.isclose(k2, 4 * k1)
    assert np.isclose(k1, 0.5 * 1.5**2)


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_energy_conservation(name):
    system = get_system(name)
    n = system.n_joints
    x0 = np.zeros(2 * n)
    x0[system.pendulum_joint] = np.pi / 2
    traj = rollout(system.model, x0, np.zeros((2500, n)), 1.0 / 250.0)
    E = np.array([total_energy(system.model, a, b) for a, b in zip(traj.q, traj.qd)])
    k0, p0 = system_energy(system.model, np.zeros(n), np.zeros(n))
    scale = abs(E[0] - (k0 + p0))
    assert np.max(np.abs(E - E[0])) / scale < 1e-3


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_gradients_wrt_virtual_parameters(name, rng):
    system = get_system(name)
    model = system.model.with_variant("nokin")
    theta0 = model.parameter_vector()
    q, qd, qdd = random_states(system, 3, rng)
    w = rng.normal(size=(3, system.n_joints))

    def inv(theta):
        return ad.sum(rnea(model.with_parameters(theta), q, qd, qdd) * w)

    def fwd(theta):
        return ad.sum(aba(model.with_parameters(theta), q, qd, qdd) * w)

    theta = theta0 + rng.normal(scale=1e-2, size=theta0.shape)
    # accelerations reach O(100) here, so h=1e-5 keeps the central-difference
    # roundoff below the tolerance on coordinates with small gradients
    assert ad.check_gradient(inv, theta, h=1e-5) < 1e-4
    assert ad.check_gradient(fwd, theta, h=1e-5) < 1e-4
