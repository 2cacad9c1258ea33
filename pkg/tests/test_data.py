import numpy as np
import pytest

from diffnea.constraint import CupMotion, StringParams, simulate_ball
from diffnea.data import (BALL_FIELDS, DataError, TrajectoryDataset, differentiate_zero_phase, gen_sim_trajectory,
                          gen_uniform, load_dataset, load_trajectory, lowpass, min_length, save_dataset,
                          save_trajectory)
from diffnea.systems import energy_controller, get_system

DT = 1.0 / 250.0


def test_uniform_empty_and_seeded():
    s = get_system("cartpole")
    assert len(gen_uniform(s, 0, seed=1)) == 0
    a, b = gen_uniform(s, 50, seed=7), gen_uniform(s, 50, seed=7)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.qdd, b.qdd)
    assert a.dt is None and a.provenance == "uniform"


def test_uniform_pendulum_satisfies_ode():
    ds = gen_uniform(get_system("pendulum"), 500, seed=3)
    residual = ds.qdd - (ds.tau - 9.81 * np.sin(ds.q))
    assert np.abs(residual).max() < 1e-12


def test_uniform_rejects_infinite_ranges():
    s = get_system("pendulum")
    with pytest.raises(DataError):
        gen_uniform(s, 5, ranges=(np.array([[-np.inf, 0.0]]), s.qd_range, s.tau_range))


def test_dataset_validation():
    with pytest.raises(DataError):
        TrajectoryDataset(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((3, 1)), np.zeros((3, 2)))
    with pytest.raises(DataError):
        TrajectoryDataset(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)), "uniform", 0.01)
    with pytest.raises(DataError):
        TrajectoryDataset(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)), "lab")


def test_sim_trajectory_pipeline_self_consistency():
    ds = gen_sim_trajectory(get_system("pendulum"), 10.0, seed=0, actuator="identity", state_noise=0.0,
                            action_noise=0.0)
    n = len(ds)
    # the saturated swing-up transient sits in the first seconds
    mid = slice(n // 4, 3 * n // 4)
    assert np.abs(ds.qdd[mid] - ds.meta["qdd_sim"][mid]).max() < 1e-3
    assert not ds.meta["diverged"]
    assert ds.segments == [(0, n)]


def test_sim_trajectory_empty():
    ds = gen_sim_trajectory(get_system("pendulum"), 0.0, state_noise=0.0, action_noise=0.0)
    assert len(ds) == 0
    with pytest.raises(DataError):
        gen_sim_trajectory(get_system("pendulum"), 1.0, dt=0.0)


def test_sim_trajectory_is_seeded():
    s = get_system("cartpole")
    a = gen_sim_trajectory(s, 2.0, seed=4, actuator="stribeck")
    b = gen_sim_trajectory(s, 2.0, seed=4, actuator="stribeck")
    c = gen_sim_trajectory(s, 2.0, seed=5, actuator="stribeck")
    assert np.array_equal(a.q, b.q) and not np.array_equal(a.q, c.q)


def test_energy_controller_pumps_pendulum_monotonically():
    s = get_system("pendulum")
    ds = gen_sim_trajectory(s, 10.0, actuator="identity", state_noise=0.0, action_noise=0.0, differentiate=False)
    E = s.pendulum_energy(ds.q, ds.qd)
    target = 0.9 * s.target_energy
    stop = int(np.argmax(E >= 0.95 * target))
    assert stop > 0
    assert np.diff(E[:stop]).min() > -1e-12
    assert abs(E[-1] - target) / target < 1e-6


@pytest.mark.parametrize("name", ["cartpole", "furuta"])
def test_energy_controller_underactuated(name):
    s = get_system(name)
    ds = gen_sim_trajectory(s, 20.0, actuator="identity", state_noise=0.0, action_noise=0.0, differentiate=False)
    E = s.pendulum_energy(ds.q, ds.qd) / s.target_energy
    assert E[-1000:].min() > 0.8 and E.max() < 1.0
    assert np.abs(ds.q[:, s.actuated[0]]).max() < 2.5


def test_differentiate_constant_and_ramp():
    t = np.arange(500) * DT
    qd, qdd = differentiate_zero_phase(np.full((500, 1), 0.7), DT)
    assert np.abs(qd).max() < 1e-9 and np.abs(qdd).max() < 1e-6
    qd, qdd = differentiate_zero_phase((2.0 * t + 1.0)[:, None], DT)
    assert np.abs(qd[50:-50] - 2.0).max() < 1e-6
    assert np.abs(qdd[50:-50]).max() < 1e-4


def test_differentiate_sine():
    t = np.arange(1000) * DT
    qd, _ = differentiate_zero_phase(np.sin(2 * np.pi * t)[:, None], DT, cutoff=25.0)
    inner = slice(100, 900)
    assert np.abs(qd[inner, 0] - 2 * np.pi * np.cos(2 * np.pi * t[inner])).max() < 1e-3 * 2 * np.pi


def test_zero_phase_lag():
    t = np.arange(2000) * DT
    noisy = np.sin(2 * np.pi * 1.3 * t) + 0.05 * np.random.default_rng(0).normal(size=t.size)
    clean = np.sin(2 * np.pi * 1.3 * t)
    y = lowpass(noisy[:, None], DT)[:, 0]
    lags = np.arange(-20, 21)
    corr = [np.dot(y[100 + k:1900 + k], clean[100:1900]) for k in lags]
    assert lags[int(np.argmax(corr))] == 0


def test_too_short_signal():
    with pytest.raises(DataError):
        differentiate_zero_phase(np.zeros((min_length() - 1, 1)), DT)


def test_trajectory_round_trip_bit_exact(tmp_path):
    ds = gen_sim_trajectory(get_system("furuta"), 1.0, seed=2, actuator="stribeck")
    path = save_dataset(tmp_path, ds, "furuta")
    back = load_dataset(path)
    for name in ("q", "qd", "qdd", "tau"):
        assert np.array_equal(getattr(back, name), getattr(ds, name))
    assert back.dt == ds.dt and back.segments == ds.segments and back.provenance == ds.provenance


def test_uniform_round_trip(tmp_path):
    ds = gen_uniform(get_system("cartpole"), 40, seed=1)
    back = load_dataset(save_dataset(tmp_path, ds))
    assert back.dt is None and back.provenance == "uniform"
    assert np.array_equal(back.qdd, ds.qdd)


def test_ball_round_trip(tmp_path):
    d = simulate_ball(StringParams(), CupMotion(), 0.5)
    n = len(d["t"])
    ball = {k: d[k] for k in BALL_FIELDS}
    z = np.zeros((n, 1))
    ds = TrajectoryDataset(z, z, z, z, "sim-trajectory", DT, [(0, n)], ball)
    save_trajectory(tmp_path / "ball.csv", ds)
    back = load_trajectory(tmp_path / "ball.csv")
    for k in BALL_FIELDS:
        assert np.array_equal(back.ball[k], ball[k])


def test_concatenate_and_trajectories():
    s = get_system("pendulum")
    a = gen_sim_trajectory(s, 1.0, seed=0)
    b = gen_sim_trajectory(s, 1.0, seed=1)
    ds = TrajectoryDataset.concatenate([a, b])
    assert ds.segments == [(0, len(a)), (len(a), len(a) + len(b))]
    trajs = ds.trajectories()
    assert len(trajs) == 2 and np.array_equal(trajs[1].q, b.q)


def test_malformed_files(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x,y\n1,2\n")
    with pytest.raises(DataError):
        load_trajectory(p)
    with pytest.raises(DataError):
        load_dataset(str(tmp_path / "missing.json"))
    m = tmp_path / "m.json"
    m.write_text("{}")
    with pytest.raises(DataError):
        load_dataset(str(m))
