"""Datasets: uniform sampling, simulated swing-up trajectories, offline
differentiation and the delimited-text trajectory format."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .integrate import DEFAULT_DT, Trajectory, rk4_step, state_derivative
from .systems import energy_controller

PROVENANCES = ("uniform", "sim-trajectory", "external")
BALL_FIELDS = {
    "x_b": 3, "xd_b": 3, "xdd_b": 3,
    "p_j": 3, "R_j": 9, "v_j": 3, "w_j": 3, "a_j": 3, "alpha_j": 3,
}
FILTER_ORDER = 4
DEFAULT_CUTOFF = 25.0


class DataError(ValueError):
    pass


@dataclass
class TrajectoryDataset:
    """Samples of (q, qd, qdd, tau), optionally split into ordered segments.

    ``segments`` holds (start, stop) index pairs of contiguous trajectories;
    uniform datasets have ``dt = None`` and no segments.
    """

    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    tau: np.ndarray
    provenance: str = "external"
    dt: float = None
    segments: list = field(default_factory=list)
    ball: dict = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=float) for a in (self.q, self.qd, self.qdd, self.tau)]
        arrs = [a.reshape(len(a), -1) if a.ndim != 2 else a for a in arrs]
        self.q, self.qd, self.qdd, self.tau = arrs
        if len({a.shape for a in arrs}) != 1:
            raise DataError(f"inconsistent sample shapes {[a.shape for a in arrs]}")
        if self.provenance not in PROVENANCES:
            raise DataError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "uniform" and self.dt is not None:
            raise DataError("uniform datasets carry no dt")
        self.segments = [tuple(int(v) for v in s) for s in self.segments]

    def __len__(self):
        return len(self.q)

    @property
    def n_joints(self):
        return self.q.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        ball = None if self.ball is None else {k: v[idx] for k, v in self.ball.items()}
        dt = None if self.provenance == "uniform" else self.dt
        return TrajectoryDataset(self.q[idx], self.qd[idx], self.qdd[idx], self.tau[idx],
                                 self.provenance, dt, [], ball, dict(self.meta))

    def trajectories(self):
        """Each segment as a :class:`Trajectory`."""
        out = []
        for a, b in self.segments:
            out.append(Trajectory(
                t=np.arange(b - a) * self.dt, q=self.q[a:b], qd=self.qd[a:b],
                qdd=self.qdd[a:b], tau=self.tau[a:b], dt=self.dt,
            ))
        return out

    @classmethod
    def concatenate(cls, parts, provenance=None):
        parts = list(parts)
        if not parts:
            raise DataError("nothing to concatenate")
        segs, k = [], 0
        for p in parts:
            segs += [(a + k, b + k) for a, b in p.segments]
            k += len(p)
        ball = None
        if all(p.ball is not None for p in parts):
            ball = {key: np.concatenate([p.ball[key] for p in parts]) for key in parts[0].ball}
        return cls(
            np.concatenate([p.q for p in parts]), np.concatenate([p.qd for p in parts]),
            np.concatenate([p.qdd for p in parts]), np.concatenate([p.tau for p in parts]),
            provenance or parts[0].provenance, parts[0].dt, segs, ball, dict(parts[0].meta),
        )


# -- generation ------------------------------------------------------------


def gen_uniform(system, n, seed=0, actuator="identity", ranges=None):
    """i.i.d. states and torques with accelerations from the true dynamics.

    ``ranges`` may override the system's (q, qd, tau) boxes, each (n_joints, 2).
    """
    q_r, qd_r, tau_r = ranges if ranges is not None else (system.q_range, system.qd_range, system.tau_range)
    for r in (q_r, qd_r, tau_r):
        if not np.all(np.isfinite(r)):
            raise DataError("sampling ranges must be finite")
    rng = np.random.default_rng(seed)
    nj = system.n_joints

    def draw(r):
        r = np.asarray(r, dtype=float)
        return rng.uniform(r[:, 0], r[:, 1], size=(n, nj))

    q, qd, tau = draw(q_r), draw(qd_r), draw(tau_r)
    truth = system.truth(actuator)
    qdd = np.asarray(truth.forward_dynamics(q, qd, tau)) if n else np.zeros((0, nj))
    return TrajectoryDataset(q, qd, qdd, tau, "uniform", None, [], None,
                             {"system": system.name, "actuator": actuator, "seed": seed})


def gen_sim_trajectory(system, duration, dt=DEFAULT_DT, seed=0, actuator="viscous", controller=None,
                       state_noise=1e-3, action_noise=1e-2, x0=None, cutoff=DEFAULT_CUTOFF,
                       differentiate=True, bound=1e6):
    """Closed-loop RK4 simulation with process and actuation noise.

    State noise perturbs the simulated velocities after every step; action
    noise is an unobserved torque disturbance on the actuated joints (the
    recorded torque is the command). With ``differentiate`` the recorded
    qd and qdd are recomputed from positions by :func:`differentiate_zero_phase`.
    """
    if dt <= 0:
        raise DataError("dt must be positive")
    rng = np.random.default_rng(seed)
    truth = system.truth(actuator)
    nj = system.n_joints
    ctrl = controller or energy_controller(system)
    f = state_derivative(truth)
    steps = int(round(duration / dt))
    meta = {"system": system.name, "actuator": actuator, "seed": seed, "duration": duration,
            "state_noise": state_noise, "action_noise": action_noise}
    if steps == 0:
        z = np.zeros((0, nj))
        return TrajectoryDataset(z, z, z, z, "sim-trajectory", dt, [], None, meta)
    if x0 is None:
        x0 = np.zeros(2 * nj)
        x0[system.pendulum_joint] = 0.05
    x = np.asarray(x0, dtype=float)
    act = np.zeros(nj)
    act[list(system.actuated)] = 1.0
    X, U, A = [], [], []
    diverged = False
    with np.errstate(all="ignore"):
        for k in range(steps + 1):
            u = ctrl(k * dt, x[:nj], x[nj:])
            X.append(x)
            U.append(u)
            if k == steps:
                break
            applied = u + action_noise * rng.standard_normal(nj) * act
            A.append(applied)
            try:
                x = rk4_step(f, x, applied, dt)
            except ArithmeticError:
                diverged = True
                break
            x = x.copy()
            x[nj:] += state_noise * rng.standard_normal(nj)
            if np.any(np.abs(x) > bound):
                diverged = True
                break
    X, U = np.array(X), np.array(U)
    q, qd = X[:, :nj], X[:, nj:]
    A.append(A[-1] if A else U[-1])
    qdd_sim = np.asarray(f(X, np.array(A[: len(X)])))[:, nj:]
    meta["diverged"] = diverged
    qdd = qdd_sim
    if differentiate:
        qd, qdd = differentiate_zero_phase(q, dt, cutoff)
    # simulator accelerations kept for pipeline checks (not serialized)
    meta["qdd_sim"] = qdd_sim
    return TrajectoryDataset(q, qd, qdd, U, "sim-trajectory", dt, [(0, len(q))], None, meta)


# -- zero-phase differentiation --------------------------------------------


def lowpass(x, dt, cutoff=DEFAULT_CUTOFF, order=FILTER_ORDER):
    """Forward-backward Butterworth filter along axis 0 (no phase lag)."""
    fs = 1.0 / dt
    if not 0 < cutoff < fs / 2:
        raise DataError(f"cutoff {cutoff} Hz must lie in (0, {fs / 2}) Hz")
    sos = signal.butter(order, cutoff, fs=fs, output="sos")
    padlen = 3 * (2 * len(sos) + 1)
    if len(x) <= padlen:
        raise DataError(f"signal too short for zero-phase filtering: {len(x)} <= {padlen} samples")
    return signal.sosfiltfilt(sos, x, axis=0, padlen=padlen)


def min_length(order=FILTER_ORDER):
    n_sections = (order + 1) // 2
    return 3 * (2 * n_sections + 1) + 1


def differentiate_zero_phase(q, dt, cutoff=DEFAULT_CUTOFF):
    """(qd, qdd) from sampled positions: central differences, then zero-phase low-pass."""
    q = np.asarray(q, dtype=float)
    if len(q) < min_length():
        raise DataError(f"signal too short for zero-phase filtering: {len(q)} < {min_length()} samples")
    qd = np.gradient(q, dt, axis=0, edge_order=2)
    qdd = np.empty_like(q)
    qdd[1:-1] = (q[2:] - 2.0 * q[1:-1] + q[:-2]) / dt**2
    qdd[0], qdd[-1] = qdd[1], qdd[-2]
    return lowpass(qd, dt, cutoff), lowpass(qdd, dt, cutoff)


# -- file format -------------------------------------------------------------


def columns(n_joints, ball=False):
    cols = ["t"]
    for name in ("q", "qd", "qdd", "tau"):
        cols += [f"{name}{i}" for i in range(n_joints)]
    if ball:
        for key, size in BALL_FIELDS.items():
            cols += [f"{key}{i}" for i in range(size)]
    return cols


def save_trajectory(path, ds, start=0, stop=None):
    """Write samples ``start:stop`` as comma-separated text with a header row.

    Values use 17 significant digits, which round-trips every double exactly.
    """
    stop = len(ds) if stop is None else stop
    n = stop - start
    t = np.full(n, np.nan) if ds.dt is None else np.arange(n) * ds.dt
    parts = [t[:, None], ds.q[start:stop], ds.qd[start:stop], ds.qdd[start:stop], ds.tau[start:stop]]
    if ds.ball is not None:
        parts += [np.asarray(ds.ball[k][start:stop]).reshape(n, -1) for k in BALL_FIELDS]
    table = np.concatenate(parts, axis=1)
    np.savetxt(path, table, delimiter=",", fmt="%.17g",
               header=",".join(columns(ds.n_joints, ds.ball is not None)), comments="")


def load_trajectory(path, provenance="external"):
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if header[0] != "t" or table.size and table.shape[1] != len(header):
        raise DataError(f"{path}: malformed header")
    nq = sum(1 for c in header if c.startswith("q") and c[1:].isdigit())
    has_ball = len(header) > 1 + 4 * nq
    if header != columns(nq, has_ball):
        raise DataError(f"{path}: unexpected columns")
    table = table.reshape(-1, len(header))
    t = table[:, 0]
    blocks = [table[:, 1 + k * nq:1 + (k + 1) * nq] for k in range(4)]
    dt = None
    if len(t) > 1 and np.all(np.isfinite(t)):
        dt = float(t[1] - t[0])
    ball = None
    if has_ball:
        ball, k = {}, 1 + 4 * nq
        for key, size in BALL_FIELDS.items():
            ball[key] = table[:, k:k + size].reshape((-1, 3, 3) if key == "R_j" else (-1, size))
            k += size
    segs = [(0, len(t))] if dt is not None else []
    if provenance == "uniform":
        dt, segs = None, []
    return TrajectoryDataset(*blocks, provenance, dt, segs, ball)


def save_dataset(directory, ds, name="dataset"):
    """Write every segment (or the whole sample set) plus a JSON manifest."""
    os.makedirs(directory, exist_ok=True)
    segs = ds.segments or [(0, len(ds))]
    files = []
    for i, (a, b) in enumerate(segs):
        fname = f"{name}_{i:03d}.csv"
        save_trajectory(os.path.join(directory, fname), ds, a, b)
        files.append(fname)
    manifest = {
        "provenance": ds.provenance,
        "dt": ds.dt,
        "n_joints": ds.n_joints,
        "files": files,
        "meta": _jsonable(ds.meta),
    }
    path = os.path.join(directory, f"{name}.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_dataset(path):
    """Load a manifest (``.json``) or a single trajectory file."""
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    if not path.endswith(".json"):
        return load_trajectory(path)
    try:
        with open(path) as fh:
            manifest = json.load(fh)
        files, provenance = manifest["files"], manifest["provenance"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed manifest ({exc})") from exc
    root = os.path.dirname(path)
    parts = [load_trajectory(os.path.join(root, f), provenance) for f in files]
    ds = TrajectoryDataset.concatenate(parts, provenance)
    if provenance != "uniform":
        ds.dt = manifest.get("dt")
    if manifest.get("n_joints") not in (None, ds.n_joints):
        raise DataError(f"{path}: joint count mismatch")
    ds.meta = manifest.get("meta", {})
    return ds


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items() if not isinstance(v, np.ndarray)}
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x
