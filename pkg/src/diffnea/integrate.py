"""Fixed-step RK4 integration and trajectory rollouts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

DEFAULT_DT = 1.0 / 250.0
DEFAULT_BOUND = 1e6


class DivergenceError(ArithmeticError):
    def __init__(self, stage):
        self.stage = stage
        super().__init__(f"non-finite derivative at RK4 stage {stage}")


def rk4_step(f, x, u, dt):
    """Classical RK4 with ``u`` held constant over the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = _finite(f(x, u), 1)
    k2 = _finite(f(x + (0.5 * dt) * k1, u), 2)
    k3 = _finite(f(x + (0.5 * dt) * k2, u), 3)
    k4 = _finite(f(x + dt * k3, u), 4)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _finite(k, stage):
    if not np.all(np.isfinite(ad.value(k))):
        raise DivergenceError(stage)
    return k


def state_derivative(model):
    """x = [q, qd] -> [qd, qdd] for any object with ``forward_dynamics``."""
    n = model.n_joints

    def f(x, u):
        q, qd = x[..., :n], x[..., n:]
        return ad.concatenate([qd, model.forward_dynamics(q, qd, u)], -1)

    return f


@dataclass
class Trajectory:
    """Uniformly sampled joint trajectory.

    ``q``, ``qd`` hold T+1 states; ``tau`` and ``qdd`` hold the input and the
    acceleration at each state (the final entries of a rollout repeat the
    last input).
    """

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    tau: np.ndarray
    dt: float
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def states(self):
        return np.concatenate([self.q, self.qd], -1)

    def __len__(self):
        return len(self.t)


def rollout(model, x0, u_seq, dt=DEFAULT_DT, bound=DEFAULT_BOUND):
    """Integrate ``model`` from ``x0`` under zero-order-hold inputs ``u_seq``.

    Stops early and flags divergence once any state component leaves
    ``[-bound, bound]`` (``bound`` may be per-component) or turns non-finite.
    """
    f = state_derivative(model)
    n = model.n_joints
    x = np.asarray(x0, dtype=float)
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, n)
    bound = np.broadcast_to(np.asarray(bound, dtype=float), x.shape)
    states, taus = [x], []
    diverged = False
    with np.errstate(all="ignore"):
        for u in u_seq:
            try:
                x = rk4_step(f, x, u, dt)
            except (DivergenceError, ArithmeticError):
                diverged = True
                break
            taus.append(u)
            states.append(x)
            if np.any(np.abs(x) > bound):
                diverged = True
                break
        S = np.array(states)
        U = np.array(taus + [taus[-1] if taus else (u_seq[0] if len(u_seq) else np.zeros(n))])
        try:
            qdd = np.asarray(f(S, U))[:, n:]
        except ArithmeticError:
            qdd = np.full((len(S), n), np.nan)
    return Trajectory(
        t=np.arange(len(S)) * dt,
        q=S[:, :n],
        qd=S[:, n:],
        qdd=qdd,
        tau=U,
        dt=dt,
        diverged=diverged,
    )
