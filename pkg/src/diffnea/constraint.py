"""Ball-on-string: an inextensible string as an inequality-constrained particle.

The string imposes ``h = |x_B - x_C|^2 - r^2 <= 0``, rewritten as the
equality ``g = sigma(h) = 0``. The tension is the closed-form virtual-work
force along ``Delta = x_B - x_C``; during simulation Baumgarte feedback
``g'' = -Kp g - Kd g'`` removes drift and a small viscous drag damps the ball.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .integrate import rk4_step
from .spatial import SpatialTransform, rot_x, transform_from_rpy

GRAVITY = np.array([0.0, 0.0, -9.81])


class IdentificationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class StringParams:
    length: object = 0.4
    cup: SpatialTransform = field(default_factory=SpatialTransform.identity)
    ball_mass: float = 1.0
    delta: float = 1e-6
    kp: float = 100.0
    kd: float = 20.0
    damping: float = 0.05
    relaxation: str = "relu"
    softness: float = 1e-3
    # > 0 lets the tension fade out as exp(z / slack_width) on the slack side
    slack_width: float = 0.0
    # roundoff allowance: |Delta| this far inside r still counts as taut
    taut_tol: float = 1e-9
    gravity: tuple = tuple(GRAVITY)

    def __post_init__(self):
        if self.relaxation not in ("relu", "softplus"):
            raise ValueError(f"unknown relaxation {self.relaxation!r}")
        if np.any(ad.value(self.length) <= 0) or self.ball_mass <= 0 or self.delta <= 0:
            raise ValueError("length, ball_mass and delta must be positive")
        if self.kp < 0 or self.kd < 0 or self.damping < 0:
            raise ValueError("gains and damping must be non-negative")


@dataclass
class BallState:
    x_b: np.ndarray
    xd_b: np.ndarray
    x_c: np.ndarray
    xd_c: np.ndarray
    xdd_c: np.ndarray


# -- relaxations ---------------------------------------------------------


def _sigma(h, p):
    if p.relaxation == "relu":
        return ad.relu(h)
    return p.softness * ad.softplus(h / p.softness)


def _dsigma(h, p):
    # the taut boundary h = 0 counts as active
    if p.relaxation == "relu":
        return (np.asarray(ad.value(h)) >= -p.taut_tol).astype(float)
    return ad.sigmoid(h / p.softness)


def _ddsigma(h, p):
    if p.relaxation == "relu":
        return 0.0
    s = ad.sigmoid(h / p.softness)
    return s * (1.0 - s) / p.softness


def _gate(z, p):
    """Tension activation sigma'(z) for z = |Delta| - r."""
    if p.relaxation == "relu" and p.slack_width > 0:
        zv = np.asarray(ad.value(z))
        taut = zv >= -p.taut_tol
        return ad.where(taut, 1.0, ad.exp(ad.where(taut, 0.0, z) / p.slack_width))
    return _dsigma(z, p)


def _dot(a, b):
    return ad.sum(a * b, -1)


# -- constraint kinematics ----------------------------------------------


def cup_state(cup, p_j, R_j, v_j, w_j, a_j, alpha_j):
    """Cup position/velocity/acceleration from the last-joint motion (world frame)."""
    o = (R_j @ cup.translation[..., None])[..., 0]
    w_x_o = _cross(w_j, o)
    x_c = p_j + o
    xd_c = v_j + w_x_o
    xdd_c = a_j + _cross(alpha_j, o) + _cross(w_j, w_x_o)
    return x_c, xd_c, xdd_c


def _cross(a, b):
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return ad.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], -1)


def constraint_values(s, p):
    """(h, g, g') for every sample."""
    d = s.x_b - s.x_c
    dd = s.xd_b - s.xd_c
    h = _dot(d, d) - p.length * p.length
    g = _sigma(h, p)
    gd = _dsigma(h, p) * 2.0 * _dot(d, dd)
    return h, g, gd


def _tension(s, p, accel, gate=None):
    d = s.x_b - s.x_c
    dd = s.xd_b - s.xd_c
    nd = _dot(d, d)
    if gate is None:
        gate = _gate(ad.sqrt(nd) - p.length, p)
    lam = (_dot(d, accel) - _dot(d, s.xdd_c) + _dot(dd, dd)) / (nd + p.delta)
    return -p.ball_mass * (gate * lam)[..., None] * d


def constraint_force(s, p):
    """Closed-form string force on the ball (gravity as the only applied force)."""
    return _tension(s, p, np.asarray(p.gravity))


def ball_dynamics(s, p, taut=None):
    """Ball acceleration including tension, Baumgarte feedback and drag.

    ``taut`` overrides the string gate (the simulator fixes it per step).
    """
    d = s.x_b - s.x_c
    dd = s.xd_b - s.xd_c
    nd = _dot(d, d)
    free = np.asarray(p.gravity) - (p.damping / p.ball_mass) * s.xd_b
    gate = _gate(ad.sqrt(nd) - p.length, p) if taut is None else taut
    f_c = _tension(s, p, free, gate)
    h = nd - p.length * p.length
    hd = 2.0 * _dot(d, dd)
    stab = -(gate * (p.kp * h + p.kd * hd) / (2.0 * (nd + p.delta)))[..., None] * d
    return free + f_c / p.ball_mass + stab


def constraint_penalty(s, p, weights=(1e2, 1e1, 1e0), xdd_b=None):
    """sum_i g_i^T diag(weights) g_i with g_i = (g, g', g'').

    ``g''`` follows the model dynamics unless ``xdd_b`` is supplied.
    """
    lg, lgd, lgdd = weights
    if lg == 0 and lgd == 0 and lgdd == 0:
        return 0.0
    d = s.x_b - s.x_c
    dd = s.xd_b - s.xd_c
    h, g, gd = constraint_values(s, p)
    acc = ball_dynamics(s, p) if xdd_b is None else xdd_b
    hd = 2.0 * _dot(d, dd)
    hdd = 2.0 * _dot(dd, dd) + 2.0 * _dot(d, acc - s.xdd_c)
    gdd = _dsigma(h, p) * hdd + _ddsigma(h, p) * hd * hd
    return ad.sum(lg * g * g + lgd * gd * gd + lgdd * gdd * gdd)


# -- synthetic cup motion and simulation ----------------------------------


@dataclass(frozen=True)
class CupMotion:
    """Smooth last-joint motion: sinusoidal translation plus a rocking roll."""

    origin: tuple = (0.0, 0.0, 1.0)
    amplitude: tuple = (0.10, 0.08, 0.04)
    frequency: tuple = (0.45, 0.6, 0.35)   # Hz
    roll_amplitude: float = 0.3           # rad about world x
    roll_frequency: float = 0.25

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        A = np.asarray(self.amplitude)
        w = 2 * np.pi * np.asarray(self.frequency)
        ph = np.array([0.0, 0.7, 0.0])
        arg = w * t[..., None] + ph
        p = np.asarray(self.origin) + A * np.sin(arg)
        v = A * w * np.cos(arg)
        a = -A * w**2 * np.sin(arg)
        wr = 2 * np.pi * self.roll_frequency
        phi = self.roll_amplitude * np.sin(wr * t)
        phid = self.roll_amplitude * wr * np.cos(wr * t)
        phidd = -self.roll_amplitude * wr**2 * np.sin(wr * t)
        ex = np.array([1.0, 0.0, 0.0])
        R = rot_x(phi)
        return p, R, v, phid[..., None] * ex, a, phidd[..., None] * ex


def ball_states(cup_motion, p, t, x_b, xd_b):
    pj, Rj, vj, wj, aj, alj = cup_motion(t)
    x_c, xd_c, xdd_c = cup_state(p.cup, pj, Rj, vj, wj, aj, alj)
    return BallState(x_b, xd_b, x_c, xd_c, xdd_c)


def simulate_ball(p, cup_motion, duration, dt=1.0 / 250.0, x_b0=None, xd_b0=None, mode_band=1e-6):
    """RK4 simulation of the ball under a prescribed cup motion.

    The taut/slack mode is decided at the start of every step (taut once the
    ball is within ``mode_band`` of the full length) and held over the RK4
    stages, so the gate never switches inside a step. Returns a dict of
    arrays sampled at every step, including the model acceleration and the
    last-joint motion needed for identification.
    """
    x_c0, xd_c0, _ = cup_state(p.cup, *cup_motion(0.0))
    if x_b0 is None:
        x_b0 = x_c0 + np.array([0.0, 0.0, -float(p.length)])
    # start co-moving with the cup unless told otherwise
    xd_b0 = xd_c0 if xd_b0 is None else xd_b0

    def f(x, taut):
        st = ball_states(cup_motion, p, x[6], x[:3], x[3:6])
        return np.concatenate([x[3:6], ball_dynamics(st, p, taut), [1.0]])

    def mode(x):
        x_c, _, _ = cup_state(p.cup, *cup_motion(x[6]))
        return float(np.linalg.norm(x[:3] - x_c) >= float(p.length) - mode_band)

    steps = int(round(duration / dt))
    x = np.concatenate([x_b0, xd_b0, [0.0]])
    X, M = [x], []
    for _ in range(steps):
        M.append(mode(x))
        x = rk4_step(f, x, M[-1], dt)
        X.append(x)
    X = np.array(X)
    M.append(mode(X[-1]))
    t = X[:, 6]
    st = ball_states(cup_motion, p, t, X[:, :3], X[:, 3:6])
    pj, Rj, vj, wj, aj, alj = cup_motion(t)
    return {
        "t": t,
        "x_b": X[:, :3],
        "xd_b": X[:, 3:6],
        "xdd_b": np.asarray(ball_dynamics(st, p, np.array(M))),
        "p_j": pj, "R_j": Rj, "v_j": vj, "w_j": wj, "a_j": aj, "alpha_j": alj,
    }


def average_trajectories(runs):
    """Element-wise mean of repeated recordings with identical timestamps."""
    keys = runs[0].keys()
    return {k: np.mean([r[k] for r in runs], axis=0) for k in keys}


# -- identification -----------------------------------------------------


def string_virtual(p):
    """Unrestricted parameter vector [sqrt(r), rpy(T_E), translation(T_E)]."""
    from .spatial import rpy_from_matrix

    return np.concatenate([
        [np.sqrt(float(ad.value(p.length)))],
        rpy_from_matrix(ad.value(p.cup.rotation)),
        np.asarray(ad.value(p.cup.translation), dtype=float),
    ])


def string_from_virtual(theta, template):
    cup = transform_from_rpy(theta[1:4], theta[4:7])
    return replace(template, length=theta[0] * theta[0], cup=cup)


def string_loss(theta, data, template, weights):
    """Mean squared acceleration error plus the mean constraint penalty."""
    p = string_from_virtual(theta, template)
    x_c, xd_c, xdd_c = cup_state(p.cup, data["p_j"], data["R_j"], data["v_j"], data["w_j"], data["a_j"], data["alpha_j"])
    st = BallState(data["x_b"], data["xd_b"], x_c, xd_c, xdd_c)
    pred = ball_dynamics(st, p)
    err = pred - data["xdd_b"]
    n = len(data["x_b"])
    return ad.sum(err * err) / n + constraint_penalty(st, p, weights, xdd_b=pred) / n


def _offending(theta, data, template):
    with np.errstate(all="ignore"):
        per = [string_loss(theta, {k: v[i:i + 1] for k, v in data.items() if k != "t"}, template, (0, 0, 0))
               for i in range(len(data["x_b"]))]
    bad = np.flatnonzero(~np.isfinite(per))
    return f" (first non-finite sample {bad[0]})" if bad.size else ""


def identify_string(data, init, weights=(1e2, 1e1, 1e0), iterations=4000, lr=1e-2, lr_final=1e-5,
                    slack_start=0.2, slack_end=1e-4, log_every=0):
    """Fit string length and cup offset by Adam on the penalized loss.

    The tension gate starts soft on the slack side (so an over-long initial
    string still receives gradient) and is sharpened geometrically.
    """
    from .sysid import AdamState, adam_step

    theta = string_virtual(init)
    state = AdamState.zeros(theta.size)
    curve = []
    for it in range(iterations):
        frac = it / max(iterations - 1, 1)
        width = slack_start * (slack_end / slack_start) ** frac
        lr_it = lr * (lr_final / lr) ** frac
        template = replace(init, slack_width=width)
        loss, grad = ad.value_and_grad(lambda th: string_loss(th, data, template, weights), theta)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise IdentificationError(f"non-finite loss at iteration {it}{_offending(theta, data, template)}")
        curve.append(loss)
        theta, state = adam_step(theta, grad, state, lr=lr_it)
        if log_every and it % log_every == 0:
            print(it, loss, theta[0] ** 2, theta[4:7])
    fitted = string_from_virtual(theta, replace(init, slack_width=0.0))
    return fitted, np.array(curve)
