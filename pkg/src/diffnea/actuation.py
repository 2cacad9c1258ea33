"""Joint-independent actuator models mapping desired to applied torque.

Friction coefficients are stored as unrestricted virtual parameters and
squared on use, so Viscous, Stribeck and NN-Friction can only remove
energy: ``(tau - tau_d) . qd <= 0`` for every parameter value.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad

KINDS = ("identity", "viscous", "stribeck", "nn-friction", "nn-residual", "ff-nn")
NETWORK_KINDS = ("nn-friction", "nn-residual", "ff-nn")
PASSIVE_KINDS = ("viscous", "stribeck", "nn-friction")
DEFAULT_HIDDEN = (32, 32)


class ActuatorError(ValueError):
    pass


# ----------------------------------------------------------------------
# small tanh networks


def mlp_sizes(n_in, hidden, n_out):
    return (n_in,) + tuple(hidden) + (n_out,)


def mlp_param_count(sizes):
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def mlp_init(sizes, rng, out_scale=0.1):
    """Glorot-uniform weights, zero biases; the output layer is scaled down."""
    parts = []
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        lim = np.sqrt(6.0 / (a + b))
        W = rng.uniform(-lim, lim, size=(a, b))
        if k == len(sizes) - 2:
            W *= out_scale
        parts += [W.ravel(), np.zeros(b)]
    return np.concatenate(parts)


def mlp_forward(psi, x, sizes):
    """Feed-forward tanh network; ``x`` has shape (..., sizes[0])."""
    if np.shape(ad.value(x))[-1] != sizes[0]:
        raise ActuatorError(f"network expects {sizes[0]} inputs, got {np.shape(ad.value(x))[-1]}")
    if np.size(ad.value(psi)) != mlp_param_count(sizes):
        raise ActuatorError("network parameter vector has the wrong length")
    h, k = x, 0
    n_layers = len(sizes) - 1
    for layer, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = ad.reshape(psi[k:k + a * b], (a, b))
        k += a * b
        bias = psi[k:k + b]
        k += b
        h = h @ W + bias
        if layer < n_layers - 1:
            h = ad.tanh(h)
    return h


# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ActuatorModel:
    """``kind`` plus a flat vector of virtual parameters."""

    kind: str
    n_joints: int
    params: object = None
    hidden: tuple = DEFAULT_HIDDEN

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ActuatorError(f"unknown actuator kind {self.kind!r}")
        if self.params is None:
            object.__setattr__(self, "params", np.zeros(self.n_params))
        elif np.size(ad.value(self.params)) != self.n_params:
            raise ActuatorError(
                f"{self.kind} actuator needs {self.n_params} parameters, got {np.size(ad.value(self.params))}"
            )

    # -- constructors from physical coefficients -------------------------
    @classmethod
    def identity(cls, n):
        return cls("identity", n)

    @classmethod
    def viscous(cls, mu_v):
        mu_v = _nonneg("mu_v", mu_v)
        return cls("viscous", len(mu_v), np.sqrt(mu_v))

    @classmethod
    def stribeck(cls, f_s, f_d, nu_s, mu_v):
        vals = [_nonneg(k, v) for k, v in (("f_s", f_s), ("f_d", f_d), ("nu_s", nu_s), ("mu_v", mu_v))]
        n = len(vals[0])
        if any(len(v) != n for v in vals):
            raise ActuatorError("Stribeck coefficients must share the joint count")
        return cls("stribeck", n, np.sqrt(np.concatenate(vals)))

    @classmethod
    def network(cls, kind, n, seed=0, hidden=DEFAULT_HIDDEN):
        if kind not in NETWORK_KINDS:
            raise ActuatorError(f"{kind!r} is not a network actuator")
        a = cls(kind, n, hidden=tuple(hidden))
        return a.with_params(mlp_init(a.sizes, np.random.default_rng(seed)))

    @classmethod
    def make(cls, kind, n, seed=0, hidden=DEFAULT_HIDDEN):
        """Default-initialized actuator of any kind (small friction guesses)."""
        if kind in NETWORK_KINDS:
            return cls.network(kind, n, seed, hidden)
        if kind == "viscous":
            return cls.viscous(np.full(n, 0.01))
        if kind == "stribeck":
            return cls.stribeck(np.full(n, 0.01), np.full(n, 0.01), np.full(n, 1.0), np.full(n, 0.01))
        return cls(kind, n)

    # -- parameter layout ------------------------------------------------
    @property
    def sizes(self):
        n = self.n_joints
        n_in = 3 * n if self.kind == "ff-nn" else 2 * n
        return mlp_sizes(n_in, self.hidden, n)

    @property
    def n_params(self):
        if self.kind == "identity":
            return 0
        if self.kind == "viscous":
            return self.n_joints
        if self.kind == "stribeck":
            return 4 * self.n_joints
        return mlp_param_count(self.sizes)

    def network_mask(self):
        return np.full(self.n_params, self.kind in NETWORK_KINDS)

    def with_params(self, params):
        return replace(self, params=params)

    def randomized(self, rng):
        if self.kind in NETWORK_KINDS:
            return self.with_params(mlp_init(self.sizes, rng))
        return self

    def coefficients(self):
        """Physical coefficients (plain floats) of the white-box kinds."""
        p = np.asarray(ad.value(self.params), dtype=float) ** 2
        n = self.n_joints
        if self.kind == "viscous":
            return {"mu_v": p.tolist()}
        if self.kind == "stribeck":
            return {"f_s": p[:n].tolist(), "f_d": p[n:2 * n].tolist(), "nu_s": p[2 * n:3 * n].tolist(), "mu_v": p[3 * n:].tolist()}
        return {}

    # -- evaluation ------------------------------------------------------
    def friction(self, q, qd):
        """Additive torque ``tau - tau_d`` for every kind except ff-nn."""
        n, th = self.n_joints, self.params
        if self.kind == "identity":
            return np.zeros(np.shape(ad.value(qd)))
        if self.kind == "viscous":
            return -(th * th) * qd
        if self.kind == "stribeck":
            f_s, f_d, nu_s, mu_v = (th[k * n:(k + 1) * n] for k in range(4))
            f_s, f_d, nu_s, mu_v = f_s * f_s, f_d * f_d, nu_s * nu_s, mu_v * mu_v
            return -ad.sign(qd) * (f_s + f_d * ad.exp(-nu_s * qd * qd)) - mu_v * qd
        x = ad.concatenate([_bcast(q, qd), _bcast(qd, q)], -1)
        out = mlp_forward(th, x, self.sizes)
        if self.kind == "nn-friction":
            return -ad.sign(qd) * ad.abs(out)
        if self.kind == "nn-residual":
            return out
        raise ActuatorError("ff-nn is not an additive actuator model")

    def apply(self, tau_d, q, qd):
        """Applied joint torque for desired torque ``tau_d``."""
        for name, x in (("tau_d", tau_d), ("q", q), ("qd", qd)):
            if np.shape(ad.value(x))[-1:] != (self.n_joints,):
                raise ActuatorError(f"{name} must have {self.n_joints} entries per sample")
        if self.kind == "identity":
            return tau_d
        if self.kind == "ff-nn":
            shape = np.broadcast_shapes(*(np.shape(ad.value(x)) for x in (tau_d, q, qd)))
            x = ad.concatenate([ad.broadcast_to(v, shape) for v in (tau_d, q, qd)], -1)
            return mlp_forward(self.params, x, self.sizes)
        return tau_d + self.friction(q, qd)

    def desired_from_applied(self, tau, q, qd):
        """Invert :meth:`apply` (all additive kinds)."""
        if self.kind == "identity":
            return tau
        return tau - self.friction(q, qd)

    # -- serialization ---------------------------------------------------
    def to_dict(self):
        return {
            "kind": self.kind,
            "n_joints": self.n_joints,
            "hidden": list(self.hidden),
            "params": np.asarray(ad.value(self.params), dtype=float).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["kind"], int(d["n_joints"]),
            np.asarray(d.get("params", []), dtype=float) if d.get("params") is not None else None,
            tuple(d.get("hidden", DEFAULT_HIDDEN)),
        )


def _nonneg(name, v):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ActuatorError(f"friction coefficient {name} must be finite and non-negative")
    return v


def _bcast(a, b):
    shape = np.broadcast_shapes(np.shape(ad.value(a)), np.shape(ad.value(b)))
    return ad.broadcast_to(a, shape)


def regularizer(actuator, tau_d, q, qd):
    """Sum of squared actuator deviations; zero for the white-box kinds."""
    if actuator.kind not in NETWORK_KINDS:
        return 0.0
    d = actuator.apply(tau_d, q, qd) - tau_d
    return ad.sum(d * d)
