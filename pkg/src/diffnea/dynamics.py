"""Lie-algebra RNEA / ABA over a kinematic tree.

Joint-space arrays have shape (..., n); any leading axes are treated as a
batch. Gravity enters as a fictitious base acceleration ``[0; -g]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import FIELDS, fixed_transform, joint_transform, link_inertia, link_transform, mass
from .spatial import adjoint_inverse, co_cross, cross_motion


class DimensionError(ValueError):
    pass


class DegenerateInertiaError(ArithmeticError):
    def __init__(self, link, value):
        self.link = link
        super().__init__(f"articulated inertia of link {link!r} is degenerate (s^T M s = {value:.3e})")


@dataclass
class JointState:
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray = None
    tau: np.ndarray = None


def _check(model, *arrays):
    n = model.n_joints
    for a in arrays:
        if np.shape(ad.value(a))[-1:] != (n,):
            raise DimensionError(f"expected {n} joint values per sample, got shape {np.shape(ad.value(a))}")


def _mv(A, x):
    return (A @ x[..., None])[..., 0]


def _col(M, k):
    return M[..., :, k]


def _is_plain(model):
    return not any(ad.is_var(getattr(l.params, f)) for l in model.links for f in FIELDS)


def _static(model):
    """Fixed-frame adjoints and spatial inertias; cached on plain-valued models."""
    cache = model.__dict__.get("_static_cache")
    if cache is not None:
        return cache
    out = (
        [adjoint_inverse(fixed_transform(l.params)) for l in model.links],
        [link_inertia(l.params).matrix() for l in model.links],
    )
    if _is_plain(model):
        object.__setattr__(model, "_static_cache", out)
    return out


def _joint_adjoint_inverse(spec, q):
    if ad.is_var(q):
        return adjoint_inverse(joint_transform(spec, q))
    q = np.asarray(q, dtype=float)
    X = np.zeros(q.shape + (6, 6))
    if spec.kind == "revolute":
        c, s = np.cos(q), np.sin(q)
        for k in (0, 3):
            X[..., k, k] = X[..., k + 1, k + 1] = c
            X[..., k, k + 1] = s
            X[..., k + 1, k] = -s
            X[..., k + 2, k + 2] = 1.0
    else:
        X[..., range(6), range(6)] = 1.0
        # -[p] for p = q e_z
        X[..., 3, 1] = q
        X[..., 4, 0] = -q
    return X


def _kinematics(model, q):
    """Per-link Ad_{T^{-1}} from the parent frame to the link frame."""
    fixed, _ = _static(model)
    return [_joint_adjoint_inverse(l.joint, q[..., i]) @ fixed[i] for i, l in enumerate(model.links)]


def spatial_inertias(model):
    return list(_static(model)[1])


def _base_acceleration(model):
    a0 = np.zeros(6)
    a0[3:] = -model.gravity_vector
    return a0


def rnea(model, q, qd, qdd, inertias=None):
    """Inverse dynamics: joint torques for the given motion."""
    _check(model, q, qd, qdd)
    M = spatial_inertias(model) if inertias is None else inertias
    X = _kinematics(model, q)
    n = model.n_joints
    a0 = _base_acceleration(model)
    v, a, f = [None] * n, [None] * n, [None] * n
    for i, l in enumerate(model.links):
        s = l.joint.motion
        vp = 0.0 if l.parent < 0 else _mv(X[i], v[l.parent])
        ap = _mv(X[i], a0 if l.parent < 0 else a[l.parent])
        v[i] = vp + s * qd[..., i:i + 1]
        a[i] = ap + cross_motion(v[i], s) * qd[..., i:i + 1] + s * qdd[..., i:i + 1]
        f[i] = _mv(M[i], a[i]) - co_cross(v[i], _mv(M[i], v[i]))
    tau = [None] * n
    for i in reversed(range(n)):
        l = model.links[i]
        tau[i] = f[i][..., l.joint.axis_index]
        if l.parent >= 0:
            f[l.parent] = f[l.parent] + _mv(ad.swapaxes(X[i], -1, -2), f[i])
    return ad.stack(tau, -1)


def aba(model, q, qd, tau, inertias=None, tol=1e-12):
    """Forward dynamics: joint accelerations for applied torques ``tau``."""
    _check(model, q, qd, tau)
    M = spatial_inertias(model) if inertias is None else inertias
    X = _kinematics(model, q)
    n = model.n_joints
    v, eta = [None] * n, [None] * n
    for i, l in enumerate(model.links):
        s = l.joint.motion
        vp = 0.0 if l.parent < 0 else _mv(X[i], v[l.parent])
        v[i] = vp + s * qd[..., i:i + 1]
        eta[i] = cross_motion(v[i], s) * qd[..., i:i + 1]

    Mh = list(M)
    fb = [-co_cross(v[i], _mv(M[i], v[i])) for i in range(n)]
    psi, U = [None] * n, [None] * n
    for i in reversed(range(n)):
        l = model.links[i]
        k = l.joint.axis_index
        U[i] = _col(Mh[i], k)
        D = U[i][..., k]
        if np.any(ad.value(D) <= tol):
            raise DegenerateInertiaError(l.name, float(np.min(ad.value(D))))
        psi[i] = 1.0 / D
        if l.parent >= 0:
            Mh_eta = _mv(Mh[i], eta[i])
            Pi = Mh[i] - (U[i][..., :, None] * psi[i][..., None, None]) * U[i][..., None, :]
            u = tau[..., i] - (Mh_eta + fb[i])[..., k]
            beta = Mh_eta + U[i] * (psi[i] * u)[..., None]
            Xt = ad.swapaxes(X[i], -1, -2)
            Mh[l.parent] = Mh[l.parent] + Xt @ Pi @ X[i]
            fb[l.parent] = fb[l.parent] + _mv(Xt, fb[i] + beta)

    a0 = _base_acceleration(model)
    a, qdd = [None] * n, [None] * n
    for i, l in enumerate(model.links):
        k = l.joint.axis_index
        ap = _mv(X[i], a0 if l.parent < 0 else a[l.parent]) + eta[i]
        qdd[i] = psi[i] * (tau[..., i] - (_mv(Mh[i], ap) + fb[i])[..., k])
        a[i] = ap + l.joint.motion * qdd[i][..., None]
    return ad.stack(qdd, -1)


def forward_dynamics(model, q, qd, tau_d):
    """ABA driven through the model's actuator."""
    return aba(model, q, qd, model.actuator.apply(tau_d, q, qd))


def inverse_dynamics(model, q, qd, qdd):
    """Desired torque that produces ``qdd`` through the model's actuator."""
    return model.actuator.desired_from_applied(rnea(model, q, qd, qdd), q, qd)


def link_poses(model, q):
    """World rotation and position of every link frame."""
    poses = []
    for i, l in enumerate(model.links):
        T = link_transform(l.params, l.joint, q[..., i])
        poses.append(T if l.parent < 0 else poses[l.parent].compose(T))
    return poses


def system_energy(model, q, qd):
    """(kinetic, potential) energy; potential is zero with all CoMs at height 0."""
    _check(model, q, qd)
    X = _kinematics(model, q)
    poses = link_poses(model, q)
    g = model.gravity_vector
    kinetic, potential = 0.0, 0.0
    v = [None] * model.n_joints
    for i, l in enumerate(model.links):
        vp = 0.0 if l.parent < 0 else _mv(X[i], v[l.parent])
        v[i] = vp + l.joint.motion * qd[..., i:i + 1]
        Mi = spatial_inertias(model)[i]
        kinetic = kinetic + 0.5 * ad.sum(v[i] * _mv(Mi, v[i]), -1)
        com = poses[i].apply(l.params.com)
        potential = potential - mass(l.params) * ad.sum(com * g, -1)
    return kinetic, potential


def total_energy(model, q, qd):
    k, p = system_energy(model, q, qd)
    return k + p
