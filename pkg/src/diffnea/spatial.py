"""SE(3) / se(3) building blocks.

Spatial vectors are stored angular block first, ``[w; v]``, everywhere in
the package (motion vectors, forces, rows/columns of 6x6 operators). All
functions broadcast over leading batch axes and accept tape variables.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

_EYE3 = np.eye(3)


def skew(w):
    """Cross-product matrix: skew(a) @ b == cross(a, b)."""
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    if not ad.is_var(w):
        S = np.zeros(np.shape(w) + (3,))
        S[..., 0, 1], S[..., 0, 2], S[..., 1, 2] = -z, y, -x
        S[..., 1, 0], S[..., 2, 0], S[..., 2, 1] = z, -y, x
        return S
    o = ad.zeros_like(x)
    return ad.stack(
        [ad.stack([o, -z, y], -1), ad.stack([z, o, -x], -1), ad.stack([-y, x, o], -1)],
        -2,
    )


def rot_x(a):
    c, s = ad.cos(a), ad.sin(a)
    o, i = ad.zeros_like(a), np.ones(np.shape(ad.value(a)))
    return ad.stack([ad.stack([i, o, o], -1), ad.stack([o, c, -s], -1), ad.stack([o, s, c], -1)], -2)


def rot_y(a):
    c, s = ad.cos(a), ad.sin(a)
    o, i = ad.zeros_like(a), np.ones(np.shape(ad.value(a)))
    return ad.stack([ad.stack([c, o, s], -1), ad.stack([o, i, o], -1), ad.stack([-s, o, c], -1)], -2)


def rot_z(a):
    c, s = ad.cos(a), ad.sin(a)
    o, i = ad.zeros_like(a), np.ones(np.shape(ad.value(a)))
    return ad.stack([ad.stack([c, -s, o], -1), ad.stack([s, c, o], -1), ad.stack([o, o, i], -1)], -2)


def rpy_matrix(angles):
    """R_z(phi_z) R_y(phi_y) R_x(phi_x) for ``angles = [phi_x, phi_y, phi_z]``."""
    return rot_z(angles[..., 2]) @ rot_y(angles[..., 1]) @ rot_x(angles[..., 0])


def rpy_from_matrix(R):
    """Inverse of :func:`rpy_matrix` (plain floats only)."""
    R = np.asarray(R, dtype=float)
    phi_y = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    phi_x = np.arctan2(R[2, 1], R[2, 2])
    phi_z = np.arctan2(R[1, 0], R[0, 0])
    return np.array([phi_x, phi_y, phi_z])


@dataclass(frozen=True)
class SpatialTransform:
    """Rigid transform: maps child-frame coordinates into the parent frame."""

    rotation: object
    translation: object

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        R = self.rotation @ other.rotation
        p = (self.rotation @ other.translation[..., None])[..., 0] + self.translation
        return SpatialTransform(R, p)

    __matmul__ = compose

    def inverse(self):
        Rt = ad.swapaxes(self.rotation, -1, -2)
        return SpatialTransform(Rt, -(Rt @ self.translation[..., None])[..., 0])

    def apply(self, point):
        return (self.rotation @ point[..., None])[..., 0] + self.translation

    def matrix(self):
        """4x4 homogeneous matrix (plain floats)."""
        T = np.eye(4)
        T[:3, :3] = ad.value(self.rotation)
        T[:3, 3] = ad.value(self.translation)
        return T


def transform_from_rpy(angles, translation):
    """Fixed link transform from RPY Euler angles and a translation."""
    return SpatialTransform(rpy_matrix(angles), translation)


def adjoint(T):
    """6x6 Ad_T acting on ``[w; v]`` motion vectors."""
    R, p = T.rotation, T.translation
    Z = np.zeros(np.shape(ad.value(R)))
    return ad.block([[R, Z], [skew(p) @ R, R]])


def adjoint_inverse(T):
    """Ad_{T^-1} without forming the inverse transform explicitly."""
    R, p = T.rotation, T.translation
    Rt = ad.swapaxes(R, -1, -2)
    Z = np.zeros(np.shape(ad.value(R)))
    return ad.block([[Rt, Z], [-(Rt @ skew(p)), Rt]])


def ad_matrix(v):
    """Lie bracket operator ad_v, so ad_v @ u == [v, u] (motion cross product)."""
    w, lin = v[..., :3], v[..., 3:]
    W = skew(w)
    return ad.block([[W, np.zeros(np.shape(ad.value(W)))], [skew(lin), W]])


def co_adjoint_ad(v):
    """ad*_v = ad_v^T, the operator in f = M a - ad*_v M v."""
    return ad.swapaxes(ad_matrix(v), -1, -2)


def cross_motion(v, u):
    """ad_v u evaluated without forming the 6x6 matrix."""
    w, lin = v[..., :3], v[..., 3:]
    uw, ul = u[..., :3], u[..., 3:]
    return ad.concatenate([_cross(w, uw), _cross(lin, uw) + _cross(w, ul)], -1)


def co_cross(v, f):
    """ad_v^T f evaluated without forming the 6x6 matrix."""
    w, lin = v[..., :3], v[..., 3:]
    n, fl = f[..., :3], f[..., 3:]
    return ad.concatenate([-_cross(w, n) - _cross(lin, fl), -_cross(w, fl)], -1)


def _cross(a, b):
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    if not (ad.is_var(a) or ad.is_var(b)):
        out = np.empty(np.broadcast_shapes(np.shape(a), np.shape(b)))
        out[..., 0] = a1 * b2 - a2 * b1
        out[..., 1] = a2 * b0 - a0 * b2
        out[..., 2] = a0 * b1 - a1 * b0
        return out
    return ad.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], -1)


@dataclass(frozen=True)
class SpatialVector:
    """Generalized 6-D velocity, acceleration, force or momentum."""

    angular: object
    linear: object

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_array(cls, a):
        return cls(a[..., :3], a[..., 3:])

    @property
    def array(self):
        return ad.concatenate([self.angular, self.linear], -1)

    def __add__(self, other):
        return SpatialVector(self.angular + other.angular, self.linear + other.linear)

    def __mul__(self, s):
        return SpatialVector(self.angular * s, self.linear * s)

    __rmul__ = __mul__

    def transform(self, T):
        """Motion transport v_j = Ad_T v_i."""
        return SpatialVector.from_array((adjoint(T) @ self.array[..., None])[..., 0])

    def co_transform(self, T):
        """Force/momentum transport f_j = Ad_T^T f_i."""
        A = ad.swapaxes(adjoint(T), -1, -2)
        return SpatialVector.from_array((A @ self.array[..., None])[..., 0])


@dataclass(frozen=True)
class SpatialInertia:
    """Rigid-body inertia about the link frame origin.

    ``inertia`` is the rotational inertia about the frame origin, ``com``
    the centre-of-mass offset p_m.
    """

    inertia: object
    mass: object
    com: object

    @property
    def com_skew(self):
        return self.mass * skew(self.com)

    def matrix(self):
        C = self.com_skew
        return ad.block([[self.inertia, C], [ad.swapaxes(C, -1, -2), self.mass * _EYE3]])
