"""Kinematic trees parameterized by unrestricted virtual parameters.

Every real-valued :class:`LinkParams` maps to a physically plausible body:
mass ``sqrt_mass**2``, principal moments built from squared second moments
(so the triangle inequalities hold by construction) and a proper rotation
for the kinematics.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .actuation import ActuatorModel
from .spatial import SpatialInertia, SpatialTransform, rot_z, rpy_from_matrix, rpy_matrix, skew

KINEMATIC_FIELDS = ("rpy", "offset")
INERTIAL_FIELDS = ("sqrt_moments", "sqrt_mass", "inertia_rpy", "com")
FIELD_SIZES = {
    "rpy": 3,
    "offset": 3,
    "sqrt_moments": 3,
    "sqrt_mass": 1,
    "inertia_rpy": 3,
    "com": 3,
}
FIELDS = KINEMATIC_FIELDS + INERTIAL_FIELDS


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class JointSpec:
    """Single-DoF joint acting along the local z axis."""

    kind: str = "revolute"

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ModelError(f"unsupported joint kind {self.kind!r}")

    @property
    def axis_index(self):
        # position of the single non-zero entry of s in [w; v] ordering
        return 2 if self.kind == "revolute" else 5

    @property
    def motion(self):
        s = np.zeros(6)
        s[self.axis_index] = 1.0
        return s


@dataclass(frozen=True)
class LinkParams:
    """Virtual parameters of one link (all fields unrestricted reals)."""

    rpy: object = field(default_factory=lambda: np.zeros(3))
    offset: object = field(default_factory=lambda: np.zeros(3))
    sqrt_moments: object = field(default_factory=lambda: np.zeros(3))
    sqrt_mass: object = 0.0
    inertia_rpy: object = field(default_factory=lambda: np.zeros(3))
    com: object = field(default_factory=lambda: np.zeros(3))

    def vector(self, fields=FIELDS):
        return np.concatenate([np.atleast_1d(np.asarray(ad.value(getattr(self, f)), dtype=float)) for f in fields])


def principal_inertia(sqrt_moments):
    """Diagonal principal inertia from the square-root second moments."""
    L = sqrt_moments * sqrt_moments
    d = ad.stack([L[..., 1] + L[..., 2], L[..., 0] + L[..., 2], L[..., 0] + L[..., 1]], -1)
    return d[..., :, None] * np.eye(3)


def mass(params):
    return params.sqrt_mass * params.sqrt_mass


def central_inertia(params):
    """Rotational inertia about the centre of mass, in link coordinates."""
    RJ = rpy_matrix(params.inertia_rpy)
    return RJ @ principal_inertia(params.sqrt_moments) @ ad.swapaxes(RJ, -1, -2)


def link_inertia(params):
    """Spatial inertia about the link frame origin (parallel-axis theorem)."""
    m = mass(params)
    C = skew(params.com)
    J = central_inertia(params) - m * (C @ C)
    return SpatialInertia(J, m, params.com)


def joint_transform(spec, q):
    batch = np.shape(ad.value(q))
    if spec.kind == "revolute":
        return SpatialTransform(rot_z(q), np.zeros(batch + (3,)))
    zero = np.zeros(batch)
    eye = np.broadcast_to(np.eye(3), batch + (3, 3))
    return SpatialTransform(eye, ad.stack([zero, zero, q], -1))


def fixed_transform(params):
    return SpatialTransform(rpy_matrix(params.rpy), params.offset)


def link_transform(params, spec, q):
    """T(q) = T_O T_q(q): parent frame <- child frame."""
    return fixed_transform(params).compose(joint_transform(spec, q))


def physical_from_virtual(params):
    """Derived physical quantities (plain floats) of one link."""
    p = LinkParams(*(np.asarray(ad.value(getattr(params, f)), dtype=float) for f in FIELDS))
    Jp = np.diag(principal_inertia(p.sqrt_moments))
    Jc = central_inertia(p)
    return {
        "mass": float(mass(p)),
        "com": p.com.tolist(),
        "principal_inertia": Jp.tolist(),
        "central_inertia": Jc.tolist(),
        "origin_inertia": link_inertia(p).inertia.tolist(),
        "rotation": rpy_matrix(p.rpy).tolist(),
        "offset": p.offset.tolist(),
    }


def virtual_from_physical(mass_, com, inertia_c=None, rpy=(0.0, 0.0, 0.0), offset=(0.0, 0.0, 0.0)):
    """Invert the virtual maps for a plausible body (mass >= 0, valid inertia)."""
    if mass_ < 0:
        raise ModelError("mass must be non-negative")
    Jc = np.zeros((3, 3)) if inertia_c is None else np.asarray(inertia_c, dtype=float)
    evals, evecs = np.linalg.eigh(0.5 * (Jc + Jc.T))
    if np.linalg.det(evecs) < 0:
        evecs[:, 0] *= -1.0
    Jx, Jy, Jz = evals
    L = np.array([Jy + Jz - Jx, Jx + Jz - Jy, Jx + Jy - Jz]) / 2.0
    if np.any(L < -1e-12):
        raise ModelError("inertia violates the triangle inequalities")
    return LinkParams(
        rpy=np.asarray(rpy, dtype=float),
        offset=np.asarray(offset, dtype=float),
        sqrt_moments=np.sqrt(np.clip(L, 0.0, None)),
        sqrt_mass=float(np.sqrt(mass_)),
        inertia_rpy=rpy_from_matrix(evecs),
        com=np.asarray(com, dtype=float),
    )


@dataclass(frozen=True)
class Link:
    name: str
    parent: int
    joint: JointSpec
    params: LinkParams
    frozen: tuple = ()


@dataclass(frozen=True)
class RobotModel:
    """Ordered kinematic tree (parents precede children)."""

    links: tuple
    gravity: tuple = (0.0, 0.0, -9.81)
    actuator: ActuatorModel = None
    name: str = "robot"
    learn_actuator: bool = True

    def __post_init__(self):
        links = tuple(self.links)
        object.__setattr__(self, "links", links)
        roots = [i for i, l in enumerate(links) if l.parent < 0]
        if len(roots) != 1 or roots[0] != 0:
            raise ModelError("model must have exactly one root, listed first")
        for i, l in enumerate(links):
            if l.parent >= i:
                raise ModelError(f"link {l.name!r}: parent index must precede child")
            bad = set(l.frozen) - set(FIELDS)
            if bad:
                raise ModelError(f"link {l.name!r}: unknown frozen fields {sorted(bad)}")
        if self.actuator is None:
            object.__setattr__(self, "actuator", ActuatorModel.identity(len(links)))
        elif self.actuator.n_joints != len(links):
            raise ModelError("actuator joint count does not match the model")

    @property
    def n_joints(self):
        return len(self.links)

    @property
    def gravity_vector(self):
        return np.asarray(self.gravity, dtype=float)

    # -- variants ------------------------------------------------------
    def with_variant(self, variant):
        """``diffnea`` freezes the kinematics, ``nokin`` learns everything."""
        if variant == "diffnea":
            frozen = KINEMATIC_FIELDS
        elif variant == "nokin":
            frozen = ()
        else:
            raise ModelError(f"unknown variant {variant!r}")
        return replace(self, links=tuple(replace(l, frozen=frozen) for l in self.links))

    def with_actuator(self, actuator):
        return replace(self, actuator=actuator)

    def with_links(self, params_list):
        return replace(self, links=tuple(replace(l, params=p) for l, p in zip(self.links, params_list)))

    # -- flat parameter vector ------------------------------------------
    def _layout(self):
        layout, k = [], 0
        for i, l in enumerate(self.links):
            for f in FIELDS:
                if f in l.frozen:
                    continue
                layout.append((i, f, k, k + FIELD_SIZES[f]))
                k += FIELD_SIZES[f]
        return layout, k

    def parameter_vector(self):
        layout, _ = self._layout()
        parts = [np.atleast_1d(np.asarray(ad.value(getattr(self.links[i].params, f)), dtype=float)) for i, f, _, _ in layout]
        if self.learn_actuator:
            parts.append(np.asarray(ad.value(self.actuator.params), dtype=float))
        return np.concatenate(parts) if parts else np.zeros(0)

    def network_mask(self):
        """True for entries of :meth:`parameter_vector` that are network weights."""
        _, n = self._layout()
        mask = np.zeros(n, dtype=bool)
        if self.learn_actuator:
            mask = np.concatenate([mask, self.actuator.network_mask()])
        return mask

    def with_parameters(self, theta):
        """New model with learnable entries taken from ``theta`` (array or Var)."""
        layout, n = self._layout()
        updates = [dict() for _ in self.links]
        for i, f, a, b in layout:
            updates[i][f] = theta[a] if f == "sqrt_mass" else theta[a:b]
        links = tuple(replace(l, params=replace(l.params, **u)) for l, u in zip(self.links, updates))
        actuator = self.actuator
        if self.learn_actuator and actuator.n_params:
            actuator = actuator.with_params(theta[n:n + actuator.n_params])
        return replace(self, links=links, actuator=actuator)

    def forward_dynamics(self, q, qd, tau_d):
        from .dynamics import forward_dynamics

        return forward_dynamics(self, q, qd, tau_d)

    def physical(self):
        return [dict(name=l.name, **physical_from_virtual(l.params)) for l in self.links]

    # -- initialization ------------------------------------------------
    def randomized(self, seed, mass_range=(0.1, 1.0), moment_range=(0.01, 0.3), kin_range=(-0.1, 0.1)):
        """Draw non-frozen virtual parameters without prior knowledge."""
        rng = np.random.default_rng(seed)
        links = []
        for l in self.links:
            p = l.params
            new = {}
            for f in FIELDS:
                if f in l.frozen:
                    continue
                if f == "sqrt_mass":
                    new[f] = float(rng.uniform(*mass_range))
                elif f == "sqrt_moments":
                    new[f] = rng.uniform(*moment_range, size=3)
                else:
                    new[f] = rng.uniform(*kin_range, size=3)
            links.append(replace(l, params=replace(p, **new)))
        return replace(self, links=tuple(links), actuator=self.actuator.randomized(rng))

    # -- serialization -------------------------------------------------
    def to_dict(self):
        def vec(x):
            x = np.asarray(ad.value(x), dtype=float)
            return float(x) if x.ndim == 0 else x.tolist()

        return {
            "name": self.name,
            "gravity": [float(g) for g in self.gravity],
            "learn_actuator": self.learn_actuator,
            "actuator": self.actuator.to_dict(),
            "links": [
                {
                    "name": l.name,
                    "parent": l.parent,
                    "joint": l.joint.kind,
                    **{f: vec(getattr(l.params, f)) for f in FIELDS},
                    "frozen": list(l.frozen),
                }
                for l in self.links
            ],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            links = []
            for ld in d["links"]:
                params = LinkParams(**{
                    f: (float(ld[f]) if f == "sqrt_mass" else np.asarray(ld[f], dtype=float)) for f in FIELDS
                })
                for f in FIELDS:
                    if f != "sqrt_mass" and np.shape(getattr(params, f)) != (3,):
                        raise ModelError(f"link {ld['name']!r}: field {f} must have 3 entries")
                links.append(Link(ld["name"], int(ld["parent"]), JointSpec(ld["joint"]), params, tuple(ld.get("frozen", ()))))
            actuator = ActuatorModel.from_dict(d["actuator"]) if "actuator" in d else None
            return cls(
                links=tuple(links),
                gravity=tuple(float(g) for g in d.get("gravity", (0.0, 0.0, -9.81))),
                actuator=actuator,
                name=d.get("name", "robot"),
                learn_actuator=bool(d.get("learn_actuator", True)),
            )
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed model description: {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ModelError(f"{path}: {exc}") from exc
        return cls.from_dict(d)


def check_plausible(params, tol=1e-12):
    """Raise AssertionError unless the derived physics of ``params`` is plausible."""
    p = physical_from_virtual(params)
    Jp = np.asarray(p["principal_inertia"])
    assert p["mass"] >= 0.0
    assert np.all(Jp >= -tol)
    Jx, Jy, Jz = Jp
    assert Jx <= Jy + Jz + tol and Jy <= Jx + Jz + tol and Jz <= Jx + Jy + tol
