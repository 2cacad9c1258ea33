"""Benchmark systems with documented ground-truth parameters.

All values are synthetic desk-scale defaults. The world z axis points up
and gravity is (0, 0, -9.81). Pendulum-like links hang along their local
x axis at q = 0.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .actuation import ActuatorModel
from .model import JointSpec, Link, RobotModel, virtual_from_physical

HALF_PI = np.pi / 2
G = 9.81


@dataclass(frozen=True)
class BenchmarkSystem:
    name: str
    model: RobotModel            # ground truth (identity actuator)
    prior: RobotModel            # nominal "manufacturer" values
    q_range: np.ndarray          # (n, 2)
    qd_range: np.ndarray
    tau_range: np.ndarray
    actuated: tuple              # joint indices receiving torque
    pendulum_joint: int          # joint used by the energy controller
    target_energy: float         # pendulum energy at the upright position
    friction: dict               # Stribeck ground truth (physical coefficients)
    drive_sign: float = 1.0      # energy-pumping direction of the actuated joint
    centering: tuple = (0.0, 0.0)
    pump_gain: float = 2.0       # energy gain relative to u_max / E_ref
    fit_lr: float = 5e-3         # Adam step for the physical virtual parameters

    @property
    def n_joints(self):
        return self.model.n_joints

    def truth(self, actuator="identity"):
        """Ground-truth model with the requested actuator ground truth."""
        n = self.n_joints
        if actuator == "identity":
            return self.model
        if actuator == "viscous":
            return self.model.with_actuator(ActuatorModel.viscous(self.friction["mu_v"]))
        if actuator == "stribeck":
            return self.model.with_actuator(ActuatorModel.stribeck(**self.friction))
        raise ValueError(f"no ground truth for actuator {actuator!r} (n={n})")

    def pendulum_energy(self, q, qd):
        """Energy of the swinging link about its pivot (zero at the hanging rest)."""
        link = self.model.links[self.pendulum_joint]
        p = link.params
        m = float(p.sqrt_mass) ** 2
        lx = float(np.asarray(p.com)[0])
        from .model import central_inertia
        I = float(np.asarray(central_inertia(p))[2, 2]) + m * lx * lx
        phi = q[..., self.pendulum_joint]
        phid = qd[..., self.pendulum_joint]
        return 0.5 * I * phid**2 + m * G * lx * (1.0 - np.cos(phi))


def _link(name, parent, kind, mass, com, inertia=None, rpy=(0.0, 0.0, 0.0), offset=(0.0, 0.0, 0.0)):
    return Link(name, parent, JointSpec(kind), virtual_from_physical(mass, com, inertia, rpy, offset))


def _rod(mass, length, radius=0.005):
    """Central inertia of a thin rod lying along local x."""
    ax = 0.5 * mass * radius**2
    tr = mass * length**2 / 12.0
    return np.diag([ax, tr, tr])


def _with_prior(model, scale=1.15):
    """Nominal values: masses and inertias scaled, CoMs shifted by 5 %."""
    links = []
    for l in model.links:
        p = l.params
        links.append(replace(l, params=replace(
            p,
            sqrt_mass=float(p.sqrt_mass) * np.sqrt(scale),
            sqrt_moments=np.asarray(p.sqrt_moments) * np.sqrt(scale),
            com=np.asarray(p.com) * 1.05,
        )))
    return replace(model, links=tuple(links))


def pendulum(mass=1.0, length=1.0):
    model = RobotModel((_link("pole", -1, "revolute", mass, (length, 0, 0), rpy=(0.0, HALF_PI, 0.0)),), name="pendulum")
    return BenchmarkSystem(
        name="pendulum",
        model=model,
        prior=_with_prior(model),
        q_range=np.array([[-np.pi, np.pi]]),
        qd_range=np.array([[-8.0, 8.0]]),
        tau_range=np.array([[-10.0, 10.0]]),
        actuated=(0,),
        pendulum_joint=0,
        target_energy=2 * mass * G * length,
        friction=dict(f_s=[0.1], f_d=[0.1], nu_s=[4.0], mu_v=[0.1]),
    )


def double_pendulum():
    model = RobotModel((
        _link("upper", -1, "revolute", 1.0, (0.5, 0.0, 0.02), _rod(1.0, 1.0), rpy=(0.0, HALF_PI, 0.0)),
        _link("lower", 0, "revolute", 0.7, (0.4, 0.01, 0.0), _rod(0.7, 0.8) + 0.002 * np.eye(3), offset=(1.0, 0.0, 0.0)),
    ), name="double_pendulum")
    return BenchmarkSystem(
        name="double_pendulum",
        model=model,
        prior=_with_prior(model),
        q_range=np.array([[-np.pi, np.pi]] * 2),
        qd_range=np.array([[-6.0, 6.0]] * 2),
        tau_range=np.array([[-20.0, 20.0], [-10.0, 10.0]]),
        actuated=(0, 1),
        pendulum_joint=0,
        target_energy=2 * 1.0 * G * 0.5,
        friction=dict(f_s=[0.1, 0.1], f_d=[0.1, 0.1], nu_s=[4.0, 4.0], mu_v=[0.1, 0.1]),
    )


def cartpole():
    model = RobotModel((
        _link("cart", -1, "prismatic", 1.0, (0.0, 0.0, 0.0), np.diag([0.01, 0.01, 0.01]), rpy=(0.0, HALF_PI, 0.0)),
        _link("pole", 0, "revolute", 0.25, (0.5, 0.0, 0.0), _rod(0.25, 1.0), rpy=(-HALF_PI, 0.0, 0.0)),
    ), name="cartpole")
    return BenchmarkSystem(
        name="cartpole",
        model=model,
        prior=_with_prior(model),
        q_range=np.array([[-0.5, 0.5], [-np.pi, np.pi]]),
        qd_range=np.array([[-2.0, 2.0], [-10.0, 10.0]]),
        tau_range=np.array([[-10.0, 10.0], [0.0, 0.0]]),
        actuated=(0,),
        pendulum_joint=1,
        target_energy=2 * 0.25 * G * 0.5,
        # plastic cogwheel drive: strong stiction on the cart, light pole bearing
        friction=dict(f_s=[0.4, 0.001], f_d=[0.4, 0.001], nu_s=[4.0, 4.0], mu_v=[2.0, 0.002]),
        centering=(2.0, 2.0),
    )


def furuta():
    model = RobotModel((
        _link("arm", -1, "revolute", 0.095, (0.0425, 0.0, 0.0), _rod(0.095, 0.085)),
        _link("pendulum", 0, "revolute", 0.024, (0.0645, 0.0, 0.0), _rod(0.024, 0.129),
              rpy=(0.0, HALF_PI, 0.0), offset=(0.085, 0.0, 0.0)),
    ), name="furuta")
    return BenchmarkSystem(
        name="furuta",
        model=model,
        prior=_with_prior(model),
        q_range=np.array([[-np.pi, np.pi], [-np.pi, np.pi]]),
        qd_range=np.array([[-10.0, 10.0], [-20.0, 20.0]]),
        tau_range=np.array([[-0.1, 0.1], [0.0, 0.0]]),
        actuated=(0,),
        pendulum_joint=1,
        target_energy=2 * 0.024 * G * 0.0645,
        friction=dict(f_s=[2e-4, 2e-5], f_d=[2e-4, 2e-5], nu_s=[4.0, 4.0], mu_v=[5e-4, 2e-5]),
        # arm torque accelerates the pendulum pivot against the swing direction
        drive_sign=-1.0,
        centering=(0.05, 0.005),
        pump_gain=1.0,
        # small links: virtual moments are O(1e-2), so a finer step is needed
        fit_lr=2e-3,
    )


REGISTRY = {
    "pendulum": pendulum,
    "double_pendulum": double_pendulum,
    "cartpole": cartpole,
    "furuta": furuta,
}


def get_system(name):
    try:
        return REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(REGISTRY)}") from None


def energy_controller(system, gain=None, target=0.9, u_max=None, centering=None, sign=None):
    """Energy-pumping swing-up: drives the pendulum energy towards ``target``
    times the upright energy. The returned callable maps (t, q, qd) -> tau."""
    n = system.n_joints
    k_act = system.actuated[0]
    lo, hi = system.tau_range[k_act]
    u_max = hi if u_max is None else u_max
    E_ref = target * system.target_energy
    gain = system.pump_gain * u_max / max(E_ref, 1e-9) if gain is None else gain
    p = system.pendulum_joint
    sign = system.drive_sign if sign is None else sign
    centering = system.centering if centering is None else centering

    def control(t, q, qd):
        E = system.pendulum_energy(q, qd)
        if p == k_act:
            drive = qd[p]
        else:
            drive = qd[p] * np.cos(q[p])
        u = sign * gain * (E_ref - E) * drive
        if k_act != p:
            # keep the base joint near its origin
            u -= centering[0] * q[k_act] + centering[1] * qd[k_act]
        tau = np.zeros(n)
        tau[k_act] = u_max * np.tanh(u / u_max)
        return tau

    return control
