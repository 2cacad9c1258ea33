"""System identification: losses, Adam, white-box fitting and the two baselines."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .actuation import ActuatorModel, mlp_forward, mlp_init, mlp_sizes, regularizer
from .dynamics import aba, inverse_dynamics, rnea
from .integrate import DEFAULT_DT, rollout
from .model import check_plausible, link_inertia

LOSS_KINDS = ("forward", "inverse")
VARIANTS = ("diffnea", "nokin")


class OptimizationError(ArithmeticError):
    def __init__(self, iteration, detail=""):
        self.iteration = iteration
        super().__init__(f"optimization failed at iteration {iteration}: {detail}")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 5e-3               # physical virtual parameters
    lr_network: float = 1e-3       # network weights
    lr_final: float = 1e-2         # final lr as a fraction of the initial (geometric decay)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 5000
    batch_size: int = None         # None: full batch
    seed: int = 0
    reg_weight: float = 1e-3
    loss: str = "forward"
    penalty_weights: tuple = (1e2, 1e1, 1e0)
    staged: bool = False           # fit links first, then links and actuator
    check_every: int = 100

    def __post_init__(self):
        if self.lr <= 0 or self.lr_network <= 0 or not 0 < self.lr_final <= 1:
            raise ValueError("learning rates must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")


# -- Adam -----------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state, cfg=None, lr=None):
    """One bias-corrected Adam update; ``lr`` may be per-parameter."""
    cfg = cfg or OptimConfig()
    lr = cfg.lr if lr is None else lr
    grads = np.asarray(grads, dtype=float)
    if grads.shape != np.shape(params):
        raise ValueError(f"gradient shape {grads.shape} does not match parameters {np.shape(params)}")
    if not np.all(np.isfinite(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))
        raise OptimizationError(state.t, f"non-finite gradient entries {bad[:5].tolist()}")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grads * grads
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + cfg.eps), AdamState(m, v, t)


# -- losses -----------------------------------------------------------------


def forward_loss(theta, dataset, template, reg_weight=0.0):
    """sum_i |qdd_i - aba(q_i, qd_i, actuator(tau_i))|^2 plus the actuator regularizer."""
    if len(dataset) == 0:
        return 0.0
    model = template.with_parameters(theta)
    pred = model.forward_dynamics(dataset.q, dataset.qd, dataset.tau)
    err = dataset.qdd - pred
    loss = ad.sum(err * err)
    if reg_weight:
        loss = loss + reg_weight * regularizer(model.actuator, dataset.tau, dataset.q, dataset.qd)
    return loss


def inverse_loss(theta, dataset, template, reg_weight=0.0):
    """sum_i |tau_i - inverse_dynamics(q_i, qd_i, qdd_i)|^2 plus the regularizer."""
    if len(dataset) == 0:
        return 0.0
    model = template.with_parameters(theta)
    err = dataset.tau - inverse_dynamics(model, dataset.q, dataset.qd, dataset.qdd)
    loss = ad.sum(err * err)
    if reg_weight:
        loss = loss + reg_weight * regularizer(model.actuator, dataset.tau, dataset.q, dataset.qd)
    return loss


LOSSES = {"forward": forward_loss, "inverse": inverse_loss}


def one_step_loss(model, dataset):
    """Mean squared one-step acceleration error per sample."""
    if len(dataset) == 0:
        return 0.0
    err = dataset.qdd - np.asarray(model.forward_dynamics(dataset.q, dataset.qd, dataset.tau))
    return float(np.mean(np.sum(err * err, -1)))


# -- reports -------------------------------------------------------------


@dataclass
class FitReport:
    variant: str
    actuator: str
    init: str
    config: dict
    loss_curve: list
    final_loss: float
    one_step_loss: float
    theta: list
    model: dict
    physical: list
    actuator_coefficients: dict
    gradient_check: dict
    plausibility_checks: list
    rollout: dict = field(default_factory=dict)
    wall_clock: float = 0.0        # kept out of the serialized report
    fitted: object = None

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k not in ("wall_clock", "fitted")}
        return d

    def save(self, path, metrics_path=None, timing_path=None):
        with open(path, "w") as fh:
            json.dump(_plain(self.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if metrics_path:
            write_metrics(metrics_path, [self])
        if timing_path:
            with open(timing_path, "w") as fh:
                fh.write(f"{self.wall_clock:.3f}\n")


def write_metrics(path, reports):
    """Flat table: one row per (report, horizon)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "actuator", "init", "final_loss", "one_step_loss", "horizon", "nmse", "diverged"])
        for r in reports:
            rows = r.rollout.get("horizons") or [None]
            for k, h in enumerate(rows):
                nm = r.rollout["nmse"][k] if h is not None else ""
                dv = r.rollout.get("diverged", "") if h is not None else ""
                w.writerow([r.variant, r.actuator, r.init, repr(r.final_loss), repr(r.one_step_loss), h, repr(nm), dv])


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


# -- white-box identification ---------------------------------------------


def gradient_check(loss_fn, theta, rng, n_coords=20, h=1e-6):
    """check_gradient restricted to a random subset of coordinates."""
    idx = np.sort(rng.choice(theta.size, size=min(n_coords, theta.size), replace=False))

    def sub(z):
        return loss_fn(_scatter(theta, idx, z))

    return {"coords": idx.tolist(), "max_rel_error": ad.check_gradient(sub, theta[idx], h)}


def _scatter(base, idx, z):
    """base with entries ``idx`` replaced by ``z`` (z may be a Var)."""
    if not ad.is_var(z):
        out = base.copy()
        out[idx] = z
        return out
    P = np.zeros((base.size, len(idx)))
    P[idx, np.arange(len(idx))] = 1.0
    rest = base.copy()
    rest[idx] = 0.0
    return rest + P @ z


def prepare_model(template, variant="diffnea", init="prior", actuator=None, seed=0):
    """Template with variant freezing, initial guess and actuator applied."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    model = template.with_variant(variant)
    if actuator is not None:
        if isinstance(actuator, str):
            actuator = ActuatorModel.make(actuator, model.n_joints, seed=seed)
        model = model.with_actuator(actuator)
    if init == "random":
        model = model.randomized(seed)
    elif init != "prior":
        raise ValueError("init must be 'random' or 'prior'")
    return model


def identify(dataset, template, cfg=None, variant="diffnea", init="prior", actuator=None,
             validation=None, horizons=(), bound=1e6, log=None):
    """Fit virtual (and actuator) parameters with Adam on the configured loss.

    Every ``cfg.check_every`` iterations the derived physics of the current
    iterate is checked for plausibility. The best iterate is returned.
    """
    cfg = cfg or OptimConfig()
    if dataset.n_joints != template.n_joints:
        raise ValueError(f"dataset has {dataset.n_joints} joints, model has {template.n_joints}")
    started = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    model = prepare_model(template, variant, init, actuator, cfg.seed)
    theta = model.parameter_vector()
    net = model.network_mask()
    base_lr = np.where(net, cfg.lr_network, cfg.lr)
    n_link = theta.size - (model.actuator.n_params if model.learn_actuator else 0)
    loss_of = LOSSES[cfg.loss]

    def full_loss(th, ds=dataset):
        return loss_of(th, ds, model, cfg.reg_weight)

    state = AdamState.zeros(theta.size)
    curve, checks = [], []
    best_loss, best_theta = np.inf, theta.copy()
    for it in range(cfg.iterations):
        if cfg.batch_size and cfg.batch_size < len(dataset):
            batch = dataset.subset(np.sort(rng.choice(len(dataset), cfg.batch_size, replace=False)))
        else:
            batch = dataset
        if it % cfg.check_every == 0:
            _assert_plausible(model.with_parameters(theta), it)
            checks.append(it)
        try:
            loss, g = ad.value_and_grad(lambda th: full_loss(th, batch), theta)
        except ArithmeticError as exc:
            raise OptimizationError(it, str(exc)) from exc
        if not np.isfinite(loss):
            raise OptimizationError(it, "non-finite loss")
        curve.append(loss)
        if loss < best_loss:
            best_loss, best_theta = loss, theta.copy()
        if cfg.staged and it < cfg.iterations // 2:
            g = g.copy()
            g[n_link:] = 0.0
        lr = base_lr * cfg.lr_final ** (it / max(cfg.iterations - 1, 1))
        theta, state = adam_step(theta, g, state, cfg, lr)
        if log and it % max(cfg.iterations // 10, 1) == 0:
            log(f"iter {it:6d}  loss {loss:.6e}")
    final = full_loss(theta)
    final = float(ad.value(final))
    if final < best_loss:
        best_loss, best_theta = final, theta
    fitted = model.with_parameters(best_theta)
    _assert_plausible(fitted, cfg.iterations)
    checks.append(cfg.iterations)

    sample = dataset.subset(np.arange(min(len(dataset), 10)))
    grad_rng = np.random.default_rng(cfg.seed + 1)
    grad_check = {
        "init": gradient_check(lambda th: loss_of(th, sample, model, cfg.reg_weight), model.parameter_vector(), grad_rng),
        "final": gradient_check(lambda th: loss_of(th, sample, model, cfg.reg_weight), best_theta, grad_rng),
    }
    report = FitReport(
        variant=variant,
        actuator=model.actuator.kind,
        init=init,
        config=asdict(cfg),
        loss_curve=curve,
        final_loss=float(best_loss),
        one_step_loss=one_step_loss(fitted, dataset),
        theta=best_theta.tolist(),
        model=fitted.to_dict(),
        physical=fitted.physical(),
        actuator_coefficients=fitted.actuator.coefficients(),
        gradient_check=grad_check,
        plausibility_checks=checks,
    )
    if validation:
        report.rollout = rollout_nmse(fitted, validation, horizons, bound=bound)
    report.wall_clock = time.perf_counter() - started
    report.fitted = fitted
    return report


def _assert_plausible(model, it):
    for l in model.links:
        try:
            check_plausible(l.params)
        except AssertionError as exc:
            raise OptimizationError(it, f"implausible parameters on link {l.name!r}") from exc


# -- NEA linear regression ---------------------------------------------------

STANDARD_NAMES = ("m", "mx", "my", "mz", "Jxx", "Jyy", "Jzz", "Jxy", "Jxz", "Jyz")


def inertia_from_standard(phi):
    """6x6 spatial inertia from (m, m*c, J_o) about the link origin."""
    m, h, (xx, yy, zz, xy, xz, yz) = phi[0], np.asarray(phi[1:4]), phi[4:]
    J = np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])
    H = np.array([[0.0, -h[2], h[1]], [h[2], 0.0, -h[0]], [-h[1], h[0], 0.0]])
    return np.block([[J, H], [H.T, m * np.eye(3)]])


def standard_from_model(model):
    """Per-link standard parameters of a plausible model (for comparison)."""
    out = []
    for l in model.links:
        M = np.asarray(link_inertia(l.params).matrix())
        J, H, m = M[:3, :3], M[:3, 3:], M[3, 3]
        out.append([m, H[2, 1], H[0, 2], H[1, 0], J[0, 0], J[1, 1], J[2, 2], J[0, 1], J[0, 2], J[1, 2]])
    return np.array(out)


@dataclass
class NeaResult:
    phi: np.ndarray                 # (n_links, 10)
    friction: np.ndarray            # (n, 2) viscous and Coulomb, or empty
    rank: int
    n_params: int
    singular_values: np.ndarray
    identifiable: np.ndarray        # per standard parameter, individually determined
    residual: float
    model: "NeaModel" = None


class NeaModel:
    """Rigid-body model with regressed (possibly implausible) standard parameters."""

    def __init__(self, kinematics, phi, friction=None):
        self.kinematics = kinematics
        self.phi = np.asarray(phi, dtype=float)
        self.friction = None if friction is None or np.size(friction) == 0 else np.asarray(friction)
        self.inertias = [inertia_from_standard(p) for p in self.phi]

    @property
    def n_joints(self):
        return self.kinematics.n_joints

    def _friction(self, qd):
        if self.friction is None:
            return 0.0
        return self.friction[:, 0] * qd + self.friction[:, 1] * np.sign(qd)

    def forward_dynamics(self, q, qd, tau_d):
        return aba(self.kinematics, q, qd, tau_d - self._friction(qd), inertias=self.inertias)

    def inverse_dynamics(self, q, qd, qdd):
        return rnea(self.kinematics, q, qd, qdd, inertias=self.inertias) + self._friction(qd)


def nea_linear_regression(dataset, kinematics, friction=False, rcond=None):
    """Least squares on the regressor of the 10 standard parameters per link.

    Regressor columns come from rnea evaluated with unit basis inertias.
    With ``friction`` per-joint viscous and Coulomb columns are appended.
    """
    n = kinematics.n_joints
    N = len(dataset)
    cols = []
    zero = [np.zeros((6, 6))] * n
    for i in range(n):
        for j in range(10):
            e = np.zeros(10)
            e[j] = 1.0
            inert = list(zero)
            inert[i] = inertia_from_standard(e)
            cols.append(np.asarray(rnea(kinematics, dataset.q, dataset.qd, dataset.qdd, inertias=inert)))
    if friction:
        for i in range(n):
            for feat in (dataset.qd[:, i], np.sign(dataset.qd[:, i])):
                c = np.zeros((N, n))
                c[:, i] = feat
                cols.append(c)
    Y = np.stack(cols, -1).reshape(N * n, -1)
    y = dataset.tau.reshape(-1)
    sol, _, rank, sv = np.linalg.lstsq(Y, y, rcond=rcond)
    # a parameter is individually identifiable iff its unit vector lies in the row space
    _, s, Vt = np.linalg.svd(Y, full_matrices=True)
    tol = (s[0] if s.size else 0.0) * max(Y.shape) * np.finfo(float).eps
    null = Vt[np.sum(s > tol):]
    identifiable = np.linalg.norm(null, axis=0) < 1e-8 if null.size else np.ones(Y.shape[1], dtype=bool)
    phi = sol[:10 * n].reshape(n, 10)
    fr = sol[10 * n:].reshape(n, 2) if friction else np.zeros((0, 2))
    resid = float(np.sum((Y @ sol - y) ** 2))
    res = NeaResult(phi, fr, int(rank), Y.shape[1], sv, identifiable, resid)
    res.model = NeaModel(kinematics, phi, fr if friction else None)
    return res


# -- black-box baseline ----------------------------------------------------


class BlackBoxModel:
    """MLP (q, qd, tau) -> qdd with fixed input/output normalization."""

    def __init__(self, n_joints, params, x_mean, x_std, y_mean, y_std, hidden=(64, 64)):
        self.n = n_joints
        self.hidden = tuple(hidden)
        self.sizes = mlp_sizes(3 * n_joints, self.hidden, n_joints)
        self.params = params
        self.x_mean, self.x_std = np.asarray(x_mean), np.asarray(x_std)
        self.y_mean, self.y_std = np.asarray(y_mean), np.asarray(y_std)

    @property
    def n_joints(self):
        return self.n

    def normalized(self, x, params=None):
        return mlp_forward(self.params if params is None else params, (x - self.x_mean) / self.x_std, self.sizes)

    def forward_dynamics(self, q, qd, tau, params=None):
        shape = np.broadcast_shapes(np.shape(q), np.shape(qd), np.shape(tau))
        x = np.concatenate([np.broadcast_to(v, shape) for v in (q, qd, tau)], -1)
        return self.normalized(x, params) * self.y_std + self.y_mean

    def to_dict(self):
        return {"kind": "blackbox", "n_joints": self.n, "hidden": list(self.hidden),
                "params": np.asarray(ad.value(self.params)).tolist(),
                "x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "y_mean": self.y_mean.tolist(), "y_std": self.y_std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["n_joints"], np.asarray(d["params"]), d["x_mean"], d["x_std"], d["y_mean"], d["y_std"], d["hidden"])


def blackbox_fit(dataset, cfg=None, hidden=(64, 64)):
    """Train the black-box forward model; returns (model, loss curve).

    The loss is the mean squared error of normalized accelerations.
    """
    cfg = cfg or OptimConfig()
    n = dataset.n_joints
    X = np.concatenate([dataset.q, dataset.qd, dataset.tau], -1)
    Y = dataset.qdd
    x_mean, x_std = X.mean(0), X.std(0)
    y_mean, y_std = Y.mean(0), Y.std(0)
    x_std = np.where(x_std > 1e-12, x_std, 1.0)
    y_std = np.where(y_std > 1e-12, y_std, 1.0)
    rng = np.random.default_rng(cfg.seed)
    model = BlackBoxModel(n, None, x_mean, x_std, y_mean, y_std, hidden)
    psi = mlp_init(model.sizes, rng, out_scale=1.0)
    Yn = (Y - y_mean) / y_std
    state = AdamState.zeros(psi.size)
    curve = []
    best, best_psi = np.inf, psi
    for it in range(cfg.iterations):
        if cfg.batch_size and cfg.batch_size < len(X):
            idx = np.sort(rng.choice(len(X), cfg.batch_size, replace=False))
        else:
            idx = slice(None)

        def loss(p):
            err = model.normalized(X[idx], p) - Yn[idx]
            return ad.mean(err * err)

        val, g = ad.value_and_grad(loss, psi)
        if not np.isfinite(val):
            raise OptimizationError(it, "non-finite loss")
        curve.append(val)
        if val < best:
            best, best_psi = val, psi
        lr = cfg.lr_network * cfg.lr_final ** (it / max(cfg.iterations - 1, 1))
        psi, state = adam_step(psi, g, state, cfg, lr)
    model.params = best_psi
    return model, np.array(curve)


# -- evaluation -------------------------------------------------------------


def nmse(pred, truth):
    """Per-dimension MSE over the ground-truth variance, averaged over dimensions."""
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    var = np.maximum(truth.var(0), 1e-12)
    return float(np.mean(np.mean((pred - truth) ** 2, 0) / var))


def rollout_nmse(model, trajectories, horizons, n_starts=5, bound=1e6, dt=None):
    """Open-loop rollouts from evenly spaced starts of each trajectory.

    Returns the state nMSE for every horizon (in steps) and whether any
    rollout diverged; a diverged rollout makes every horizon it did not reach
    infinite.
    """
    horizons = [int(h) for h in horizons]
    if not horizons:
        return {}
    H = max(horizons)
    preds = {h: [] for h in horizons}
    truths = {h: [] for h in horizons}
    diverged = count = 0
    for tr in trajectories:
        step = tr.dt if dt is None else dt
        last = len(tr) - H - 1
        if last < 0:
            continue
        for s in np.linspace(0, last, n_starts).astype(int):
            x0 = np.concatenate([tr.q[s], tr.qd[s]])
            out = rollout(model, x0, tr.tau[s:s + H], step, bound)
            count += 1
            diverged += int(out.diverged)
            pred = out.states
            ref = tr.states[s:s + H + 1]
            for h in horizons:
                if len(pred) > h:
                    preds[h].append(pred[1:h + 1])
                else:
                    preds[h].append(np.full((h, pred.shape[1]), np.inf))
                truths[h].append(ref[1:h + 1])
    scores = []
    for h in horizons:
        if not preds[h]:
            scores.append(float("nan"))
            continue
        P, T = np.concatenate(preds[h]), np.concatenate(truths[h])
        with np.errstate(all="ignore"):
            scores.append(nmse(P, T) if np.all(np.isfinite(P)) else float("inf"))
    return {"horizons": horizons, "nmse": scores, "diverged": diverged, "rollouts": count}
