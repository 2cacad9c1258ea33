"""Benchmark grid: model variants x actuator kinds x datasets.

Each cell fits one model, reports its one-step loss, rollout nMSE against
held-out trajectories and divergence flags from out-of-domain starts.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import gen_sim_trajectory, gen_uniform
from .dynamics import system_energy
from .integrate import rollout
from .sysid import OptimConfig, blackbox_fit, identify, nea_linear_regression, one_step_loss, rollout_nmse

BENCH_VARIANTS = ("nea", "diffnea", "nokin", "blackbox")
ENERGY_BOUNDED = ("identity", "viscous", "stribeck", "nn-friction")
THREADS_ENV = "DIFFNEA_THREADS"
ENERGY_TOL = 0.05


@dataclass
class CellResult:
    system: str
    dataset: str
    variant: str
    actuator: str
    seed: int
    one_step_loss: float
    horizons: list
    nmse: list
    diverged: int
    ood_diverged: int
    ood_rollouts: int

    def row(self):
        return [self.system, self.dataset, self.variant, self.actuator, self.seed, repr(self.one_step_loss),
                self.diverged, self.ood_diverged, self.ood_rollouts] + [repr(v) for v in self.nmse]


def rest_energy(system, n=721):
    """Lowest total energy of the true system at rest (pendulum link hanging)."""
    q = np.zeros((n, system.n_joints))
    q[:, system.pendulum_joint] = np.linspace(-np.pi, np.pi, n)
    return min(sum(system_energy(system.model, qi, np.zeros(system.n_joints))) for qi in q)


def energy_gain(system, q, qd, e_rest=None):
    """Largest true-system energy above rest along a path, relative to its start."""
    e_rest = rest_energy(system) if e_rest is None else e_rest
    e = np.array([sum(system_energy(system.model, a, b)) for a, b in zip(q, qd)]) - e_rest
    return float(np.max(e) / max(e[0], 1e-9))


def ood_starts(system, dataset, n, seed, scale=(1.5, 3.0)):
    """States outside the training box: velocities 1.5-3x beyond the data range."""
    rng = np.random.default_rng(seed)
    nj = system.n_joints
    vmax = np.max(np.abs(dataset.qd), axis=0)
    q = rng.uniform(system.q_range[:, 0], system.q_range[:, 1], size=(n, nj))
    qd = rng.choice([-1.0, 1.0], size=(n, nj)) * rng.uniform(*scale, size=(n, nj)) * vmax
    return np.concatenate([q, qd], -1)


def ood_divergence(model, system, dataset, n=5, seed=0, duration=2.0, dt=1.0 / 250.0, tol=ENERGY_TOL):
    """Zero-torque rollouts from out-of-domain starts; returns the divergence count.

    The true system is passive, so without input its energy cannot grow. A
    rollout counts as diverged when it trips the state guard or when the true
    energy along the predicted path rises more than ``tol`` above its start.
    """
    steps = int(round(duration / dt))
    u = np.zeros((steps, system.n_joints))
    e_rest = rest_energy(system)
    count = 0
    for x0 in ood_starts(system, dataset, n, seed):
        r = rollout(model, x0, u, dt)
        count += int(r.diverged or not energy_gain(system, r.q, r.qd, e_rest) <= 1.0 + tol)
    return count


def make_dataset(system, kind, seed, actuator="stribeck", n=400, duration=8.0, stride=4):
    """``uniform`` (ideal system) or ``trajectory`` (noisy swing-up, subsampled)."""
    if kind == "uniform":
        return gen_uniform(system, n, seed=seed)
    if kind == "trajectory":
        x0 = np.zeros(2 * system.n_joints)
        x0[system.pendulum_joint] = np.random.default_rng(seed).uniform(-0.3, 0.3)
        ds = gen_sim_trajectory(system, duration, seed=seed, actuator=actuator, x0=x0)
        trim = 25
        idx = np.arange(trim, len(ds) - trim, stride)
        sub = ds.subset(idx)
        sub.meta["source"] = ds
        return sub
    raise ValueError(f"unknown dataset kind {kind!r}")


def fit_cell(system, dataset, variant, actuator, cfg):
    """Fitted forward model for one grid cell."""
    if variant == "nea":
        return nea_linear_regression(dataset, system.model, friction=actuator != "identity").model
    if variant == "blackbox":
        model, _ = blackbox_fit(dataset, cfg)
        return model
    cfg = replace(cfg, lr=system.fit_lr) if cfg.lr == OptimConfig.lr else cfg
    report = identify(dataset, system.prior, cfg, variant=variant, init="prior", actuator=actuator)
    return report.fitted


def run_cell(system, dataset_kind, variant, actuator, seed, cfg, horizons=(25, 100, 250), validation=None,
             truth_actuator="stribeck", n_ood=5):
    ds = make_dataset(system, dataset_kind, seed, truth_actuator)
    model = fit_cell(system, ds, variant, actuator, replace(cfg, seed=seed))
    if validation is None:
        validation = [gen_sim_trajectory(system, 4.0, seed=10_000 + seed, actuator=truth_actuator,
                                         differentiate=False).trajectories()[0]]
    with np.errstate(all="ignore"):
        try:
            loss = one_step_loss(model, ds)
        except ArithmeticError:
            loss = float("inf")
        roll = rollout_nmse(model, validation, horizons, n_starts=3)
        ood = ood_divergence(model, system, ds, n=n_ood, seed=seed)
    return CellResult(system.name, dataset_kind, variant, actuator if variant != "blackbox" else "-", seed,
                      loss, roll["horizons"], roll["nmse"], roll["diverged"], ood, n_ood)


def grid(variants, actuators):
    cells = []
    for v in variants:
        if v not in BENCH_VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
        if v == "blackbox":
            cells.append((v, "-"))
        elif v == "nea":
            cells += [(v, a) for a in actuators if a in ("identity", "viscous", "stribeck")] or [(v, "identity")]
        else:
            cells += [(v, a) for a in actuators]
    # drop duplicates while keeping order
    return list(dict.fromkeys(cells))


def run_bench(system, datasets=("uniform", "trajectory"), variants=BENCH_VARIANTS, actuators=("viscous",),
              seeds=(0,), cfg=None, horizons=(25, 100, 250), threads=None):
    """Evaluate the full grid; cells run on a thread pool in a fixed order."""
    cfg = cfg or OptimConfig()
    threads = threads or int(os.environ.get(THREADS_ENV, "1"))
    jobs = [(d, v, a, s) for d in datasets for v, a in grid(variants, actuators) for s in seeds]

    def work(job):
        d, v, a, s = job
        return run_cell(system, d, v, a if a != "-" else "identity", s, cfg, horizons)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(work, jobs))
    return [work(j) for j in jobs]


def table_header(horizons):
    return ["system", "dataset", "variant", "actuator", "seed", "one_step_loss", "diverged", "ood_diverged",
            "ood_rollouts"] + [f"nmse_h{h}" for h in horizons]


def render_svg(results, horizons, path, width=480, height=320):
    """Log-scale nMSE versus horizon, one polyline per cell."""
    pad = 40
    vals = [v for r in results for v in r.nmse if np.isfinite(v) and v > 0]
    lo, hi = (np.log10(min(vals)), np.log10(max(vals))) if vals else (-1.0, 1.0)
    hi = hi if hi > lo else lo + 1.0
    hx = max(horizons)

    def xy(h, v):
        x = pad + (width - 2 * pad) * h / hx
        y = height - pad - (height - 2 * pad) * (np.log10(v) - lo) / (hi - lo)
        return f"{x:.1f},{y:.1f}"

    palette = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"]
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{pad}" y="20" font-size="12">nMSE vs horizon (log10 {lo:.1f} .. {hi:.1f})</text>']
    for k, r in enumerate(results):
        pts = [xy(h, v) for h, v in zip(r.horizons, r.nmse) if np.isfinite(v) and v > 0]
        if pts:
            c = palette[k % len(palette)]
            lines.append(f'<polyline fill="none" stroke="{c}" points="{" ".join(pts)}"/>')
            lines.append(f'<text x="{width - pad}" y="{30 + 12 * k}" font-size="9" fill="{c}" '
                         f'text-anchor="end">{r.dataset}/{r.variant}/{r.actuator}</text>')
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
