"""Batch command line: gen, identify, rollout, bench, bic.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from .actuation import KINDS, ActuatorError
from .bench import BENCH_VARIANTS, THREADS_ENV, render_svg, run_bench, table_header
from .data import DataError, TrajectoryDataset, gen_sim_trajectory, gen_uniform, load_dataset, save_dataset, save_trajectory
from .dynamics import DimensionError
from .integrate import DEFAULT_DT, rollout
from .model import ModelError, RobotModel
from .systems import REGISTRY, get_system
from .sysid import BlackBoxModel, NeaModel, OptimConfig, blackbox_fit, identify, nea_linear_regression, nmse

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# -- model files --------------------------------------------------------------


def load_model(spec, prior=True):
    """A benchmark system name (its nominal or true model) or a JSON model file."""
    if spec in REGISTRY:
        s = get_system(spec)
        return s.prior if prior else s.model
    if not os.path.exists(spec):
        raise DataError(f"{spec}: no such model file or benchmark system")
    try:
        with open(spec) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{spec}: {exc}") from exc
    kind = d.get("kind") if isinstance(d, dict) else None
    if kind == "blackbox":
        return BlackBoxModel.from_dict(d)
    if kind == "nea":
        return NeaModel(RobotModel.from_dict(d["kinematics"]), d["phi"], d.get("friction"))
    return RobotModel.from_dict(d)


def model_dict(model):
    if isinstance(model, BlackBoxModel):
        return model.to_dict()
    if isinstance(model, NeaModel):
        fr = None if model.friction is None else model.friction.tolist()
        return {"kind": "nea", "kinematics": model.kinematics.to_dict(), "phi": model.phi.tolist(), "friction": fr}
    return model.to_dict()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out, args, inputs=()):
    """Inputs, seeds and a config hash sufficient to repeat the run."""
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    files = {}
    for p in inputs:
        if p and os.path.isfile(p):
            files[p] = _sha256(p)
            if p.endswith(".json"):
                # dataset manifests list their member files
                try:
                    with open(p) as fh:
                        for f in json.load(fh).get("files", []):
                            fp = os.path.join(os.path.dirname(p), f)
                            if os.path.isfile(fp):
                                files[fp] = _sha256(fp)
                except (json.JSONDecodeError, AttributeError):
                    pass
    _write_json(os.path.join(out, "manifest.json"), {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": cfg,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "inputs": files,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    })


def _config(args, **extra):
    kw = {"seed": args.seed}
    if getattr(args, "lr", None) is not None:
        kw["lr"] = args.lr
    if getattr(args, "iters", None) is not None:
        kw["iterations"] = args.iters
    kw.update(extra)
    return OptimConfig(**kw)


# -- commands ---------------------------------------------------------------


def cmd_gen(args):
    system = get_system(args.system)
    if args.kind == "uniform":
        ds = gen_uniform(system, args.n, seed=args.seed, actuator=args.actuator or "identity")
    else:
        ds = gen_sim_trajectory(system, args.duration, dt=args.dt, seed=args.seed,
                                actuator=args.actuator or "viscous",
                                state_noise=args.state_noise, action_noise=args.action_noise)
    path = save_dataset(args.out, ds, args.name)
    write_manifest(args.out, args)
    print(f"wrote {len(ds)} samples to {path}")


def cmd_identify(args):
    ds = load_dataset(args.dataset)
    template = load_model(args.model, prior=True)
    if not isinstance(template, RobotModel):
        raise UsageError("identify needs a rigid-body model template")
    if ds.n_joints != template.n_joints:
        raise DimensionError(f"dataset has {ds.n_joints} joints, model has {template.n_joints}")
    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    if args.variant == "nea":
        res = nea_linear_regression(ds, template, friction=args.actuator not in (None, "identity"))
        model = res.model
        report = {"variant": "nea", "rank": res.rank, "n_params": res.n_params,
                  "identifiable": res.identifiable.tolist(), "residual": res.residual,
                  "phi": res.phi.tolist(), "friction": res.friction.tolist()}
    elif args.variant == "blackbox":
        model, curve = blackbox_fit(ds, cfg)
        report = {"variant": "blackbox", "config": asdict(cfg), "loss_curve": curve.tolist(),
                  "final_loss": float(curve.min())}
    else:
        fit = identify(ds, template, cfg, variant=args.variant, init=args.init, actuator=args.actuator)
        fit.save(os.path.join(args.out, "report.json"), os.path.join(args.out, "metrics.csv"),
                 os.path.join(args.out, "timing.txt"))
        model = fit.fitted
        report = None
    if report is not None:
        _write_json(os.path.join(args.out, "report.json"), report)
    _write_json(os.path.join(args.out, "model.json"), model_dict(model))
    write_manifest(args.out, args, [args.dataset, args.model])
    print(f"wrote {os.path.join(args.out, 'report.json')}")


def _read_rows(path, width):
    try:
        rows = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if rows.size and rows.shape[1] != width:
        raise DimensionError(f"{path}: expected {width} columns, got {rows.shape[1]}")
    return rows.reshape(-1, width)


def cmd_rollout(args):
    model = load_model(args.model, prior=False)
    n = model.n_joints
    if args.x0 is not None:
        try:
            x0 = np.array([float(v) for v in args.x0.split(",")])
        except ValueError as exc:
            raise UsageError(f"--x0: {exc}") from exc
    else:
        x0 = np.zeros(2 * n)
    if x0.shape != (2 * n,):
        raise DimensionError(f"initial state needs {2 * n} values, got {x0.size}")
    tau = _read_rows(args.torques, n) if args.torques else np.zeros((0, n))
    H = args.horizon if args.horizon is not None else len(tau)
    if H < 0:
        raise UsageError("--horizon must be >= 0")
    if len(tau) < H:
        # hold the last torque (zero if none given)
        tail = np.repeat(tau[-1:] if len(tau) else np.zeros((1, n)), H - len(tau), axis=0)
        tau = np.concatenate([tau, tail])
    traj = rollout(model, x0, tau[:H], args.dt)
    ds = TrajectoryDataset(traj.q, traj.qd, traj.qdd, traj.tau, "external", args.dt, [(0, len(traj))])
    os.makedirs(args.out, exist_ok=True)
    save_trajectory(os.path.join(args.out, "rollout.csv"), ds)
    _write_json(os.path.join(args.out, "rollout.json"), {"steps": H, "diverged": traj.diverged, "dt": args.dt})
    write_manifest(args.out, args, [args.model, args.torques])
    print(f"wrote {len(traj)} states ({'diverged' if traj.diverged else 'ok'})")


def cmd_bench(args):
    system = get_system(args.system)
    variants = [args.variant] if args.variant else list(BENCH_VARIANTS)
    actuators = [args.actuator] if args.actuator else ["viscous", "stribeck"]
    datasets = args.datasets.split(",")
    seeds = list(range(args.seed, args.seed + args.seeds))
    horizons = [int(h) for h in args.horizons.split(",")]
    cfg = _config(args)
    results = run_bench(system, datasets, variants, actuators, seeds, cfg, horizons)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "bench.csv"), "w", newline="") as fh:
        fh.write("# nmse: per-dimension state MSE over ground-truth variance, averaged over dimensions\n")
        w = csv.writer(fh)
        w.writerow(table_header(horizons))
        for r in results:
            w.writerow(r.row())
    render_svg(results, horizons, os.path.join(args.out, "bench.svg"))
    write_manifest(args.out, args)
    for r in results:
        print(f"{r.dataset:10s} {r.variant:9s} {r.actuator:12s} seed {r.seed}  1-step {r.one_step_loss:.3e}  "
              f"ood-div {r.ood_diverged}/{r.ood_rollouts}")


def cmd_bic(args):
    from .constraint import CupMotion, StringParams, identify_string, simulate_ball
    from .spatial import SpatialTransform

    truth = StringParams(length=args.length, cup=SpatialTransform(np.eye(3), np.array([0.0, 0.0, args.offset])))
    data = simulate_ball(truth, CupMotion(), args.duration, args.dt)
    init = replace(truth, length=args.length + args.init_error,
                   cup=SpatialTransform(np.eye(3), np.array([0.0, 0.0, args.offset + args.init_error])))
    sub = {k: v[::args.stride] for k, v in data.items()}
    kw = {k: v for k, v in (("iterations", args.iters), ("lr", args.lr)) if v is not None}
    fitted, curve = identify_string(sub, init, **kw)
    check = simulate_ball(fitted, CupMotion(), args.duration, args.dt)
    os.makedirs(args.out, exist_ok=True)
    n = len(data["t"])
    ds = TrajectoryDataset(np.zeros((n, 0)), np.zeros((n, 0)), np.zeros((n, 0)), np.zeros((n, 0)), "external",
                           args.dt, [(0, n)], {k: v for k, v in data.items() if k != "t"})
    save_trajectory(os.path.join(args.out, "ball.csv"), ds)
    _write_json(os.path.join(args.out, "report.json"), {
        "true_length": args.length, "fitted_length": float(fitted.length),
        "true_offset": [0.0, 0.0, args.offset], "fitted_offset": np.asarray(fitted.cup.translation).tolist(),
        "final_loss": float(curve[-1]),
        "resimulation_nmse": nmse(check["x_b"], data["x_b"]),
    })
    write_manifest(args.out, args)
    print(f"r = {float(fitted.length):.5f} m, offset = {np.round(fitted.cup.translation, 5).tolist()}")


# -- parser ----------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="diffnea", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--dt", type=float, default=DEFAULT_DT)
        if out:
            sp.add_argument("--out", required=True)

    g = sub.add_parser("gen", help="generate a dataset")
    common(g)
    g.add_argument("--system", choices=sorted(REGISTRY), required=True)
    g.add_argument("--kind", choices=("uniform", "trajectory"), default="uniform")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--duration", type=float, default=10.0)
    g.add_argument("--actuator", choices=("identity", "viscous", "stribeck"))
    g.add_argument("--state-noise", type=float, default=1e-3)
    g.add_argument("--action-noise", type=float, default=1e-2)
    g.add_argument("--name", default="dataset")
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("identify", help="fit a model to a dataset")
    common(i)
    i.add_argument("--model", required=True, help="benchmark system name or model JSON")
    i.add_argument("--dataset", required=True)
    i.add_argument("--variant", choices=BENCH_VARIANTS, default="diffnea")
    i.add_argument("--actuator", choices=KINDS)
    i.add_argument("--init", choices=("random", "prior"), default="prior")
    i.add_argument("--lr", type=float)
    i.add_argument("--iters", type=int)
    i.set_defaults(func=cmd_identify)

    r = sub.add_parser("rollout", help="simulate a model under a torque sequence")
    common(r)
    r.add_argument("--model", required=True)
    r.add_argument("--x0", help="comma-separated initial state [q, qd]")
    r.add_argument("--torques", help="CSV file, one row of joint torques per step")
    r.add_argument("--horizon", type=int)
    r.set_defaults(func=cmd_rollout)

    b = sub.add_parser("bench", help="variant x actuator x dataset benchmark grid")
    common(b)
    b.add_argument("--system", choices=sorted(REGISTRY), default="cartpole")
    b.add_argument("--variant", choices=BENCH_VARIANTS)
    b.add_argument("--actuator", choices=KINDS)
    b.add_argument("--datasets", default="uniform,trajectory")
    b.add_argument("--seeds", type=int, default=1)
    b.add_argument("--horizons", default="25,100,250")
    b.add_argument("--lr", type=float)
    b.add_argument("--iters", type=int)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("bic", help="ball-on-string identification and resimulation")
    common(c)
    c.add_argument("--length", type=float, default=0.4)
    c.add_argument("--offset", type=float, default=0.05)
    c.add_argument("--init-error", type=float, default=0.2)
    c.add_argument("--duration", type=float, default=10.0)
    c.add_argument("--stride", type=int, default=5)
    c.add_argument("--lr", type=float)
    c.add_argument("--iters", type=int)
    c.set_defaults(func=cmd_bic)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    if THREADS_ENV in os.environ and not os.environ[THREADS_ENV].isdigit():
        print(f"error: {THREADS_ENV} must be a positive integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelError, DimensionError, ActuatorError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
