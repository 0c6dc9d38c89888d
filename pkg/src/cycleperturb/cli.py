"""Command-line entry point: ``cycleperturb {cycle,analyze,sweep,verify,plot}``.

Exit codes: 0 success, 1 verification failures, 2 configuration error (no
files written), 3 numerical failure (diagnostic.json written).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, pipeline
from .asymptotics import predict_displacement
from .config import ExperimentConfig, build_field, build_perturbation, load_config
from .cycle import basis_invariants
from .errors import ConfigError, CyclePerturbError, NoConvergence
from .inclusion import FILIPPOV, Policy
from .svg import Figure

log = logging.getLogger("cycleperturb")

CSV_FMT = "%.17g"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(pipeline._clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _write_csv(path: Path, columns: dict) -> None:
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt=CSV_FMT)


def _trajectory_columns(fn, T, n=1001) -> dict:
    ts = np.linspace(0.0, T, n)
    xs = fn(ts)
    return {"t": ts, "x1": xs[0], "x2": xs[1]}


# ---------------------------------------------------------------------------
# subcommands


def cmd_cycle(cfg: ExperimentConfig, out: Path, args) -> int:
    setup = pipeline.prepare(cfg, profile=False)
    info = pipeline.summarize_setup(setup)
    cols = _trajectory_columns(setup.cycle.x, setup.cycle.period)
    if setup.basis0 is not None:
        b = setup.basis0
        info["invariants"] = basis_invariants(b).as_dict()
        t = cols["t"]
        for name, fn in (("z_tilde", b.z_tilde), ("z_hat", b.z_hat), ("y", b.y)):
            v = fn(t)
            cols[f"{name}1"], cols[f"{name}2"] = v[0], v[1]
    _write_json(out / "cycle.json", info)
    _write_csv(out / "cycle.csv", cols)
    return 0


def _policy(name: str) -> Policy:
    if name == "filippov":
        return FILIPPOV
    if name == "midpoint":
        return Policy("fixed")
    return Policy("extremal", direction=np.array([0.0, 1.0]))


def cmd_analyze(cfg: ExperimentConfig, out: Path, args) -> int:
    setup = pipeline.prepare(cfg, seed_theta=args.seed_theta, profile=True)
    if not setup.nondegenerate:
        raise CyclePerturbError("cycle is degenerate; the first-order analysis does not apply")
    eps = cfg.ladder[0]
    res = pipeline.run_orbit(setup, eps, _policy(args.policy))
    orbit = res.orbit
    doc = {
        "eps": eps,
        "Delta": orbit.delta,
        "v": orbit.v,
        "residual": orbit.residual,
        "theta0": setup.seed.theta,
        "events": [{"t": e.t, "surface": e.surface, "kind": e.kind, "x": e.x} for e in orbit.events],
        "metrics": res.metrics,
    }
    _write_json(out / "analyze.json", doc)
    _write_csv(out / "orbit.csv", _trajectory_columns(orbit.x, orbit.period))
    _write_csv(out / "cycle.csv", _trajectory_columns(setup.rebased.x, setup.rebased.period))
    _write_csv(out / "profile.csv", pipeline.profile_table(setup, orbit))
    return 0


SWEEP_COLUMNS = ("eps", "sup_ratio", "sup_residual", "Delta", "v")


def _ladder_csv(path: Path, rows) -> None:
    _write_csv(path, {k: [r[k] for r in rows] for k in SWEEP_COLUMNS})


def cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> int:
    setup = pipeline.prepare(cfg)
    if not setup.nondegenerate:
        raise CyclePerturbError("cycle is degenerate; the first-order analysis does not apply")
    rows = [r.metrics for r in pipeline.run_ladder(setup, cfg.ladder, cfg.threads)]
    _ladder_csv(out / "sweep.csv", rows)
    return 0


def cmd_verify(cfg: ExperimentConfig, out: Path, args) -> int:
    start = time.perf_counter()
    report = pipeline.verify(cfg)
    _write_json(out / "report.json", report)
    if report["rows"]:
        _ladder_csv(out / "ladder.csv", report["rows"])
    _write_json(out / "run_meta.json", {"wall_time_s": round(time.perf_counter() - start, 3),
                                        "version": __version__, "config_sha256": report["config_sha256"]})
    for v in report["verdicts"]:
        print(f"{v['status'].upper():8s} {v['name']}")
    return 0 if report["passed"] else 1


def cmd_plot(cfg: ExperimentConfig, out: Path, args) -> int:
    setup = pipeline.prepare(cfg)
    cyc = setup.cycle
    fig = Figure("cycle and perturbed orbit", "x1", "x2", equal_aspect=True)
    ts = np.linspace(0.0, cyc.period, 801)
    fig.add(*cyc.x(ts), "cycle x0")
    if setup.nondegenerate:
        eps = cfg.ladder[0]
        res = pipeline.run_orbit(setup, eps)
        orbit, rb = res.orbit, setup.rebased
        fig.add(*orbit.shifted(ts), f"orbit eps={eps:g}")
        seg = predict_displacement(rb, setup.basis, setup.profile, orbit, ts)
        x0 = rb.x(ts)
        fig.add(*(x0 + seg[:, 0]), "predicted (lower end)", dashed=True)
        fig.add(*(x0 + seg[:, 1]), "predicted (upper end)", dashed=True)

        tab = pipeline.profile_table(setup, orbit)
        fig2 = Figure(f"transversal coefficient vs M_perp band, eps={eps:g}", "t", "value")
        fig2.add(tab["t"], tab["hi"], "sign * I(t)", fill_to=tab["lo"])
        fig2.add(tab["t"], tab["c"], "c_eps(t)")
        fig2.add(tab["t"], tab["residual"], "residual", dashed=True)
        fig2.save(out / "residual.svg")
    fig.save(out / "orbit.svg")
    return 0


COMMANDS = {"cycle": cmd_cycle, "analyze": cmd_analyze, "sweep": cmd_sweep, "verify": cmd_verify,
            "plot": cmd_plot}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML experiment file")
    common.add_argument("--out", help="output directory (overrides [run].out)")
    common.add_argument("--eps", type=float, nargs="+", help="eps value(s); replaces the ladder")
    common.add_argument("--paper-literal", action="store_true", default=None,
                        help="compare c_eps against gamma*I(t) instead of sigma*I(t)")
    common.add_argument("--seed", type=int, help="random seed for Monte Carlo selections")
    common.add_argument("--threads", type=int, help="worker threads for the eps ladder")
    p = argparse.ArgumentParser(prog="cycleperturb", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("cycle", parents=[common], help="cycle, monodromy and adjoint basis")
    an = sub.add_parser("analyze", parents=[common], help="single-eps orbit and section solve")
    an.add_argument("--seed-theta", type=float, help="phase theta0 on the cycle used as shooting seed")
    an.add_argument("--policy", choices=("filippov", "midpoint", "extremal"), default="filippov")
    sub.add_parser("sweep", parents=[common], help="eps ladder metrics CSV")
    sub.add_parser("verify", parents=[common], help="full acceptance suite")
    sub.add_parser("plot", parents=[common], help="SVG figures")
    return p


def _configure_logging() -> None:
    level = os.environ.get("CYCLEPERTURB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(out=args.out, seed=args.seed, threads=args.threads,
                                 paper_literal=args.paper_literal,
                                 ladder=tuple(args.eps) if args.eps else None)
        build_field(cfg)
        build_perturbation(cfg, 1.0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out, args)
    except CyclePerturbError as exc:
        diag = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, NoConvergence):
            diag.update(iterations=exc.iterations, best_residual=exc.best_residual, details=exc.diagnostic)
        _write_json(out / "diagnostic.json", diag)
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
