"""End-to-end analysis: cycle, adjoint basis, Melnikov seed, eps ladder and verdicts.

Every number that ends up in a report is produced here from the numerical
modules; the command-line layer only routes configuration and writes files.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import __version__
from .asymptotics import (MperpProfile, build_symmetric_solution, adjoint_from_linearized_residual,
                          gauge_spread, inclusion_residual, melnikov_zeros, mperp, mperp_profile, mperp_symmetric,
                          predict_displacement, seed_phase, displacement_ratio, transversal_coefficient, MelnikovZero)
from .config import ExperimentConfig, build_field, build_perturbation
from .cycle import (AdjointBasis, Cycle, Monodromy, basis_invariants, build_adjoint_basis, find_cycle,
                    is_nondegenerate, monodromy)
from .errors import NotSymmetric
from .inclusion import (FILIPPOV, PeriodicOrbit, Policy, SectionSurface, attach_section, build_section,
                        find_periodic, membership_profile, solve_section)
from .model import PlanarField, SetValuedPerturbation
from .oracles import bang_bang_mperp, monte_carlo_mperp

log = logging.getLogger("cycleperturb")

GRID_TIMES = 16


@dataclass
class Setup:
    cfg: ExperimentConfig
    field: PlanarField
    cycle: Cycle                      # as found from the configured seed
    mono: Monodromy
    nondegenerate: bool
    pert: Optional[SetValuedPerturbation] = None
    melnikov: tuple = ()
    seed: Optional[MelnikovZero] = None
    rebased: Optional[Cycle] = None   # same orbit, t = 0 at x0(theta0)
    basis: Optional[AdjointBasis] = None
    profile: Optional[MperpProfile] = None
    section: Optional[SectionSurface] = None
    basis0: Optional[AdjointBasis] = None   # basis on the cycle as found


def prepare(cfg: ExperimentConfig, seed_theta: Optional[float] = None, profile: bool = True) -> Setup:
    """Cycle, nondegeneracy, Melnikov seed phase and the re-based analysis objects."""
    tol = cfg.tolerances
    fld = build_field(cfg)
    cyc = find_cycle(fld, cfg.cycle_seed, tol=tol.integration)
    mono = monodromy(cyc)
    nondeg = is_nondegenerate(mono, tol.nondegeneracy)
    log.info("cycle period %.12g, multipliers %s, nondegenerate %s", cyc.period, mono.multipliers, nondeg)
    setup = Setup(cfg, fld, cyc, mono, nondeg, pert=build_perturbation(cfg, cyc.period))
    if not nondeg:
        return setup
    basis0 = setup.basis0 = build_adjoint_basis(cyc, mono=mono)
    if seed_theta is None:
        setup.melnikov = tuple(melnikov_zeros(cyc, basis0, setup.pert))
        setup.seed = seed_phase(list(setup.melnikov))
    else:
        setup.seed = MelnikovZero(float(seed_theta) % cyc.period, float("nan"))
    log.info("seed phase theta0 = %.12g", setup.seed.theta)
    setup.rebased = cyc.shifted(setup.seed.theta) if setup.seed.theta != 0.0 else cyc
    setup.basis = build_adjoint_basis(setup.rebased)
    if profile:
        setup.profile = mperp_profile(setup.rebased, setup.basis, setup.pert, tol.quadrature,
                                      sigma=cfg.sigma, literal=cfg.paper_literal)
    setup.section = build_section(setup.rebased)
    return setup


@dataclass
class OrbitResult:
    eps: float
    orbit: PeriodicOrbit
    metrics: dict = field(default_factory=dict)


def run_orbit(setup: Setup, eps: float, policy: Policy = FILIPPOV) -> OrbitResult:
    cfg, cyc = setup.cfg, setup.rebased
    tol = cfg.tolerances
    orbit = find_periodic(setup.field, setup.pert, eps, cyc.base_point, policy=policy, tol=tol.integration,
                          shoot_tol=tol.shooting, cycle=cyc)
    sol = solve_section(orbit, setup.section, tol=tol.section)
    orbit = attach_section(orbit, sol)
    m = {
        "eps": float(eps),
        "Delta": sol.delta,
        "v": sol.v,
        "shooting_residual": orbit.residual,
        "section_residual": sol.residual,
        "section_condition": sol.condition,
        "winding": sol.winding,
        "events": len(orbit.events),
        "membership": membership_profile(orbit, setup.field, setup.pert, 1000),
        "sup_ratio": displacement_ratio(orbit, cyc),
    }
    if setup.profile is not None:
        ts = setup.profile.times
        m["sup_residual"] = float(np.max(inclusion_residual(orbit, cyc, setup.basis, setup.profile, ts)))
        other = replace(setup.profile, literal=not setup.profile.literal)
        m["sup_residual_alt"] = float(np.max(inclusion_residual(orbit, cyc, setup.basis, other, ts)))
    log.info("eps=%g Delta=%.6g v=%.6g ratio=%.6g", eps, sol.delta, sol.v, m["sup_ratio"])
    return OrbitResult(float(eps), orbit, m)


def run_ladder(setup: Setup, ladder, threads: int = 1) -> list:
    if threads <= 1:
        return [run_orbit(setup, e) for e in ladder]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda e: run_orbit(setup, e), ladder))


# ---------------------------------------------------------------------------
# verdicts


def _verdict(name, ok, witness, criterion):
    status = "skipped" if ok is None else ("pass" if ok else "fail")
    return {"name": name, "status": status, "criterion": criterion, "witness": _clean(witness)}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def _slope(eps, vals) -> float:
    return float(np.polyfit(np.log(eps), np.log(vals), 1)[0])


def check_structure(setup: Setup) -> dict:
    inv = basis_invariants(setup.basis)
    ok = (inv.perron <= 1e-7 and inv.orthogonality <= 1e-8 and inv.normalization <= 1e-8
          and inv.liouville <= 1e-8 and inv.secular_jump <= 1e-7)
    return _verdict("structural_invariants", ok, inv.as_dict(),
                    "perron<=1e-7, orthogonality<=1e-8, normalization<=1e-8, liouville<=1e-8, secular_jump<=1e-7")


def check_nondegeneracy(setup: Setup) -> dict:
    mono = setup.mono
    mult_dev = float(np.max(np.abs(mono.multipliers - 1.0)))
    consistent = setup.nondegenerate == (abs(mono.shear) > 1e-3 and mult_dev <= 1e-6)
    expected = setup.cfg.expect_nondegenerate
    ok = consistent and (expected is None or expected == setup.nondegenerate)
    return _verdict("nondegeneracy", ok,
                    {"nondegenerate": setup.nondegenerate, "shear_b": mono.shear, "multiplier_deviation": mult_dev,
                     "monodromy_deviation": mono.deviation, "expected": expected},
                    "nondegenerate iff |b|>1e-3 with both multipliers within 1e-6 of 1")


def check_displacement_bound(rows) -> dict:
    eps = np.array([r["eps"] for r in rows])
    r = np.array([r["sup_ratio"] for r in rows])
    spread, slope = float(r.max() / r.min()), _slope(eps, r)
    return _verdict("displacement_bound", spread <= 2.0 and abs(slope) <= 0.3,
                    {"ratios": r, "max_over_min": spread, "loglog_slope": slope},
                    "max/min <= 2 and |log-log slope| <= 0.3")


def check_section(rows) -> dict:
    eps = np.array([r["eps"] for r in rows])
    d = np.abs([r["Delta"] for r in rows])
    v = np.abs([r["v"] for r in rows])
    vr = v / eps
    windings = [r["winding"] for r in rows]
    to_zero = bool(d[-1] < d[0] and v[-1] < v[0] and np.all(np.diff(d) <= 0.2 * d[:-1])
                   and np.all(np.diff(v) <= 0.2 * v[:-1]))
    bounded = float(vr.max() / vr.min()) if vr.min() > 0 else float("inf")
    unique = all(abs(w) == 1 for w in windings)
    return _verdict("section_solver", to_zero and bounded <= 2.0 and unique,
                    {"abs_Delta": d, "abs_v": v, "v_over_eps_max_over_min": bounded, "winding": windings,
                     "section_residual_max": max(r["section_residual"] for r in rows)},
                    "Delta, v -> 0; |v|/eps max/min <= 2; winding number +-1 on the box")


def check_inclusion(rows, profile: MperpProfile) -> dict:
    res = np.array([r["sup_residual"] for r in rows])
    halvings = res[1:] / res[:-1]
    bound = 0.1 * max(1.0, profile.max_width)
    ok = bool(np.all(halvings <= 1.2) and res[-1] <= bound)
    return _verdict("inclusion_residual", ok,
                    {"sup_residual": res, "successive_ratios": halvings, "final": res[-1], "bound": bound,
                     "sup_residual_other_convention": [r["sup_residual_alt"] for r in rows],
                     "convention": "paper_literal" if profile.literal else f"sigma={profile.sigma:+.0f}"},
                    "each halving of eps does not raise sup residual by >20%; final <= 0.1*max(1, width)")


def _grid(T, n=GRID_TIMES):
    return np.linspace(0.0, T, n, endpoint=False)


def check_oracle(setup: Setup) -> dict:
    cfg, cyc, basis, pert = setup.cfg, setup.rebased, setup.basis, setup.pert
    q = cfg.tolerances.quadrature
    rng = np.random.default_rng(cfg.seed)
    worst_out, worst_end = 0.0, 0.0
    for t in _grid(cyc.period):
        iv = mperp(cyc, basis, pert, float(t), q)
        vals = monte_carlo_mperp(basis, pert, float(t), cfg.monte_carlo, rng=rng)
        worst_out = max(worst_out, float(np.max(np.maximum(iv.lo - q - vals, vals - iv.hi - q))))
        lo, hi = bang_bang_mperp(basis, pert, float(t))
        worst_end = max(worst_end, abs(lo - iv.lo), abs(hi - iv.hi))
    return _verdict("mperp_oracle", worst_out <= 0.0 and worst_end <= 2 * q,
                    {"max_excess_outside_inflated_interval": worst_out, "max_endpoint_error": worst_end,
                     "selections": cfg.monte_carlo, "times": GRID_TIMES},
                    "all random selections inside I(t) +- qtol; bang-bang endpoints within 2*qtol")


def check_symmetric(setup: Setup) -> dict:
    cyc, q = setup.rebased, setup.cfg.tolerances.quadrature
    try:
        sym = build_symmetric_solution(cyc)
    except NotSymmetric as exc:
        return _verdict("symmetric_crosscheck", None, {"reason": str(exc)}, "field not symmetric")
    worst = 0.0
    for t in _grid(cyc.period):
        a = mperp(cyc, setup.basis, setup.pert, float(t), q)
        b = mperp_symmetric(cyc, sym, setup.pert, float(t), q)
        worst = max(worst, abs(a.lo - b.lo), abs(a.hi - b.hi))
    adj = adjoint_from_linearized_residual(sym)
    return _verdict("symmetric_crosscheck", worst <= 2 * q and max(adj.values()) <= 1e-7,
                    {"max_endpoint_difference": worst, "adjoint_residual": adj, "t_star": sym.t_star},
                    "symmetric formula within 2*qtol of M_perp; adjoint construction residual <= 1e-7")


def check_invariance(setup: Setup, result: OrbitResult) -> dict:
    cfg, cyc, basis = setup.cfg, setup.rebased, setup.basis
    q = cfg.tolerances.quadrature
    ts = _grid(cyc.period)
    ref = predict_displacement(cyc, basis, setup.profile, result.orbit, ts)

    def spread(b):
        prof = mperp_profile(cyc, b, setup.pert, q, sigma=cfg.sigma, literal=cfg.paper_literal)
        return float(np.max(np.abs(predict_displacement(cyc, b, prof, result.orbit, ts) - ref)))

    scale_dev = max(spread(build_adjoint_basis(cyc, scale=c)) for c in (0.5, 2.0))
    tstar_dev = max([spread(basis.with_t_star(t)) for t in basis.t_star_candidates if t != basis.t_star] or [0.0])
    gauges = gauge_spread(cyc, setup.pert, qtol=q)
    return _verdict("gauge_invariance", scale_dev <= 1e-9 and tstar_dev <= 3 * q,
                    {"eps": result.eps, "z_tilde_scaling_deviation": scale_dev, "t_star_deviation": tstar_dev,
                     "t_star_candidates": list(basis.t_star_candidates), "z_hat_gauge_spread": gauges},
                    "predicted set invariant: scaling <= 1e-9, t* choice <= 3*qtol (z_hat gauge reported only)")


def check_determinism(setup: Setup, result: OrbitResult) -> dict:
    again = run_orbit(setup, result.eps)
    a = json.dumps(_clean(result.metrics), sort_keys=True)
    b = json.dumps(_clean(again.metrics), sort_keys=True)
    r1 = monte_carlo_mperp(setup.basis, setup.pert, 0.0, 64, rng=np.random.default_rng(setup.cfg.seed))
    r2 = monte_carlo_mperp(setup.basis, setup.pert, 0.0, 64, rng=np.random.default_rng(setup.cfg.seed))
    digest = lambda s: hashlib.sha256(s).hexdigest()[:16]
    ok = a == b and r1.tobytes() == r2.tobytes()
    return _verdict("determinism", ok,
                    {"orbit_digest": [digest(a.encode()), digest(b.encode())],
                     "monte_carlo_digest": [digest(r1.tobytes()), digest(r2.tobytes())]},
                    "repeated computations with the same config and seed are bit-identical")


DOWNSTREAM = ("structural_invariants", "displacement_bound", "section_solver", "inclusion_residual", "mperp_oracle",
              "symmetric_crosscheck", "gauge_invariance", "determinism")


def verify(cfg: ExperimentConfig) -> dict:
    """Run all checks; returns the report dict (without wall-clock data)."""
    setup = prepare(cfg)
    verdicts = [check_nondegeneracy(setup)]
    rows = []
    if not setup.nondegenerate:
        verdicts += [_verdict(n, None, {"reason": "cycle is degenerate"}, "requires a nondegenerate cycle")
                     for n in DOWNSTREAM]
    else:
        results = run_ladder(setup, cfg.ladder, cfg.threads)
        rows = [r.metrics for r in results]
        mid = results[len(results) // 2]
        verdicts += [
            check_structure(setup),
            check_displacement_bound(rows),
            check_section(rows),
            check_inclusion(rows, setup.profile),
            check_oracle(setup),
            check_symmetric(setup),
            check_invariance(setup, mid),
            check_determinism(setup, results[0]),
        ]
    return build_report(cfg, setup, verdicts, rows)


def summarize_setup(setup: Setup) -> dict:
    cyc, mono = setup.cycle, setup.mono
    out = {
        "field": setup.field.name,
        "T": cyc.period,
        "base_point": cyc.base_point,
        "closure_residual": cyc.closure_residual(),
        "diameter": cyc.diameter,
        "monodromy": mono.matrix,
        "multipliers": mono.multipliers,
        "b": mono.shear,
        "nondegenerate": setup.nondegenerate,
    }
    if setup.basis0 is not None:
        b0, b = setup.basis0, setup.basis
        out.update({
            "gamma": b0.gamma,
            "t_star": b0.t_star,
            "t_star_candidates": list(b0.t_star_candidates),
            "melnikov_zeros": [{"theta": z.theta, "slope": z.slope} for z in setup.melnikov],
            "theta0": setup.seed.theta,
            "rebased": {"base_point": setup.rebased.base_point, "gamma": b.gamma, "t_star": b.t_star,
                        "t_star_candidates": list(b.t_star_candidates)},
        })
    return _clean(out)


def build_report(cfg, setup, verdicts, rows) -> dict:
    return {
        "tool": "cycleperturb",
        "version": __version__,
        "config_sha256": cfg.digest(),
        "setup": summarize_setup(setup),
        "verdicts": verdicts,
        "rows": _clean(rows),
        "passed": all(v["status"] != "fail" for v in verdicts),
    }


def profile_table(setup: Setup, orbit: Optional[PeriodicOrbit] = None) -> dict:
    """Arrays behind the residual plot: I(t), c_eps(t), residual(t)."""
    prof = setup.profile
    lo, hi = prof.signed(prof.times)
    out = {"t": prof.times, "lo": lo, "hi": hi}
    if orbit is not None:
        out["c"] = transversal_coefficient(orbit, setup.rebased, setup.basis, prof.times)
        out["residual"] = inclusion_residual(orbit, setup.rebased, setup.basis, prof, prof.times)
    return out
