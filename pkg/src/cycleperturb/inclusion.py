"""Perturbed differential inclusion: explicit selections, shooting, section solve.

Solutions of x' in f(x) + eps*g(t, x, eps) are realized by integrating an
explicit selection.  Relay generators (sign-type terms) follow Filippov's
convention: off the switching surface they are single-valued, transversal
crossings are located as events, and attractive surfaces are followed with
the convex combination that keeps the flow tangent.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .cycle import Cycle
from .errors import ChatteringLimit, IllConditioned, NoConvergence, NonPeriodicPolicy, NoRootInBox
from .model import ROT90, PlanarField, SetValuedPerturbation
from .ode import DEFAULT_TOL, DenseTrajectory, flow, solve

SHOOT_TOL = 1e-8
SECTION_TOL = 1e-10
EVENT_MERGE = 1e-12
CHATTER_LIMIT = 100_000
SURFACE_TOL = 1e-12


@dataclass(frozen=True)
class Policy:
    """How free (non-relay) generator coefficients are selected.

    kind = "filippov": interval midpoint; "fixed": ``profiles[i](t)`` in
    [-1, 1] maps affinely onto the i-th free interval; "extremal": the
    endpoint maximizing <direction, u_i>.  Relay generators always follow
    the Filippov crossing/sliding rule.
    """

    kind: str = "filippov"
    profiles: tuple = ()
    direction: Optional[np.ndarray] = None
    periodic: bool = True

    def __post_init__(self):
        if self.kind not in ("filippov", "fixed", "extremal"):
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.kind == "extremal" and self.direction is None:
            raise ValueError("extremal policy needs a direction")


FILIPPOV = Policy()


@dataclass(frozen=True)
class Event:
    t: float
    x: np.ndarray
    surface: int
    kind: str


@dataclass(frozen=True)
class SelectionResult:
    trajectory: DenseTrajectory
    events: tuple
    n_events: int

    @property
    def end(self) -> np.ndarray:
        return self.trajectory.pieces[-1].ys[:, -1].copy()


def selection(pert: SetValuedPerturbation, t, x, eps, modes, policy: Policy = FILIPPOV):
    """Selected value h(t, x) in g(t, x, eps) for fixed switching sides ``modes``."""
    h = pert.value_center(t, x, eps)
    bounds = pert.coefficient_bounds(t, x, eps, modes=modes)
    free = 0
    for gen, (lo, hi), u in zip(pert.generators, bounds, pert.directions(t, x)):
        if gen.switch is not None:
            lam = lo  # lo == hi off the surface
        elif policy.kind == "filippov":
            lam = 0.5 * (lo + hi)
        elif policy.kind == "fixed":
            p = np.clip(policy.profiles[free](t), -1.0, 1.0) if free < len(policy.profiles) else 0.0
            lam = 0.5 * (lo + hi) + p * 0.5 * (hi - lo)
        else:
            w = np.sum(np.asarray(policy.direction) * u, axis=0)
            lam = np.where(w >= 0, hi, lo)
        if gen.switch is None:
            free += 1
        h = h + lam * u
    return h


def _with(modes: tuple, k: int, side: float) -> tuple:
    m = list(modes)
    m[k] = side
    return tuple(m)


class _System:
    """Smooth right-hand sides of the perturbed system for each switching configuration."""

    def __init__(self, fld: PlanarField, pert: SetValuedPerturbation, eps: float, policy: Policy):
        self.fld, self.pert, self.eps, self.policy = fld, pert, eps, policy

    def branch(self, t, x, modes):
        return self.fld(x) + self.eps * selection(self.pert, t, x, self.eps, modes, self.policy)

    def normal_components(self, t, x, modes, k):
        n = np.asarray(self.pert.switching[k].gradient(x), dtype=float)
        fp = self.branch(t, x, _with(modes, k, 1.0))
        fm = self.branch(t, x, _with(modes, k, -1.0))
        return float(n @ fp), float(n @ fm), fp, fm

    def rhs(self, modes):
        sliding = [k for k, m in enumerate(modes) if m == 0]
        if not sliding:
            return lambda t, x: self.branch(t, x, modes)
        k = sliding[0]

        def slide(t, x):
            a, b, fp, fm = self.normal_components(t, x, modes, k)
            return (b * fp - a * fm) / (b - a)

        return slide

    def events(self, modes):
        evs, meta = [], []
        for k, m in enumerate(modes):
            sw = self.pert.switching[k]
            if m != 0:
                ev = (lambda sw: lambda t, x: float(sw.value(x)))(sw)
                ev.terminal, ev.direction = True, -m
                evs.append(ev)
                meta.append((k, "crossing"))
            else:
                exit_up = (lambda k: lambda t, x: self.normal_components(t, x, modes, k)[0])(k)
                exit_up.terminal, exit_up.direction = True, 1.0
                exit_dn = (lambda k: lambda t, x: self.normal_components(t, x, modes, k)[1])(k)
                exit_dn.terminal, exit_dn.direction = True, -1.0
                evs += [exit_up, exit_dn]
                meta += [(k, "exit+"), (k, "exit-")]
        return evs, meta

    def side_at(self, t, x, modes, k, heading: float) -> tuple:
        """Side to take on surface k at x: +1/-1 for crossing, 0 for attractive sliding."""
        a, b, _, _ = self.normal_components(t, x, modes, k)
        if a > 0 and b > 0:
            return 1.0, "crossing"
        if a < 0 and b < 0:
            return -1.0, "crossing"
        if a < 0 < b:
            return 0.0, "slide_start"
        # repulsive or grazing: keep the direction of motion
        return (heading if heading != 0 else 1.0), "repulsive" if (a > 0 > b) else "grazing"


def _project(pert, k, x):
    sw = pert.switching[k]
    for _ in range(3):
        n = np.asarray(sw.gradient(x), dtype=float)
        x = x - float(sw.value(x)) * n / (n @ n)
    return x


def integrate_selection(fld: PlanarField, pert: SetValuedPerturbation, eps: float, x0, span,
                        policy: Policy = FILIPPOV, tol: float = DEFAULT_TOL,
                        chatter_limit: int = CHATTER_LIMIT) -> SelectionResult:
    """Integrate x' = f(x) + eps*h(t, x) for the selection chosen by ``policy``.

    Switching-surface crossings are located as terminal events; attractive
    surfaces are followed by Filippov sliding until a branch stops pointing
    into the surface.  Raises ChatteringLimit beyond ``chatter_limit``
    events per period.
    """
    t0, t1 = float(span[0]), float(span[1])
    x = np.asarray(x0, dtype=float).copy()
    if eps == 0.0 or not pert.switching:
        system = _System(fld, pert, eps, policy)
        rhs = (lambda t, y: fld(y)) if eps == 0.0 else system.rhs(())
        piece, _ = solve(rhs, t0, t1, x, tol, mode=())
        return SelectionResult(DenseTrajectory([piece], tol=tol), (), 0)

    system = _System(fld, pert, eps, policy)
    n_sw = len(pert.switching)
    modes = [0.0] * n_sw
    for k, sw in enumerate(pert.switching):
        s = float(sw.value(x))
        modes[k] = float(np.sign(s)) if abs(s) > SURFACE_TOL else 1.0
    modes = tuple(modes)
    for k, sw in enumerate(pert.switching):
        if abs(float(sw.value(x))) <= SURFACE_TOL:
            n = np.asarray(sw.gradient(x), dtype=float)
            heading = float(np.sign(n @ fld(x))) or 1.0
            side, kind = system.side_at(t0, x, modes, k, heading)
            modes = _with(modes, k, side)
            if side == 0.0:
                x = _project(pert, k, x)

    limit = chatter_limit * max(1.0, (t1 - t0) / pert.period)
    pieces, events = [], []
    n_events = 0
    t = t0
    while t < t1:
        evs, meta = system.events(modes)
        piece, res = solve(system.rhs(modes), t, t1, x, tol, events=evs, mode=modes)
        pieces.append(piece)
        if res.status != 1:
            break
        fired = [(res.t_events[i][0], i) for i in range(len(evs)) if res.t_events[i].size]
        te, i = min(fired)
        k, what = meta[i]
        x = res.y_events[i][0].copy()
        n_events += 1
        if n_events > limit:
            raise ChatteringLimit(f"more than {chatter_limit} switching events per period near t={te:.6g}")
        if what == "crossing":
            heading = -modes[k]
            side, kind = system.side_at(te, x, modes, k, heading)
            if side == 0.0:
                x = _project(pert, k, x)
        else:
            side, kind = (1.0 if what == "exit+" else -1.0), "slide_exit"
        modes = _with(modes, k, side)
        if not events or te - events[-1].t > EVENT_MERGE:
            events.append(Event(float(te), x.copy(), k, kind))
        t = te
    return SelectionResult(DenseTrajectory(pieces, tol=tol), tuple(events), n_events)


# ---------------------------------------------------------------------------
# periodic orbits


@dataclass(frozen=True)
class PeriodicOrbit:
    eps: float
    period: float
    initial_state: np.ndarray
    trajectory: DenseTrajectory
    events: tuple
    residual: float
    iterations: int
    delta: Optional[float] = None
    v: Optional[float] = None
    section_info: dict = field(default_factory=dict)

    def x(self, t) -> np.ndarray:
        return self.trajectory(t)

    def shifted(self, t) -> np.ndarray:
        """x_eps(t + Delta_eps); requires the section to be solved."""
        if self.delta is None:
            raise ValueError("section equation not solved for this orbit")
        return self.trajectory(np.asarray(t, dtype=float) + self.delta)


def time_t_map(fld, pert, eps, xi, policy=FILIPPOV, tol=DEFAULT_TOL) -> SelectionResult:
    return integrate_selection(fld, pert, eps, xi, (0.0, pert.period), policy, tol)


def find_periodic(fld: PlanarField, pert: SetValuedPerturbation, eps: float, guess,
                  policy: Policy = FILIPPOV, tol: float = DEFAULT_TOL, shoot_tol: float = SHOOT_TOL,
                  max_iter: int = 40, cycle: Optional[Cycle] = None) -> PeriodicOrbit:
    """Fixed point of the time-T map of the perturbed system near ``guess``.

    Damped Newton on G(xi) = P(xi) - xi with a one-sided finite-difference
    Jacobian (step max(1e-6, 10*shoot_tol)); on stagnation a Nelder-Mead
    minimization of |G|^2 takes over.  When ``cycle`` is given, iterates
    straying beyond half its diameter abort with NoConvergence.
    """
    if policy.kind == "extremal" or (policy.kind == "fixed" and not policy.periodic):
        raise NonPeriodicPolicy(f"time-T map is not defined for policy {policy.kind!r}")
    T = pert.period
    xi = np.asarray(guess, dtype=float).copy()
    radius = None
    if cycle is not None:
        radius = 0.5 * cycle.diameter
        if cycle.distance_to(xi) > radius:
            raise NoConvergence("guess outside the basin around the cycle", 0, np.inf,
                                {"distance": cycle.distance_to(xi), "radius": radius})
    h = max(1e-6, 10.0 * shoot_tol)

    def G(z):
        res = time_t_map(fld, pert, eps, z, policy, tol)
        return res.end - z, res

    g, res = G(xi)
    best = (np.linalg.norm(g), xi, res)
    it = 0
    while np.linalg.norm(g) > shoot_tol:
        if it >= max_iter:
            raise NoConvergence(f"no fixed point after {it} iterations", it, float(best[0]),
                                {"best_state": best[1].tolist()})
        it += 1
        J = np.empty((2, 2))
        for j in range(2):
            dz = np.zeros(2)
            dz[j] = h
            J[:, j] = (G(xi + dz)[0] - g) / h
        step = np.linalg.lstsq(J, -g, rcond=None)[0]
        lam, improved = 1.0, False
        while lam >= 1.0 / 64:
            trial = xi + lam * step
            g_t, res_t = G(trial)
            if np.linalg.norm(g_t) < np.linalg.norm(g):
                xi, g, res, improved = trial, g_t, res_t, True
                break
            lam *= 0.5
        if not improved:
            out = minimize(lambda z: float(np.sum(G(z)[0] ** 2)), xi, method="Nelder-Mead",
                           options={"xatol": 1e-13, "fatol": 1e-22, "maxiter": 400})
            g_t, res_t = G(out.x)
            if np.linalg.norm(g_t) >= np.linalg.norm(g):
                raise NoConvergence("stagnated: no decrease from Newton or Nelder-Mead", it, float(best[0]),
                                    {"best_state": best[1].tolist()})
            xi, g, res = out.x, g_t, res_t
        if np.linalg.norm(g) < best[0]:
            best = (np.linalg.norm(g), xi, res)
        if radius is not None and cycle.distance_to(xi) > radius:
            raise NoConvergence("iterate left the basin around the cycle", it, float(best[0]),
                                {"state": xi.tolist(), "radius": radius})
    traj = res.trajectory.periodic(T)
    return PeriodicOrbit(float(eps), T, xi, traj, res.events, float(np.linalg.norm(g)), it)


def cycle_as_orbit(cycle: Cycle) -> PeriodicOrbit:
    """The unperturbed cycle viewed as the eps = 0 periodic orbit."""
    return PeriodicOrbit(0.0, cycle.period, cycle.base_point.copy(), cycle.trajectory, (),
                         cycle.closure_residual(), 0)


def membership_profile(orbit: PeriodicOrbit, fld: PlanarField, pert: SetValuedPerturbation, n: int = 1000
                       ) -> float:
    """max over sampled non-event times of how far x' - f(x) lies outside eps*g."""
    from .model import membership_residual

    ts = (np.arange(n) + 0.5) * orbit.period / n
    ev = np.array([e.t for e in orbit.events]) if orbit.events else np.empty(0)
    if ev.size:
        ts = ts[np.min(np.abs(ts[:, None] - ev[None, :]), axis=1) > 1e-9]
    xs = orbit.x(ts)
    v = orbit.trajectory.derivative(ts) - fld(xs)
    worst = -np.inf
    for j, t in enumerate(ts):
        worst = max(worst, float(membership_residual(pert, v[:, j], t, xs[:, j], orbit.eps, scale=orbit.eps,
                                                     surface_tol=1e-9)))
    return worst


# ---------------------------------------------------------------------------
# section surface


@dataclass(frozen=True)
class SectionSurface:
    """S(v) = Omega(T, 0, x0(0) + A1 v) for v in [-r0, r0]."""

    cycle: Cycle
    A1: np.ndarray
    r0: float
    tol: float = 1e-12

    def __call__(self, v: float) -> np.ndarray:
        c = self.cycle
        return flow(c.field, c.base_point + self.A1 * float(v), 0.0, c.period, self.tol)

    def derivative(self, v: float = 0.0, h: float = 1e-6) -> np.ndarray:
        return (self(v + h) - self(v - h)) / (2.0 * h)

    def transversality(self) -> float:
        """|det(x0'(0), S'(0))| normalized by the two norms."""
        f0 = self.cycle.xdot(0.0)
        dS = self.derivative(0.0)
        return float(abs(f0[0] * dS[1] - f0[1] * dS[0]) / (np.linalg.norm(f0) * np.linalg.norm(dS)))


def build_section(cycle: Cycle, r0: Optional[float] = None, tol: float = 1e-12) -> SectionSurface:
    f0 = cycle.field(cycle.base_point)
    A1 = ROT90 @ f0 / np.linalg.norm(f0)
    r0 = 0.1 * cycle.diameter if r0 is None else float(r0)
    return SectionSurface(cycle, A1, r0, tol)


@dataclass(frozen=True)
class SectionSolution:
    delta: float
    v: float
    residual: float
    iterations: int
    condition: float
    winding: Optional[int]
    roots: tuple = ()

    @property
    def multiplicity(self) -> Optional[int]:
        return len(self.roots) if self.roots else None


def _section_F(orbit_x: Callable, section: SectionSurface, cache: dict):
    def F(p):
        d, v = float(p[0]), float(p[1])
        if v not in cache:
            cache[v] = section(v)
        return orbit_x(d) - cache[v]
    return F


def _newton2(F, p0, box, tol, max_iter=40, h=1e-6):
    p = np.asarray(p0, dtype=float)
    r = F(p)
    cond = np.nan
    for it in range(max_iter):
        if np.linalg.norm(r) <= tol:
            return p, r, it, cond
        J = np.empty((2, 2))
        for j in range(2):
            dp = np.zeros(2)
            dp[j] = h
            J[:, j] = (F(p + dp) - F(p - dp)) / (2 * h)
        cond = float(np.linalg.cond(J))
        step = np.linalg.solve(J, -r)
        lam = 1.0
        while lam > 1e-3:
            trial = p + lam * step
            r_t = F(trial)
            if np.linalg.norm(r_t) < np.linalg.norm(r):
                p, r = trial, r_t
                break
            lam *= 0.5
        else:
            break
        if np.any(np.abs(p) > 2 * box):
            break
    return p, r, max_iter, cond


def winding_number(F: Callable, r0: float, n: int = 64) -> int:
    """Winding number of F around 0 along the boundary of [-r0, r0]^2 (n points)."""
    m = n // 4
    s = np.linspace(-r0, r0, m, endpoint=False)
    pts = np.concatenate([
        np.column_stack([s, np.full(m, -r0)]),
        np.column_stack([np.full(m, r0), s]),
        np.column_stack([-s, np.full(m, r0)]),
        np.column_stack([np.full(m, -r0), -s]),
    ])
    vals = np.array([F(p) for p in pts])
    ang = np.arctan2(vals[:, 1], vals[:, 0])
    d = np.diff(np.concatenate([ang, ang[:1]]))
    d = (d + np.pi) % (2 * np.pi) - np.pi
    return int(np.rint(d.sum() / (2 * np.pi)))


def solve_section(orbit: PeriodicOrbit, section: SectionSurface, tol: float = SECTION_TOL,
                  winding: bool = True, multistart: bool = False, max_cond: float = 1e8) -> SectionSolution:
    """Solve x_eps(Delta) = S(v) for (Delta, v) in [-r0, r0]^2.

    Newton starts from (0, 0); ``multistart`` additionally seeds a 3x3 grid
    to count distinct roots (smallest |Delta| wins).  Raises IllConditioned
    when cond(J) exceeds ``max_cond`` and NoRootInBox if no root is found.
    """
    r0 = section.r0
    cache: dict = {}
    F = _section_F(orbit.x, section, cache)
    starts = [(0.0, 0.0)]
    if multistart:
        g = [-0.5 * r0, 0.0, 0.5 * r0]
        starts += [(a, b) for a in g for b in g if (a, b) != (0.0, 0.0)]
    roots, first = [], None
    for s in starts:
        p, r, it, cond = _newton2(F, s, r0, tol)
        ok = np.linalg.norm(r) <= tol and np.all(np.abs(p) <= r0)
        if first is None:
            first = (p, r, it, cond, ok)
        if ok and not any(np.linalg.norm(p - q) < 1e-7 for q in roots):
            roots.append(p)
    wn = winding_number(F, r0) if winding else None
    if not roots:
        raise NoRootInBox(f"no root of x_eps(Delta) = S(v) in the box of radius {r0:.3g} (winding {wn})")
    best = min(roots, key=lambda q: abs(q[0]))
    p, r, it, cond, _ = first if np.allclose(first[0], best) else (best, F(best), 0, np.nan, True)
    if not np.isfinite(cond):
        J = np.empty((2, 2))
        for j in range(2):
            dp = np.zeros(2)
            dp[j] = 1e-6
            J[:, j] = (F(best + dp) - F(best - dp)) / 2e-6
        cond = float(np.linalg.cond(J))
    if cond > max_cond:
        raise IllConditioned(f"section Jacobian condition number {cond:.3e} > {max_cond:.0e}")
    return SectionSolution(float(best[0]), float(best[1]), float(np.linalg.norm(r)), it, cond, wn,
                           tuple(tuple(map(float, q)) for q in roots) if multistart else ())


def attach_section(orbit: PeriodicOrbit, sol: SectionSolution) -> PeriodicOrbit:
    info = {"residual": sol.residual, "condition": sol.condition, "winding": sol.winding,
            "iterations": sol.iterations, "multiplicity": sol.multiplicity}
    return replace(orbit, delta=sol.delta, v=sol.v, section_info=info)
