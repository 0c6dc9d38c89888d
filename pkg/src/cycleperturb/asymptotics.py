"""First-order displacement of perturbed orbits: the interval map M_perp and diagnostics.

M_perp(t) = {gamma * int_{t-T}^{t} <-z_hat(s), h(s)> ds : h a selection of
g(s, x0(s), 0)} is an interval whose endpoints come from the pointwise
extremal selections, i.e. integrals of support functions.  All quadratures
split panels at kinks of the integrand: switching times along x0 and sign
changes of <d, u_i> for free generators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad_vec
from scipy.optimize import brentq

from .cycle import AdjointBasis, Cycle, _zeros_of, is_nondegenerate, monodromy
from .errors import DegenerateCycle, NotSymmetric, NoTransversalZero
from .inclusion import PeriodicOrbit
from .model import ROT90, SetValuedPerturbation, check_field, support
from .ode import DenseTrajectory, adjoint_solve, linearized_solve

QTOL = 1e-8
PROFILE_NODES = 256
MERGE = 1e-13


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def scaled(self, c: float) -> "Interval":
        a, b = c * self.lo, c * self.hi
        return Interval(min(a, b), max(a, b))

    def contains(self, v: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= v <= self.hi + tol

    def distance(self, v: float) -> float:
        return max(self.lo - v, v - self.hi, 0.0)


def point_interval_distance(v, lo, hi):
    """rho(v, [lo, hi]) elementwise."""
    return np.maximum(np.maximum(lo - v, v - hi), 0.0)


# ---------------------------------------------------------------------------
# quadrature


def _panel_integrals(values: Callable, edges_lo, edges_hi, epsabs: float) -> np.ndarray:
    """Integrals of ``values`` over each panel [lo_k, hi_k] in one vectorized quad_vec call.

    ``values(tau)`` receives one abscissa per panel (in panel order) and
    returns shape (m, n_panels); the result has the same shape.
    """
    a = np.asarray(edges_lo, dtype=float)
    w = np.asarray(edges_hi, dtype=float) - a
    if a.size == 0:
        return np.zeros((0, 0))
    m = np.atleast_2d(values(a + 0.5 * w)).shape[0]

    def fun(s):
        return (np.atleast_2d(values(a + s * w)) * w).ravel()

    out, _ = quad_vec(fun, 0.0, 1.0, epsabs=epsabs, epsrel=0.0, norm="max", limit=10_000)
    return out.reshape(m, a.size)


def _merge(points, a: float, b: float) -> np.ndarray:
    pts = np.sort(np.concatenate([[a, b], np.asarray(points, dtype=float)]))
    pts = pts[(pts >= a) & (pts <= b)]
    keep = np.concatenate([[True], np.diff(pts) > MERGE])
    return pts[keep]


def _kink_times(pert: SetValuedPerturbation, state: Callable, direction: Callable, time_of: Callable,
                a: float, b: float, n: int = 4096) -> list:
    """Switching times of the perturbation along ``state`` and sign changes of
    <direction, u_i> for free generators, within [a, b]."""
    out = []
    for sw in pert.switching:
        out += _zeros_of(lambda s, sw=sw: np.asarray(sw.value(state(s)), dtype=float), a, b, n)
    for i, gen in enumerate(pert.generators):
        if gen.switch is not None:
            continue

        def w(s, i=i):
            x = state(s)
            return np.sum(direction(s) * pert.directions(time_of(s), x)[i], axis=0)

        out += _zeros_of(w, a, b, n)
    return out


def _support_pair(pert, direction, state, time_of):
    """tau -> [ -support(-d), support(d) ] along the cycle."""
    def values(tau):
        x, d = state(tau), direction(tau)
        t = time_of(tau)
        return np.vstack([-support(pert, -d, t, x, 0.0), support(pert, d, t, x, 0.0)])
    return values


# ---------------------------------------------------------------------------
# M_perp


@dataclass(frozen=True)
class _Kernel:
    """Integrand data for M_perp built from an adjoint basis."""

    basis: AdjointBasis
    pert: SetValuedPerturbation

    def direction(self, tau):
        return -self.basis.z_hat(tau)

    def state(self, tau):
        return self.basis.cycle.x(tau)

    def values(self):
        return _support_pair(self.pert, self.direction, self.state, lambda s: s)

    def kinks(self, a, b):
        return _kink_times(self.pert, self.state, self.direction, lambda s: s, a, b)


def _check_window(basis: AdjointBasis, t):
    T = basis.period
    if not (-1e-12 <= t <= T + 1e-12):
        raise ValueError(f"t={t} outside [0, T]; reduce modulo T first")


def mperp(cycle: Cycle, basis: AdjointBasis, pert: SetValuedPerturbation, t: float, qtol: float = QTOL
          ) -> Interval:
    """Interval M_perp(t) with absolute quadrature error at most ``qtol``."""
    _check_window(basis, t)
    kern = _Kernel(basis, pert)
    edges = _merge(kern.kinks(t - cycle.period, t), t - cycle.period, t)
    parts = _panel_integrals(kern.values(), edges[:-1], edges[1:], qtol / max(1, edges.size - 1))
    lo, hi = parts.sum(axis=1)
    return Interval(lo, hi).scaled(basis.gamma)


@dataclass(frozen=True)
class MperpProfile:
    """M_perp on a uniform grid over [0, T] with a sign convention.

    ``factor`` multiplies I(t) when comparing against c_eps: sigma = -1 for
    the internally consistent convention, gamma for the literal reading.
    """

    times: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sigma: float
    qtol: float
    breakpoints: np.ndarray
    gamma: float
    literal: bool = False

    @property
    def period(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def factor(self) -> float:
        return self.gamma if self.literal else self.sigma

    def interval(self, t):
        # I(t) is not T-periodic (z_hat grows secularly), so only reduce t outside [0, T]
        t = np.asarray(t, dtype=float)
        t0 = self.times[0]
        inside = (t >= t0) & (t <= t0 + self.period)
        t = np.where(inside, t, np.mod(t - t0, self.period) + t0)
        return np.interp(t, self.times, self.lo), np.interp(t, self.times, self.hi)

    def signed(self, t):
        """Endpoints (lo, hi) of factor * I(t)."""
        lo, hi = self.interval(t)
        a, b = self.factor * lo, self.factor * hi
        return np.minimum(a, b), np.maximum(a, b)

    @property
    def max_width(self) -> float:
        return float(np.max(self.hi - self.lo))

    def at(self, k: int) -> Interval:
        return Interval(float(self.lo[k]), float(self.hi[k]))


def mperp_profile(cycle: Cycle, basis: AdjointBasis, pert: SetValuedPerturbation, qtol: float = QTOL,
                  n: int = PROFILE_NODES, sigma: float = -1.0, literal: bool = False) -> MperpProfile:
    """I(t) at n uniform nodes of [0, T] from one cumulative integral over [-T, T]."""
    if sigma not in (1.0, -1.0):
        raise ValueError("sigma must be +1 or -1")
    T = cycle.period
    times = np.linspace(0.0, T, n)
    kern = _Kernel(basis, pert)
    kinks = np.asarray(kern.kinks(-T, T))
    edges = _merge(np.concatenate([times, times - T, kinks]), -T, T)
    parts = _panel_integrals(kern.values(), edges[:-1], edges[1:], qtol / (edges.size - 1))
    cum = np.concatenate([np.zeros((2, 1)), np.cumsum(parts, axis=1)], axis=1)

    def phi(s):
        idx = np.searchsorted(edges, s)
        idx = np.where(np.abs(edges[np.minimum(idx, edges.size - 1)] - s) <= MERGE, idx, idx - 1)
        return cum[:, idx]

    raw = phi(times) - phi(times - T)
    g = basis.gamma
    lo, hi = np.minimum(g * raw[0], g * raw[1]), np.maximum(g * raw[0], g * raw[1])
    return MperpProfile(times, lo, hi, float(sigma), qtol, kinks, g, literal)


def gauge_spread(cycle: Cycle, pert: SetValuedPerturbation, gauges=(-1.0, 0.0, 1.0), qtol: float = QTOL,
                 n: int = 64, tol: Optional[float] = None) -> dict:
    """How much I(t) moves when z_hat(0) gains c * z_tilde(0) (diagnostic only)."""
    from .cycle import build_adjoint_basis

    mono = monodromy(cycle, tol)
    profs = [mperp_profile(cycle, build_adjoint_basis(cycle, gauge=c, tol=tol, mono=mono), pert, qtol, n)
             for c in gauges]
    lo = np.array([p.lo for p in profs])
    hi = np.array([p.hi for p in profs])
    return {
        "gauges": [float(c) for c in gauges],
        "lo_spread": float(np.max(lo.max(axis=0) - lo.min(axis=0))),
        "hi_spread": float(np.max(hi.max(axis=0) - hi.min(axis=0))),
    }


# ---------------------------------------------------------------------------
# symmetric formula


@dataclass(frozen=True)
class SymmetricSolution:
    """Linearized solution y with y(0) = (-x0_2'(0), x0_1'(0)) and its scaling.

    ``coefficient = x0_1'(t*) / (y_1(T + t*) - y_1(t*))`` with t* the zero
    of x0_2' of largest |x0_1'|; when the base point sits on the symmetry
    axis, t* = 0 and y_1(0) = 0.
    """

    cycle: Cycle
    y_traj: DenseTrajectory
    t_star: float
    coefficient: float

    def y(self, t):
        return self.y_traj(t)


def build_symmetric_solution(cycle: Cycle, tol: Optional[float] = None, check: bool = True
                             ) -> SymmetricSolution:
    fld = cycle.field
    if not fld.symmetric:
        raise NotSymmetric(f"field {fld.name!r} is not flagged symmetric")
    if check and not check_field(fld).symmetric_ok:
        raise NotSymmetric(f"field {fld.name!r} fails the reflection-symmetry check")
    tol = cycle.tol if tol is None else tol
    mono = monodromy(cycle, tol)
    if not is_nondegenerate(mono):
        raise DegenerateCycle("cycle is degenerate: every linearized solution is T-periodic")
    T = cycle.period
    f0 = cycle.xdot(0.0)
    y_traj = linearized_solve(fld, cycle.trajectory, np.array([-f0[1], f0[0]]), (-T, 2.0 * T), tol)
    roots = [r for r in _zeros_of(lambda s: cycle.xdot(s)[1], 0.0, T) if r < T]
    if abs(f0[1]) <= 1e-12 and 0.0 not in roots:
        roots.insert(0, 0.0)
    if not roots:
        raise NoTransversalZero("second velocity component never vanishes")
    t_star = float(roots[int(np.argmax(np.abs(cycle.xdot(np.array(roots))[0])))])
    jump = float(y_traj(t_star + T)[0] - y_traj(t_star)[0])
    if abs(jump) < 1e-10:
        raise DegenerateCycle(f"y_1(T+t*) - y_1(t*) = {jump:.3e}")
    return SymmetricSolution(cycle, y_traj, t_star, float(cycle.xdot(t_star)[0]) / jump)


def mperp_symmetric(cycle: Cycle, sym: SymmetricSolution, pert: SetValuedPerturbation, t: float,
                    qtol: float = QTOL) -> Interval:
    """M_perp from the linearized solution: coefficient * int det(-y, h)."""
    T = cycle.period

    def direction(tau):
        y = sym.y(tau)
        return np.array([y[1], -y[0]])  # det(-y, h) = <(y_2, -y_1), h>

    values = _support_pair(pert, direction, cycle.x, lambda s: s)
    kinks = _kink_times(pert, cycle.x, direction, lambda s: s, t - T, t)
    edges = _merge(kinks, t - T, t)
    parts = _panel_integrals(values, edges[:-1], edges[1:], qtol / max(1, edges.size - 1))
    lo, hi = parts.sum(axis=1)
    return Interval(lo, hi).scaled(sym.coefficient)


def adjoint_from_linearized_residual(sym: SymmetricSolution, n: int = 1501) -> dict:
    """Check that R90 x0' and R90 y solve the adjoint system (sup-norm residuals on [-T, 2T])."""
    cyc = sym.cycle
    T = cyc.period
    ts = np.linspace(-T, 2.0 * T, n)
    out = {}
    for name, w in (("periodic", lambda s: ROT90 @ cyc.xdot(s)), ("secular", lambda s: ROT90 @ sym.y(s))):
        ref = adjoint_solve(cyc.field, cyc.trajectory, w(0.0), (-T, 2.0 * T), cyc.tol)
        out[name] = float(np.max(np.abs(w(ts) - ref(ts))))
    return out


# ---------------------------------------------------------------------------
# comparison with perturbed orbits


def displacement(orbit: PeriodicOrbit, cycle: Cycle, t) -> np.ndarray:
    """x_eps(t + Delta_eps) - x0(t)."""
    return orbit.shifted(t) - cycle.x(t)


def transversal_coefficient(orbit: PeriodicOrbit, cycle: Cycle, basis: AdjointBasis, t):
    """c_eps(t) = <z_tilde(t), x_eps(t + Delta_eps) - x0(t)> / eps."""
    if orbit.eps == 0.0:
        return np.zeros_like(np.asarray(t, dtype=float))
    return np.sum(basis.z_tilde(t) * displacement(orbit, cycle, t), axis=0) / orbit.eps


def tangential_coefficient(orbit: PeriodicOrbit, cycle: Cycle, basis: AdjointBasis, t):
    """a_tan(t) = <z_hat(t), x_eps(t + Delta_eps) - x0(t)>."""
    return np.sum(basis.z_hat(t) * displacement(orbit, cycle, t), axis=0)


def inclusion_residual(orbit: PeriodicOrbit, cycle: Cycle, basis: AdjointBasis, profile: MperpProfile, t):
    """rho(c_eps(t), factor * I(t))."""
    c = transversal_coefficient(orbit, cycle, basis, t)
    lo, hi = profile.signed(t)
    return point_interval_distance(c, lo, hi)


def predict_displacement(cycle: Cycle, basis: AdjointBasis, profile: MperpProfile, orbit: PeriodicOrbit, t
                         ) -> np.ndarray:
    """Endpoints of the predicted segment {eps*m*y(t) + a_tan(t) x0'(t) : m in factor*I(t)}.

    Returns shape (2, 2) for scalar t (columns are the endpoints) or
    (2, 2, n) for arrays.
    """
    lo, hi = profile.signed(t)
    y, xd = basis.y(t), cycle.xdot(t)
    a = tangential_coefficient(orbit, cycle, basis, t)
    base = a * xd
    return np.stack([base + orbit.eps * lo * y, base + orbit.eps * hi * y], axis=1)


def segment_distance(p, seg) -> np.ndarray:
    """Distance from points p (2,) / (2, n) to segments seg (2, 2) / (2, 2, n)."""
    a, b = seg[:, 0], seg[:, 1]
    d = b - a
    dd = np.sum(d * d, axis=0)
    s = np.where(dd > 0, np.sum((p - a) * d, axis=0) / np.where(dd > 0, dd, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    return np.linalg.norm(p - (a + s * d), axis=0)


def displacement_ratio(orbit: PeriodicOrbit, cycle: Cycle, n: int = 2048) -> float:
    """sup_t |x_eps(t + Delta_eps) - x0(t)| / eps over n uniform times in [0, T)."""
    if orbit.eps == 0.0:
        return 0.0
    ts = np.linspace(0.0, cycle.period, n, endpoint=False)
    return float(np.max(np.linalg.norm(displacement(orbit, cycle, ts), axis=0)) / orbit.eps)


# ---------------------------------------------------------------------------
# Melnikov diagnostic


def _melnikov_parts(cycle, basis, pert, thetas, qtol):
    T = cycle.period
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    lo_e, hi_e, owner = [], [], []
    for j, th in enumerate(thetas):
        kinks = _kink_times(pert, lambda s, th=th: cycle.x(s + th), lambda s, th=th: basis.z_tilde(s + th),
                            lambda s: s, 0.0, T, n=512)
        e = _merge(kinks, 0.0, T)
        lo_e += list(e[:-1])
        hi_e += list(e[1:])
        owner += [j] * (e.size - 1)
    owner = np.array(owner)
    th_panel = thetas[owner]

    def values(tau):
        x, d = cycle.x(tau + th_panel), basis.z_tilde(tau + th_panel)
        return np.vstack([-support(pert, -d, tau, x, 0.0), support(pert, d, tau, x, 0.0)])

    parts = _panel_integrals(values, lo_e, hi_e, qtol / max(1, len(lo_e)))
    out = np.zeros((2, thetas.size))
    np.add.at(out, (slice(None), owner), parts)
    return out


def melnikov_interval(cycle: Cycle, basis: AdjointBasis, pert: SetValuedPerturbation, theta: float,
                      qtol: float = QTOL) -> Interval:
    """{int_0^T <z_tilde(s + theta), h(s)> ds : h(s) in g(s, x0(s + theta), 0)}."""
    lo, hi = _melnikov_parts(cycle, basis, pert, [theta], qtol)[:, 0]
    return Interval(lo, hi)


def melnikov_midpoints(cycle, basis, pert, thetas, qtol: float = QTOL) -> np.ndarray:
    return _melnikov_parts(cycle, basis, pert, thetas, qtol).mean(axis=0)


@dataclass(frozen=True)
class MelnikovZero:
    theta: float
    slope: float


def melnikov_zeros(cycle: Cycle, basis: AdjointBasis, pert: SetValuedPerturbation, n: int = 128,
                   qtol: float = 1e-10) -> list:
    """Simple zeros of the Melnikov midpoint on [0, T), sorted by theta."""
    T = cycle.period
    grid = np.linspace(0.0, T, n + 1)
    vals = melnikov_midpoints(cycle, basis, pert, grid, qtol)
    mid = lambda th: float(melnikov_midpoints(cycle, basis, pert, [th], qtol)[0])
    out = []
    for i in range(n):
        if vals[i] == 0.0 or vals[i] * vals[i + 1] < 0:
            th = grid[i] if vals[i] == 0.0 else brentq(mid, grid[i], grid[i + 1], xtol=1e-12)
            h = 1e-5 * T
            slope = (mid(th + h) - mid(th - h)) / (2 * h)
            if abs(slope) > 1e-8:
                out.append(MelnikovZero(float(th % T), float(slope)))
    return out


def seed_phase(zeros: list) -> MelnikovZero:
    """Zero with the largest |slope| (ties: smallest theta)."""
    if not zeros:
        raise NoTransversalZero("Melnikov midpoint has no simple zero; no seed for the perturbed orbit")
    return sorted(zeros, key=lambda z: (-round(abs(z.slope), 9), z.theta))[0]


# operation name used by the public interface
theorem1_ratio = displacement_ratio
