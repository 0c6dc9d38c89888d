"""Planar vector fields and zonotope-valued periodic perturbations.

Array conventions used throughout the package: a state is an array of shape
``(2,)`` or ``(2, n)`` (one column per sample) and a time is a scalar or an
array of shape ``(n,)``.  Every callable stored on the types below must
broadcast over the trailing sample axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

FD_STEP = np.cbrt(np.finfo(float).eps)

# rotation by +90 degrees; maps f = J grad H to grad H for the standard J
ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])


def _full(like, value):
    return np.zeros_like(np.asarray(like, dtype=float)) + value


def _like_state(v, x):
    """Broadcast a 2-vector (or batch) ``v`` against the state layout of ``x``."""
    v = np.asarray(v, dtype=float)
    if x.ndim == 2 and v.ndim == 1:
        v = v[:, None]
    return v + np.zeros_like(x)


def fd_jacobian(func: Callable, x) -> np.ndarray:
    """Central-difference Jacobian with step cbrt(eps)*max(1, |x_j|).

    Returns shape ``(2, 2)`` for a single state or ``(2, 2, n)`` for a batch.
    """
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(2):
        h = FD_STEP * np.maximum(1.0, np.abs(x[j]))
        dx = np.zeros_like(x)
        dx[j] = h
        cols.append((np.asarray(func(x + dx)) - np.asarray(func(x - dx))) / (2.0 * h))
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class PlanarField:
    """Autonomous planar vector field ``x' = f(x)``.

    ``jac`` is optional; without it the Jacobian is taken by central
    differences.  ``symmetric`` is a claim that the reflection symmetries
    f1(-a, b) = f1(a, b), f2(-a, b) = -f2(a, b) hold; ``check_field`` tests it.
    """

    func: Callable
    jac: Optional[Callable] = None
    hamiltonian: Optional[Callable] = None
    symmetric: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            return np.asarray(self.jac(x), dtype=float)
        return fd_jacobian(self.func, x)


# ---------------------------------------------------------------------------
# set-valued perturbations


@dataclass(frozen=True)
class SwitchingFunction:
    value: Callable
    gradient: Callable
    label: str = ""


@dataclass(frozen=True)
class Generator:
    """Zonotope generator ``lam * direction(t, x)`` with ``lam`` in [lower, upper].

    With ``switch`` set, the generator is a relay on the zero set of that
    switching function: ``lam = lower`` where s(x) > 0, ``lam = upper`` where
    s(x) < 0 and the full interval on s(x) = 0.  A term ``-c*sign(s)*u`` is a
    relay with lower = -c, upper = c.
    """

    direction: Callable
    lower: Callable
    upper: Callable
    switch: Optional[int] = None
    label: str = ""


@dataclass(frozen=True)
class Term:
    """One named contribution to a perturbation; ``switch`` indices are local."""

    center: Callable
    generators: tuple = ()
    switching: tuple = ()
    bound: Callable = lambda t, radius: 0.0
    label: str = ""


@dataclass(frozen=True)
class SetValuedPerturbation:
    """T-periodic map g(t, x, eps) = center + sum lam_i u_i, lam_i in [a_i, b_i]."""

    period: float
    center: Callable
    generators: tuple = ()
    switching: tuple = ()
    bound: Callable = lambda t, radius: 0.0
    labels: tuple = ()

    @classmethod
    def from_terms(cls, period: float, terms: Sequence[Term]) -> "SetValuedPerturbation":
        centers = [t.center for t in terms]
        generators, switching, bounds = [], [], []
        for term in terms:
            offset = len(switching)
            switching.extend(term.switching)
            for gen in term.generators:
                sw = None if gen.switch is None else gen.switch + offset
                generators.append(Generator(gen.direction, gen.lower, gen.upper, sw, gen.label))
            bounds.append(term.bound)

        def center(t, x, eps):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            for c in centers:
                out = out + _like_state(c(t, x, eps), x)
            return out

        def bound(t, radius):
            return float(sum(b(t, radius) for b in bounds))

        return cls(
            period=float(period),
            center=center,
            generators=tuple(generators),
            switching=tuple(switching),
            bound=bound,
            labels=tuple(t.label for t in terms),
        )

    @property
    def has_switching(self) -> bool:
        return bool(self.switching)

    def switch_values(self, x) -> list:
        return [np.asarray(s.value(np.asarray(x, dtype=float)), dtype=float) for s in self.switching]

    def coefficient_bounds(self, t, x, eps, modes=None, surface_tol=0.0):
        """Per-generator coefficient intervals ``(lo, hi)`` at (t, x, eps).

        ``modes`` optionally fixes the side (+1 / -1, or 0 for "on the
        surface") of each switching function instead of reading sign(s(x)).
        """
        x = np.asarray(x, dtype=float)
        svals = None
        out = []
        for gen in self.generators:
            lo = _full(x[0], gen.lower(t, x, eps))
            hi = _full(x[0], gen.upper(t, x, eps))
            if gen.switch is not None:
                if modes is not None:
                    side = _full(x[0], modes[gen.switch])
                else:
                    if svals is None:
                        svals = self.switch_values(x)
                    s = svals[gen.switch]
                    side = np.where(np.abs(s) <= surface_tol, 0.0, np.sign(s))
                lo, hi = (np.where(side < 0, hi, lo), np.where(side > 0, lo, hi))
            out.append((lo, hi))
        return out

    def directions(self, t, x) -> list:
        x = np.asarray(x, dtype=float)
        return [_like_state(g.direction(t, x), x) for g in self.generators]

    def value_center(self, t, x, eps) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return _like_state(self.center(t, x, eps), x)


def support(pert: SetValuedPerturbation, d, t, x, eps, modes=None, surface_tol=0.0):
    """Support function max_{v in g(t,x,eps)} <d, v> (broadcasts over samples)."""
    x = np.asarray(x, dtype=float)
    d = _like_state(d, x)
    val = np.sum(d * pert.value_center(t, x, eps), axis=0)
    bounds = pert.coefficient_bounds(t, x, eps, modes, surface_tol)
    for (lo, hi), u in zip(bounds, pert.directions(t, x)):
        w = np.sum(d * u, axis=0)
        val = val + np.maximum(lo * w, hi * w)
    return val


def extremal_selection(pert: SetValuedPerturbation, d, t, x, eps, modes=None, surface_tol=0.0):
    """A point of g(t,x,eps) attaining the support in direction d.

    Ties (``<d, u_i> = 0``) resolve to the upper coefficient bound.
    """
    x = np.asarray(x, dtype=float)
    d = _like_state(d, x)
    v = pert.value_center(t, x, eps)
    bounds = pert.coefficient_bounds(t, x, eps, modes, surface_tol)
    for (lo, hi), u in zip(bounds, pert.directions(t, x)):
        w = np.sum(d * u, axis=0)
        v = v + np.where(w >= 0, hi, lo) * u
    return v


def membership_residual(pert, v, t, x, eps, scale=1.0, surface_tol=0.0):
    """How far ``v`` lies outside ``scale * g(t, x, eps)`` (<= 0 means inside).

    Tests the facet normals of the zonotope (perpendiculars of the
    generators) plus the generator and coordinate directions, which is exact
    for planar zonotopes including degenerate segments and points.
    """
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    dirs = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    for u in pert.directions(t, x):
        u = u if u.ndim == 1 else u[:, 0]
        n = np.linalg.norm(u)
        if n > 0:
            dirs.append(u / n)
            dirs.append(ROT90 @ u / n)
    worst = -np.inf
    for d in dirs:
        for sgn in (1.0, -1.0):
            dd = sgn * d
            if v.ndim == 2:
                dd = dd[:, None]
            gap = np.sum(dd * v, axis=0) - scale * support(pert, dd, t, x, eps, surface_tol=surface_tol)
            worst = np.maximum(worst, gap)
    return worst


# ---------------------------------------------------------------------------
# catalog


def harmonic() -> PlanarField:
    return PlanarField(
        func=lambda x: np.array([x[1], -x[0]]),
        jac=lambda x: np.array([[_full(x[0], 0.0), _full(x[0], 1.0)], [_full(x[0], -1.0), _full(x[0], 0.0)]]),
        hamiltonian=lambda x: 0.5 * (x[0] ** 2 + x[1] ** 2),
        symmetric=True,
        name="harmonic",
    )


def duffing(k: float = 1.0) -> PlanarField:
    return PlanarField(
        func=lambda x: np.array([x[1], -x[0] - k * x[0] ** 3]),
        jac=lambda x: np.array(
            [[_full(x[0], 0.0), _full(x[0], 1.0)], [-1.0 - 3.0 * k * x[0] ** 2, _full(x[0], 0.0)]]
        ),
        hamiltonian=lambda x: 0.5 * x[1] ** 2 + 0.5 * x[0] ** 2 + 0.25 * k * x[0] ** 4,
        symmetric=True,
        name="duffing",
        params={"k": k},
    )


def pendulum() -> PlanarField:
    return PlanarField(
        func=lambda x: np.array([x[1], -np.sin(x[0])]),
        jac=lambda x: np.array([[_full(x[0], 0.0), _full(x[0], 1.0)], [-np.cos(x[0]), _full(x[0], 0.0)]]),
        hamiltonian=lambda x: 0.5 * x[1] ** 2 - np.cos(x[0]),
        symmetric=True,
        name="pendulum",
    )


FIELDS = {"harmonic": harmonic, "duffing": duffing, "pendulum": pendulum}


def _unit(axis: int):
    e = np.zeros(2)
    e[axis] = 1.0
    return e


def forcing(a: float, period: float, axis: int = 0) -> Term:
    """Harmonic forcing ``a*cos(2*pi*t/T) * e_axis``."""
    e = _unit(axis)
    omega = 2.0 * np.pi / period

    def center(t, x, eps):
        c = a * np.cos(omega * np.asarray(t, dtype=float))
        return np.multiply.outer(e, c) if np.ndim(c) else e * c

    return Term(center=center, bound=lambda t, r: abs(a), label=f"forcing(a={a})")


def dry_friction(c: float, axis: int = 1) -> Term:
    """Coulomb friction ``-c*sign(x_axis) * e_axis``, Filippov-convexified on x_axis = 0."""
    e = _unit(axis)
    switch = SwitchingFunction(
        value=lambda x: np.asarray(x)[axis],
        gradient=lambda x: np.multiply.outer(e, np.ones(np.shape(x)[1:])) if np.ndim(x) > 1 else e.copy(),
        label=f"x{axis + 1}=0",
    )
    gen = Generator(
        direction=lambda t, x: np.multiply.outer(e, np.ones(np.shape(x)[1:])) if np.ndim(x) > 1 else e.copy(),
        lower=lambda t, x, eps: -c,
        upper=lambda t, x, eps: c,
        switch=0,
        label="friction",
    )
    return Term(
        center=lambda t, x, eps: np.zeros_like(np.asarray(x, dtype=float)),
        generators=(gen,),
        switching=(switch,),
        bound=lambda t, r: abs(c),
        label=f"dry_friction(c={c})",
    )


def bounded_disturbance(r: float, axis: int = 1) -> Term:
    """Unmodelled disturbance ``lam * e_axis`` with lam anywhere in [-r, r]."""
    e = _unit(axis)
    gen = Generator(
        direction=lambda t, x: np.multiply.outer(e, np.ones(np.shape(x)[1:])) if np.ndim(x) > 1 else e.copy(),
        lower=lambda t, x, eps: -r,
        upper=lambda t, x, eps: r,
        label="disturbance",
    )
    return Term(
        center=lambda t, x, eps: np.zeros_like(np.asarray(x, dtype=float)),
        generators=(gen,),
        bound=lambda t, rad: abs(r),
        label=f"bounded_disturbance(r={r})",
    )


def zero_perturbation(period: float) -> SetValuedPerturbation:
    return SetValuedPerturbation.from_terms(period, [])


# ---------------------------------------------------------------------------
# checks


@dataclass(frozen=True)
class FieldReport:
    trace_residual: float
    jacobian_residual: float
    symmetry_residual: float
    hamiltonian_ok: bool
    jacobian_ok: bool
    symmetric_ok: bool
    passed: bool

    def as_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else bool(v)) for k, v in self.__dict__.items()}


def sample_box(box, n_samples: int, seed: int = 0) -> np.ndarray:
    """Quasi-random (scrambled Halton) points in ``box = ((lo1, hi1), (lo2, hi2))``, shape (2, n)."""
    lo = np.array([box[0][0], box[1][0]], dtype=float)
    hi = np.array([box[0][1], box[1][1]], dtype=float)
    pts = qmc.Halton(d=2, seed=seed).random(n_samples)
    return (lo + pts * (hi - lo)).T


def check_field(fld: PlanarField, box=((-2.0, 2.0), (-2.0, 2.0)), n_samples: int = 256, tol: float = 1e-8,
                jac_tol: float = 1e-5) -> FieldReport:
    """Sampled check of the divergence-free, Jacobian and reflection-symmetry claims."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    xs = sample_box(box, n_samples)
    J = fld.jacobian(xs)
    scale = np.maximum(1.0, np.abs(J).max(axis=(0, 1)))
    trace = np.abs(J[0, 0] + J[1, 1])
    trace_res = float(np.max(trace / scale))

    J_fd = fd_jacobian(fld.func, xs)
    jac_res = float(np.max(np.abs(J - J_fd).max(axis=(0, 1)) / scale))

    mirrored = xs * np.array([[-1.0], [1.0]])
    f, fm = fld(xs), fld(mirrored)
    fscale = np.maximum(1.0, np.abs(f).max(axis=0))
    sym = np.maximum.reduce([
        np.abs(f[0] - fm[0]) / fscale,
        np.abs(f[1] + fm[1]) / fscale,
        trace / scale,
    ])
    sym_res = float(np.max(sym))

    hamiltonian_ok = trace_res <= tol
    jacobian_ok = jac_res <= jac_tol
    symmetric_ok = sym_res <= tol
    passed = hamiltonian_ok and jacobian_ok and (symmetric_ok or not fld.symmetric)
    return FieldReport(trace_res, jac_res, sym_res, hamiltonian_ok, jacobian_ok, symmetric_ok, passed)


@dataclass(frozen=True)
class PerturbationReport:
    periodicity_residual: float
    bound_excess: float
    passed: bool


def check_perturbation(pert: SetValuedPerturbation, box=((-2.0, 2.0), (-2.0, 2.0)), n_samples: int = 256,
                       eps: float = 0.0, tol: float = 1e-12) -> PerturbationReport:
    """Sampled T-periodicity and boundedness (sup norm of g below mu_B) checks."""
    xs = sample_box(box, n_samples, seed=1)
    ts = np.linspace(-pert.period, 2 * pert.period, n_samples, endpoint=False) + 0.1234
    radius = float(np.max(np.linalg.norm(xs, axis=0)))
    dirs = [np.array([np.cos(a), np.sin(a)]) for a in np.linspace(0, 2 * np.pi, 16, endpoint=False)]
    worst_period = 0.0
    for d in dirs:
        dd = d[:, None]
        a = support(pert, dd, ts, xs, eps)
        b = support(pert, dd, ts + pert.period, xs, eps)
        worst_period = max(worst_period, float(np.max(np.abs(a - b))))
    # sup of a zonotope norm is attained at a vertex; coordinates bound it within sqrt(2)
    norm_sup = np.zeros(n_samples)
    for d in dirs:
        norm_sup = np.maximum(norm_sup, support(pert, d[:, None], ts, xs, eps))
    mu = np.array([pert.bound(t, radius) for t in ts])
    excess = float(np.max(norm_sup - mu))
    return PerturbationReport(worst_period, excess, worst_period <= tol and excess <= tol)
