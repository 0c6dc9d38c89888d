"""Unperturbed cycle, monodromy and the adjoint basis built along it."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateCycle, EquilibriumSeed, NotACycle, NoTransversalZero
from .model import ROT90, PlanarField
from .ode import DEFAULT_TOL, DenseTrajectory, MatrixTrajectory, adjoint_solve, fundamental, solve

NONDEGENERACY_TOL = 1e-6
GAMMA_FLOOR = 1e-10


@dataclass(frozen=True)
class Cycle:
    field: PlanarField
    base_point: np.ndarray
    period: float
    trajectory: DenseTrajectory
    energy: Optional[float] = None
    tol: float = DEFAULT_TOL

    def x(self, t) -> np.ndarray:
        return self.trajectory(t)

    def xdot(self, t) -> np.ndarray:
        return self.field(self.trajectory(t))

    def samples(self, n: int = 512) -> np.ndarray:
        return self.x(np.linspace(0.0, self.period, n, endpoint=False))

    @property
    def diameter(self) -> float:
        pts = self.samples(512)
        diff = pts[:, :, None] - pts[:, None, :]
        return float(np.sqrt((diff ** 2).sum(axis=0)).max())

    def closure_residual(self) -> float:
        end = self.trajectory.pieces[-1].ys[:, -1]
        return float(np.linalg.norm(end - self.base_point))

    def distance_to(self, point, n: int = 2048) -> float:
        pts = self.samples(n)
        return float(np.min(np.linalg.norm(pts - np.asarray(point, dtype=float)[:, None], axis=0)))

    def shifted(self, theta: float) -> "Cycle":
        """The same closed orbit re-based at x0(theta)."""
        return find_cycle(self.field, self.x(theta), tol=self.tol)


def find_cycle(fld: PlanarField, seed, tol: float = DEFAULT_TOL, t_max: Optional[float] = None) -> Cycle:
    """Closed orbit through ``seed`` with T the first same-orientation return time.

    The return section is the line through the seed orthogonal to f(seed).
    """
    seed = np.asarray(seed, dtype=float)
    f0 = fld(seed)
    nf = np.linalg.norm(f0)
    if nf < 1e-12:
        raise EquilibriumSeed(f"f(seed) = {f0} vanishes; no cycle through an equilibrium")
    normal = f0 / nf
    if t_max is None:
        t_max = 100.0 * max(1.0, float(np.linalg.norm(seed)))

    def section(t, x):
        return float(normal @ (x - seed))

    section.direction = 1.0

    def rhs(t, x):
        return fld(x)

    # crossings right at t = 0 are spurious; scan non-terminally in windows
    t_guard = 1e-6 * (1.0 + 1.0 / nf)
    t0, x = 0.0, seed.copy()
    window = min(t_max, 10.0)
    period = None
    while t0 < t_max and period is None:
        t1 = min(t_max, t0 + window)
        _, res = solve(rhs, t0, t1, x, tol, events=[section])
        hits = [te for te in res.t_events[0] if te > t_guard]
        if hits:
            period = float(hits[0])
        t0, x = t1, res.y[:, -1]
    if period is None:
        raise NotACycle(f"no return to the section within t_max={t_max}")

    piece, res = solve(rhs, 0.0, period, seed, tol)
    end = res.y[:, -1]
    if np.linalg.norm(end - seed) > 1e3 * max(tol, 1e-12) * (1.0 + np.linalg.norm(seed)):
        raise NotACycle(f"orbit does not close: |x(T) - x(0)| = {np.linalg.norm(end - seed):.3e}")
    traj = DenseTrajectory([piece], period=period, tol=tol)
    energy = None if fld.hamiltonian is None else float(fld.hamiltonian(seed))
    return Cycle(fld, seed, period, traj, energy, tol)


# ---------------------------------------------------------------------------
# monodromy


@dataclass(frozen=True)
class Monodromy:
    """X(T) with X(0) = I.

    ``multipliers`` deflate the trivial multiplier along f(x0(0)) (an exact
    eigenvector for any autonomous cycle): m1 is read off the adapted form
    and m2 = det X / m1.  ``eigenvalues`` are the raw ones, which for a
    Jordan block carry square-root-amplified integration error.
    """

    matrix: np.ndarray
    multipliers: np.ndarray
    eigenvalues: np.ndarray
    shear: float
    adapted: np.ndarray
    basis: np.ndarray

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    @property
    def deviation(self) -> float:
        return float(np.linalg.norm(self.matrix - np.eye(2), 2))


def monodromy(cycle: Cycle, tol: Optional[float] = None) -> Monodromy:
    """X(T) with X(0) = I and its shear in the basis (grad-normalised normal, f).

    In the basis P = [n, f(x0(0))] with <grad H, n> = 1 the matrix takes the
    form [[1, 0], [b, 1]]; b is then -dT/dE.
    """
    tol = cycle.tol if tol is None else tol
    X = fundamental(cycle.field, cycle.trajectory, np.eye(2), (0.0, cycle.period), tol)(cycle.period)
    f0 = cycle.field(cycle.base_point)
    n0 = ROT90 @ f0
    P = np.column_stack([n0 / (n0 @ n0), f0])
    B = np.linalg.solve(P, X @ P)
    trivial = float(B[1, 1])
    mults = np.array([trivial, np.linalg.det(X) / trivial])
    return Monodromy(X, mults, np.linalg.eigvals(X), float(B[1, 0]), B, P)


def is_nondegenerate(mono: Monodromy, tol: float = NONDEGENERACY_TOL) -> bool:
    """True iff ||X(T) - I|| exceeds ``tol``: some linearized solution is not T-periodic."""
    return mono.deviation > tol


# ---------------------------------------------------------------------------
# adjoint basis


def _zeros_of(fun: Callable, a: float, b: float, n: int = 2048) -> list:
    ts = np.linspace(a, b, n + 1)
    vals = fun(ts)
    roots = []
    for i in range(n):
        if vals[i] == 0.0:
            roots.append(float(ts[i]))
        elif vals[i] * vals[i + 1] < 0:
            roots.append(brentq(lambda s: float(fun(np.array([s]))[0]), ts[i], ts[i + 1], xtol=1e-14, rtol=1e-15))
    return roots


@dataclass(frozen=True)
class AdjointBasis:
    """Periodic and secular adjoint solutions with the derived gamma and y.

    ``z_tilde = scale * R90 f(x0(t))`` (= scale * grad H for Hamiltonian
    fields) and ``z_hat`` solves the adjoint system on [-T, 2T] from
    ``f/|f|^2 + gauge * z_tilde(0)``.  ``kappa`` is the coefficient of
    z_hat(t + T) = z_hat(t) + kappa z_tilde(t) and ``gamma = 1/kappa``.
    """

    cycle: Cycle
    z_hat_traj: DenseTrajectory
    t_star: float
    t_star_candidates: tuple
    kappa: float
    monodromy: Monodromy
    scale: float = 1.0
    gauge: float = 0.0

    @property
    def period(self) -> float:
        return self.cycle.period

    @property
    def gamma(self) -> float:
        return np.inf if self.kappa == 0.0 else 1.0 / self.kappa

    @property
    def shear(self) -> float:
        return self.monodromy.shear

    def z_tilde(self, t) -> np.ndarray:
        return self.scale * (ROT90 @ self.cycle.xdot(t))

    def z_hat(self, t) -> np.ndarray:
        return self.z_hat_traj(t)

    def y(self, t) -> np.ndarray:
        """Second column of inv([z_hat^T; z_tilde^T]); the first column is x0'(t)."""
        zh, zt = self.z_hat(t), self.z_tilde(t)
        det = zh[0] * zt[1] - zh[1] * zt[0]
        return np.array([-zh[1], zh[0]]) / det

    def with_t_star(self, t_star: float) -> "AdjointBasis":
        return replace(self, t_star=float(t_star), kappa=_kappa(self, t_star))


def _kappa(basis: AdjointBasis, t_star: float) -> float:
    T = basis.period
    jump = float(basis.z_hat(t_star + T)[1] - basis.z_hat(t_star)[1])
    return jump / float(basis.z_tilde(t_star)[1])


def build_adjoint_basis(cycle: Cycle, scale: float = 1.0, gauge: float = 0.0, tol: Optional[float] = None,
                        require_nondegenerate: bool = True, mono: Optional[Monodromy] = None) -> AdjointBasis:
    """Construct z_tilde, z_hat, t*, gamma and y along ``cycle``.

    t* is the zero of z_tilde_1 in [0, T) with the largest |z_tilde_2|.
    Raises DegenerateCycle when |z_hat_2(T+t*) - z_hat_2(t*)| < 1e-10.
    """
    tol = cycle.tol if tol is None else tol
    T = cycle.period
    f0 = cycle.field(cycle.base_point)
    zt0 = scale * (ROT90 @ f0)
    zh0 = f0 / (f0 @ f0) + gauge * zt0
    z_hat = adjoint_solve(cycle.field, cycle.trajectory, zh0, (-T, 2.0 * T), tol)
    mono = monodromy(cycle, tol) if mono is None else mono

    def zt1(ts):
        return scale * (ROT90 @ cycle.xdot(ts))[0]

    roots = [r for r in _zeros_of(zt1, 0.0, T) if r < T]
    if not roots:
        raise NoTransversalZero("first component of the periodic adjoint solution never vanishes")
    z2 = np.abs(scale * (ROT90 @ cycle.xdot(np.array(roots)))[1])
    t_star = float(roots[int(np.argmax(z2))])

    basis = AdjointBasis(cycle, z_hat, t_star, tuple(roots), 0.0, mono, scale, gauge)
    jump = float(z_hat(t_star + T)[1] - z_hat(t_star)[1])
    if require_nondegenerate and abs(jump) < GAMMA_FLOOR:
        raise DegenerateCycle(f"z_hat_2(T+t*) - z_hat_2(t*) = {jump:.3e}; gamma undefined")
    return replace(basis, kappa=_kappa(basis, t_star))


def secular_jump_residual(basis: AdjointBasis, n: int = 1001) -> float:
    """max_t |z_hat(t+T) - z_hat(t) - z_tilde(t)/gamma| on [0, T]."""
    ts = np.linspace(0.0, basis.period, n)
    res = basis.z_hat(ts + basis.period) - basis.z_hat(ts) - basis.kappa * basis.z_tilde(ts)
    return float(np.max(np.linalg.norm(res, axis=0)))


def fundamental_for_duality(basis: AdjointBasis, tol: Optional[float] = None) -> MatrixTrajectory:
    """Y with Y(0) = [y(0) | x0'(0)], the A of z_hat(0)^T A = (0, 1)."""
    cyc = basis.cycle
    tol = cyc.tol if tol is None else tol
    A = np.column_stack([basis.y(0.0), cyc.xdot(0.0)])
    return fundamental(cyc.field, cyc.trajectory, A, (-cyc.period, 2.0 * cyc.period), tol)


@dataclass(frozen=True)
class BasisInvariants:
    perron: float
    orthogonality: float
    normalization: float
    liouville: float
    secular_jump: float
    form: float
    adjoint_residual: float

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def basis_invariants(basis: AdjointBasis, n: int = 1501) -> BasisInvariants:
    """Residuals of the structural identities over a dense grid on [-T, 2T]."""
    cyc = basis.cycle
    T = cyc.period
    ts = np.linspace(-T, 2.0 * T, n)
    Y = fundamental_for_duality(basis)
    Ys = Y(ts)
    zh, zt, xd = basis.z_hat(ts), basis.z_tilde(ts), cyc.xdot(ts)

    perron = np.max(np.abs(np.einsum("in,nij->nj", zh, Ys) - np.array([0.0, 1.0])))
    norms = np.linalg.norm(xd, axis=0) * np.linalg.norm(zt, axis=0)
    orth = np.max(np.abs(np.sum(xd * zt, axis=0)) / norms)
    normal = np.max(np.abs(np.sum(xd * zh, axis=0) - 1.0))
    det0 = np.linalg.det(Y.A)
    liou = np.max(np.abs(np.linalg.det(Ys) - det0)) / abs(det0)
    # (x0', y) == inv([z_hat^T; z_tilde^T]) with y from the linearized solve
    form = 0.0
    for j in range(ts.size):
        M = np.linalg.inv(np.array([zh[:, j], zt[:, j]]))
        form = max(form, float(np.max(np.abs(M - np.column_stack([xd[:, j], Ys[j][:, 0]])))))
    # z_tilde solves the adjoint equation: d/dt z + f'(x0)^T z = 0
    J = cyc.field.jacobian(cyc.x(ts))
    ztdot = basis.scale * (ROT90 @ np.einsum("ijn,jn->in", J, xd))
    adj = np.max(np.abs(ztdot + np.einsum("jin,jn->in", J, zt)))
    return BasisInvariants(float(perron), float(orth), float(normal), float(liou),
                           secular_jump_residual(basis), form, float(adj))


# operation name used by the public interface
lemma1_residual = secular_jump_residual
