"""Adaptive integration with dense output, variational and adjoint solves.

All solves use the explicit Dormand-Prince 8(5,3) pair from scipy with its
7th-order continuous extension.  Trajectories are stitched from one or more
``OdeSolution`` pieces so that event-split (Filippov) solutions and two-sided
spans around t = 0 share one evaluation interface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import StepSizeUnderflow
from .model import PlanarField

DEFAULT_TOL = 1e-10
UNDERFLOW_FACTOR = 1e-14


@dataclass(frozen=True)
class Piece:
    t_lo: float
    t_hi: float
    sol: Callable
    rhs: Callable
    mode: Optional[tuple] = None
    ts: Optional[np.ndarray] = None
    ys: Optional[np.ndarray] = None


class DenseTrajectory:
    """Continuous solution on ``[t_a, t_b]`` built from dense-output pieces.

    With ``period`` set, times outside the span are reduced modulo the period
    onto ``[t_a, t_a + period)``.  ``index`` selects the exposed components of
    an augmented state.
    """

    def __init__(self, pieces: Sequence[Piece], period: Optional[float] = None, index=slice(None),
                 tol: Optional[float] = None):
        if not pieces:
            raise ValueError("empty trajectory")
        self.pieces = tuple(sorted(pieces, key=lambda p: p.t_lo))
        self.period = period
        self.index = index
        self.tol = tol
        self._bounds = np.array([p.t_lo for p in self.pieces[1:]])

    @property
    def t_span(self) -> tuple:
        return self.pieces[0].t_lo, self.pieces[-1].t_hi

    def view(self, index) -> "DenseTrajectory":
        return DenseTrajectory(self.pieces, self.period, index, self.tol)

    def periodic(self, period: float) -> "DenseTrajectory":
        return DenseTrajectory(self.pieces, period, self.index, self.tol)

    @property
    def mesh(self) -> np.ndarray:
        """Accepted step nodes across all pieces (sorted, de-duplicated)."""
        return np.unique(np.concatenate([np.sort(p.ts) for p in self.pieces]))

    def _reduce(self, t):
        t = np.asarray(t, dtype=float)
        if self.period is not None:
            t_a = self.pieces[0].t_lo
            t = t_a + np.mod(t - t_a, self.period)
        return t

    def _full(self, t) -> np.ndarray:
        t = self._reduce(t)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        which = np.searchsorted(self._bounds, tt, side="right")
        first = self.pieces[0].sol(tt[:1])
        out = np.empty((first.shape[0], tt.size))
        for k in np.unique(which):
            sel = which == k
            out[:, sel] = self.pieces[k].sol(tt[sel])
        return out[:, 0] if scalar else out

    def __call__(self, t) -> np.ndarray:
        return self._full(t)[self.index]

    def derivative(self, t) -> np.ndarray:
        """Right-hand side evaluated along the stored solution (one-sided at events)."""
        t = self._reduce(t)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        which = np.searchsorted(self._bounds, tt, side="right")
        y = self._full(tt)
        out = np.empty_like(y)
        for j, (tj, k) in enumerate(zip(tt, which)):
            out[:, j] = self.pieces[k].rhs(tj, y[:, j])
        out = out[self.index]
        return out[:, 0] if scalar else out

    def modes(self) -> list:
        return [(p.t_lo, p.t_hi, p.mode) for p in self.pieces]

    def to_csv(self, path, times=None, n: int = 1001) -> None:
        if times is None:
            a, b = self.t_span
            times = np.linspace(a, b, n)
        vals = np.atleast_2d(self(times))
        cols = ["t"] + [f"x{i + 1}" for i in range(vals.shape[0])]
        data = np.column_stack([times, vals.T])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def solve(rhs: Callable, t0: float, t1: float, y0, tol: float = DEFAULT_TOL, events=None,
          fixed_step: Optional[float] = None, mode=None):
    """One DOP853 solve; returns ``(Piece, scipy result)``.

    Raises StepSizeUnderflow when the controller fails or drives the step
    below 1e-14*|t1 - t0|.
    """
    y0 = np.asarray(y0, dtype=float)
    kwargs = dict(method="DOP853", dense_output=True, events=events)
    if fixed_step is not None:
        kwargs.update(rtol=1e3, atol=1e3, first_step=fixed_step, max_step=fixed_step)
    else:
        kwargs.update(rtol=tol, atol=tol)
    res = solve_ivp(rhs, (t0, t1), y0, **kwargs)
    if res.status == -1:
        raise StepSizeUnderflow(f"integration failed at t={res.t[-1]!r}: {res.message}")
    steps = np.abs(np.diff(res.t))
    if steps.size > 1 and steps[:-1].min() < UNDERFLOW_FACTOR * abs(t1 - t0):
        raise StepSizeUnderflow(f"step size {steps[:-1].min():.3e} below floor")
    t_end = res.t[-1]
    lo, hi = (t0, t_end) if t_end >= t0 else (t_end, t0)
    piece = Piece(lo, hi, res.sol, rhs, mode, res.t.copy(), res.y.copy())
    return piece, res


def _field_rhs(fld: PlanarField):
    def rhs(t, x):
        return fld(x)
    return rhs


def integrate(fld: PlanarField, x0, t0: float, t1: float, tol: float = DEFAULT_TOL,
              fixed_step: Optional[float] = None) -> DenseTrajectory:
    """Dense solution of x' = f(x) from (t0, x0) to t1."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    piece, _ = solve(_field_rhs(fld), t0, t1, x0, tol, fixed_step=fixed_step)
    return DenseTrajectory([piece], tol=tol)


def flow(fld: PlanarField, x0, t0: float, t1: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Endpoint of the flow map Omega(t1, t0, x0)."""
    if t1 == t0:
        return np.asarray(x0, dtype=float).copy()
    _, res = solve(_field_rhs(fld), t0, t1, x0, tol)
    return res.y[:, -1].copy()


def _two_sided(rhs, y0, span, tol, t_ref=0.0) -> list:
    a, b = span
    if not a <= t_ref <= b:
        raise ValueError(f"span {span} must contain t={t_ref}")
    pieces = []
    if a < t_ref:
        pieces.append(solve(rhs, t_ref, a, y0, tol)[0])
    if b > t_ref:
        pieces.append(solve(rhs, t_ref, b, y0, tol)[0])
    return pieces


class MatrixTrajectory:
    """Dense 2x2 matrix solution, exposed as ``Y(t)`` of shape (2, 2) or (n, 2, 2)."""

    def __init__(self, traj: DenseTrajectory, A):
        self.traj = traj
        self.A = np.array(A, dtype=float)

    @property
    def t_span(self):
        return self.traj.t_span

    def __call__(self, t) -> np.ndarray:
        flat = self.traj(t)
        if flat.ndim == 1:
            return flat.reshape(2, 2)
        return flat.T.reshape(-1, 2, 2)

    def det(self, t) -> np.ndarray:
        return np.linalg.det(self(t))

    def column(self, j: int) -> Callable:
        def col(t):
            Y = self(t)
            return Y[:, j] if Y.ndim == 2 else Y[:, :, j].T
        return col


def fundamental(fld: PlanarField, cycle_traj: DenseTrajectory, A, span, tol: float = DEFAULT_TOL
                ) -> MatrixTrajectory:
    """Solve Y' = f'(x0(t)) Y with Y(0) = A along the cycle.

    The cycle state is carried along in an augmented system started from
    ``cycle_traj(0)``, which keeps f'(x0(t)) as smooth as the solver.
    """
    A = np.asarray(A, dtype=float)
    if abs(np.linalg.det(A)) < 1e-14:
        raise ValueError("initial matrix must be nonsingular")

    def rhs(t, y):
        J = fld.jacobian(y[:2])
        return np.concatenate([fld(y[:2]), (J @ y[2:].reshape(2, 2)).ravel()])

    y0 = np.concatenate([cycle_traj(0.0), A.ravel()])
    pieces = _two_sided(rhs, y0, span, tol)
    return MatrixTrajectory(DenseTrajectory(pieces, index=slice(2, 6), tol=tol), A)


def adjoint_solve(fld: PlanarField, cycle_traj: DenseTrajectory, z0, span, tol: float = DEFAULT_TOL
                  ) -> DenseTrajectory:
    """Solve z' = -f'(x0(t))^T z with z(0) = z0 along the cycle."""

    def rhs(t, y):
        J = fld.jacobian(y[:2])
        return np.concatenate([fld(y[:2]), -J.T @ y[2:]])

    y0 = np.concatenate([cycle_traj(0.0), np.asarray(z0, dtype=float)])
    pieces = _two_sided(rhs, y0, span, tol)
    return DenseTrajectory(pieces, index=slice(2, 4), tol=tol)


def linearized_solve(fld: PlanarField, cycle_traj: DenseTrajectory, y0, span, tol: float = DEFAULT_TOL
                     ) -> DenseTrajectory:
    """Solve y' = f'(x0(t)) y with y(0) = y0 along the cycle (vector version of ``fundamental``)."""

    def rhs(t, y):
        J = fld.jacobian(y[:2])
        return np.concatenate([fld(y[:2]), J @ y[2:]])

    init = np.concatenate([cycle_traj(0.0), np.asarray(y0, dtype=float)])
    pieces = _two_sided(rhs, init, span, tol)
    return DenseTrajectory(pieces, index=slice(2, 4), tol=tol)
