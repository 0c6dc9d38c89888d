import numpy as np
import pytest

from cycleperturb.errors import StepSizeUnderflow
from cycleperturb.model import ROT90, PlanarField, duffing, harmonic
from cycleperturb.ode import adjoint_solve, flow, fundamental, integrate


def rot(t):
    """Flow matrix of x' = (x2, -x1): rotation by -t."""
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, s], [-s, c]])


def test_harmonic_quarter_turn():
    traj = integrate(harmonic(), [1.0, 0.0], 0.0, np.pi / 2)
    np.testing.assert_allclose(traj(np.pi / 2), [0.0, -1.0], atol=1e-9)


def test_flow_semigroup():
    fld, xi = duffing(1.0), np.array([0.8, 0.3])
    mid = flow(fld, xi, 0.0, 1.3)
    np.testing.assert_allclose(flow(fld, mid, 1.3, 3.1), flow(fld, xi, 0.0, 3.1), atol=1e-8)


def test_duffing_period_closure(duffing_cycle):
    end = flow(duffing(1.0), [1.0, 0.0], 0.0, duffing_cycle.period)
    np.testing.assert_allclose(end, [1.0, 0.0], atol=1e-8)


def test_dense_output_reproduces_mesh_and_is_continuous():
    traj = integrate(duffing(1.0), [1.0, 0.0], 0.0, 5.0)
    piece = traj.pieces[0]
    np.testing.assert_allclose(traj(piece.ts[:-1]), piece.ys[:, :-1], atol=1e-14, rtol=0)
    inner = piece.ts[1:-1]
    left, right = traj(inner - 1e-13), traj(inner + 1e-13)
    assert np.max(np.abs(left - right)) <= 1e-11


def test_fixed_step_order():
    """Halving a fixed step shrinks the harmonic endpoint error by >= 8x until round-off."""
    exact = rot(2 * np.pi) @ np.array([1.0, 0.0])
    errs = []
    for n in (8, 16, 32):
        end = integrate(harmonic(), [1.0, 0.0], 0.0, 2 * np.pi, fixed_step=2 * np.pi / n)(2 * np.pi)
        errs.append(np.linalg.norm(end - exact))
    for a, b in zip(errs, errs[1:]):
        assert b <= a / 8 or b < 1e-13, errs


def test_tolerance_must_be_positive():
    with pytest.raises(ValueError):
        integrate(harmonic(), [1.0, 0.0], 0.0, 1.0, tol=0.0)


def test_blow_up_raises_step_underflow():
    blow = PlanarField(lambda x: np.array([x[0] ** 2, 0.0 * x[1]]), name="blowup")
    with pytest.raises(StepSizeUnderflow):
        integrate(blow, [1.0, 0.0], 0.0, 2.0)


def test_harmonic_fundamental_is_rotation(harmonic_cycle):
    A = np.array([[2.0, 1.0], [0.5, 1.0]])
    T = harmonic_cycle.period
    Y = fundamental(harmonic(), harmonic_cycle.trajectory, A, (-T, 2 * T))
    for t in np.linspace(-T, 2 * T, 13):
        np.testing.assert_allclose(Y(t), rot(t) @ A, atol=1e-9)


def test_liouville_and_monodromy_eigenvalues(duffing_cycle):
    T = duffing_cycle.period
    A = np.array([[1.0, 0.3], [-0.2, 0.9]])
    Y = fundamental(duffing(1.0), duffing_cycle.trajectory, A, (0.0, 2 * T))
    dets = Y.det(np.linspace(0.0, 2 * T, 400))
    assert np.max(np.abs(dets - np.linalg.det(A))) <= 1e-8 * abs(np.linalg.det(A))
    X = fundamental(duffing(1.0), duffing_cycle.trajectory, np.eye(2), (0.0, T))(T)
    # a Jordan block: eigenvalues carry sqrt-amplified error, the trace does not
    assert abs(np.trace(X) - 2.0) <= 1e-8
    assert np.max(np.abs(np.linalg.eigvals(X) - 1.0)) <= 1e-4


def test_adjoint_of_rotated_velocity_is_rotated_velocity(duffing_cycle):
    fld, T = duffing(1.0), duffing_cycle.period
    z0 = ROT90 @ fld(duffing_cycle.base_point)
    z = adjoint_solve(fld, duffing_cycle.trajectory, z0, (-T, 2 * T))
    ts = np.linspace(-T, 2 * T, 301)
    np.testing.assert_allclose(z(ts), ROT90 @ duffing_cycle.xdot(ts), atol=1e-8)


def test_adjoint_duality_and_lagrange_identity(duffing_cycle):
    fld, T = duffing(1.0), duffing_cycle.period
    A = np.array([[1.0, 0.4], [0.2, 1.5]])
    Y = fundamental(fld, duffing_cycle.trajectory, A, (-T, 2 * T))
    Z0 = np.linalg.inv(A.T)
    cols = [adjoint_solve(fld, duffing_cycle.trajectory, Z0[:, j], (-T, 2 * T)) for j in range(2)]
    ts = np.linspace(-T, 2 * T, 301)
    worst = 0.0
    for t in ts:
        Z = np.column_stack([c(t) for c in cols])
        worst = max(worst, np.max(np.abs(Z.T @ Y(t) - np.eye(2))))
    assert worst <= 1e-8
    c = np.array([0.7, -1.1])
    vals = [cols[0](t) @ (Y(t) @ c) for t in ts]
    assert np.ptp(vals) <= 1e-8


def test_periodic_evaluation_and_csv(duffing_cycle, tmp_path):
    T = duffing_cycle.period
    np.testing.assert_allclose(duffing_cycle.x(0.4 + 3 * T), duffing_cycle.x(0.4), atol=1e-9)
    np.testing.assert_allclose(duffing_cycle.x(0.4 - T), duffing_cycle.x(0.4), atol=1e-9)
    path = tmp_path / "c.csv"
    duffing_cycle.trajectory.to_csv(path, n=11)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (11, 3)
    assert path.read_text().splitlines()[0] == "t,x1,x2"
