import numpy as np
import pytest
from scipy.integrate import quad

from cycleperturb.asymptotics import (Interval, build_symmetric_solution, displacement, displacement_ratio,
                                      inclusion_residual, melnikov_interval, melnikov_zeros, mperp, mperp_profile,
                                      mperp_symmetric, adjoint_from_linearized_residual, point_interval_distance,
                                      predict_displacement, seed_phase, segment_distance, tangential_coefficient,
                                      transversal_coefficient, MelnikovZero)
from cycleperturb.cycle import build_adjoint_basis, find_cycle
from cycleperturb.errors import DegenerateCycle, NotSymmetric, NoTransversalZero
from cycleperturb.inclusion import cycle_as_orbit
from cycleperturb.model import (PlanarField, SetValuedPerturbation, bounded_disturbance, duffing, forcing,
                                harmonic, zero_perturbation)
from cycleperturb.oracles import bang_bang_mperp, melnikov_trapezoid, monte_carlo_mperp

QTOL = 1e-8


@pytest.fixture(scope="module")
def disturbed(duffing_cycle):
    """Forcing plus a free disturbance on x2: a nondegenerate interval M_perp."""
    T = duffing_cycle.period
    return SetValuedPerturbation.from_terms(T, [forcing(1.0, T), bounded_disturbance(0.3)])


def test_interval_helpers():
    iv = Interval(-1.0, 2.0)
    assert iv.width == 3.0 and iv.mid == 0.5
    assert iv.scaled(-2.0) == Interval(-4.0, 2.0)
    assert iv.contains(2.0 + 1e-9, tol=1e-8) and not iv.contains(2.1)
    assert iv.distance(3.0) == 1.0 and iv.distance(0.0) == 0.0
    np.testing.assert_allclose(point_interval_distance(np.array([-2.0, 0.0, 5.0]), -1.0, 2.0), [1.0, 0.0, 3.0])
    with pytest.raises(ValueError):
        Interval(1.0, 0.0)


def test_zero_perturbation_gives_zero(duffing_cycle, duffing_basis):
    iv = mperp(duffing_cycle, duffing_basis, zero_perturbation(duffing_cycle.period), 1.0)
    assert iv == Interval(0.0, 0.0)


def test_singleton_forcing_is_degenerate_and_matches_scalar_quad(duffing_cycle, duffing_basis):
    T = duffing_cycle.period
    pert = SetValuedPerturbation.from_terms(T, [forcing(1.0, T)])
    t = 2.3
    iv = mperp(duffing_cycle, duffing_basis, pert, t, QTOL)
    assert iv.width <= 1e-14
    # oracle: scalar adaptive quadrature of gamma * <-z_hat(s), (cos(2 pi s / T), 0)>
    integrand = lambda s: -duffing_basis.z_hat(s)[0] * np.cos(2 * np.pi * s / T)
    ref = duffing_basis.gamma * quad(integrand, t - T, t, epsabs=1e-12, limit=400)[0]
    assert iv.mid == pytest.approx(ref, abs=QTOL)


def test_window_must_lie_in_one_period(duffing_cycle, duffing_basis, reference_pert):
    with pytest.raises(ValueError):
        mperp(duffing_cycle, duffing_basis, reference_pert, -0.5)


@pytest.mark.parametrize("t", [0.0, 1.7, 4.5])
def test_monte_carlo_selections_stay_inside(duffing_cycle, duffing_basis, disturbed, t, rng):
    iv = mperp(duffing_cycle, duffing_basis, disturbed, t, QTOL)
    assert iv.width > 0.5
    vals = monte_carlo_mperp(duffing_basis, disturbed, t, 2000, rng=rng)
    assert np.all(vals >= iv.lo - QTOL) and np.all(vals <= iv.hi + QTOL)
    # random selections average to the midpoint and never reach the ends
    assert np.mean(vals) == pytest.approx(iv.mid, abs=0.02 * iv.width)
    lo, hi = bang_bang_mperp(duffing_basis, disturbed, t)
    assert abs(lo - iv.lo) <= 2 * QTOL and abs(hi - iv.hi) <= 2 * QTOL


def test_bang_bang_on_reference(duffing_cycle, duffing_basis, reference_pert):
    for t in np.linspace(0, duffing_cycle.period, 5, endpoint=False):
        iv = mperp(duffing_cycle, duffing_basis, reference_pert, float(t), QTOL)
        lo, hi = bang_bang_mperp(duffing_basis, reference_pert, float(t))
        assert abs(lo - iv.lo) <= 2 * QTOL and abs(hi - iv.hi) <= 2 * QTOL


def test_profile_matches_pointwise(duffing_cycle, duffing_basis, disturbed):
    prof = mperp_profile(duffing_cycle, duffing_basis, disturbed, QTOL, n=64)
    for k in (0, 13, 40, 63):
        iv = mperp(duffing_cycle, duffing_basis, disturbed, float(prof.times[k]), QTOL)
        assert abs(prof.lo[k] - iv.lo) <= 2 * QTOL and abs(prof.hi[k] - iv.hi) <= 2 * QTOL
    lo, hi = prof.interval(prof.times[-1])
    assert (lo, hi) == (prof.lo[-1], prof.hi[-1])
    assert prof.factor == -1.0
    lo, hi = prof.signed(prof.times[5])
    assert (lo, hi) == (-prof.hi[5], -prof.lo[5])
    with pytest.raises(ValueError):
        mperp_profile(duffing_cycle, duffing_basis, disturbed, n=8, sigma=0.5)


def test_profile_drift_over_one_period_is_minus_melnikov(duffing_cycle, duffing_basis):
    # z_hat(s) - z_hat(s - T) = kappa z_tilde(s) and gamma * kappa = 1, so I(T) - I(0) = -M(0)
    T = duffing_cycle.period
    pert = SetValuedPerturbation.from_terms(T, [forcing(1.0, T)])
    prof = mperp_profile(duffing_cycle, duffing_basis, pert, QTOL, n=16)
    m0 = melnikov_trapezoid(duffing_basis, pert, 0.0)[0]
    assert abs(m0) > 0.1
    assert prof.lo[-1] - prof.lo[0] == pytest.approx(-m0, abs=1e-7)


def test_literal_profile_uses_gamma(duffing_cycle, duffing_basis, disturbed):
    prof = mperp_profile(duffing_cycle, duffing_basis, disturbed, QTOL, n=16, literal=True)
    g = duffing_basis.gamma
    lo, hi = prof.signed(prof.times)
    np.testing.assert_allclose(lo, np.minimum(g * prof.lo, g * prof.hi))
    np.testing.assert_allclose(hi, np.maximum(g * prof.lo, g * prof.hi))


def test_symmetric_formula_agrees(duffing_cycle, duffing_basis, disturbed):
    sym = build_symmetric_solution(duffing_cycle)
    for t in np.linspace(0, duffing_cycle.period, 16, endpoint=False):
        a = mperp(duffing_cycle, duffing_basis, disturbed, float(t), QTOL)
        b = mperp_symmetric(duffing_cycle, sym, disturbed, float(t), QTOL)
        assert abs(a.lo - b.lo) <= 2 * QTOL and abs(a.hi - b.hi) <= 2 * QTOL


def test_symmetric_off_axis_base_point(duffing_cycle, disturbed):
    cyc = duffing_cycle.shifted(0.9)
    basis = build_adjoint_basis(cyc)
    sym = build_symmetric_solution(cyc)
    assert sym.t_star > 0.0
    a = mperp(cyc, basis, disturbed, 2.0, QTOL)
    b = mperp_symmetric(cyc, sym, disturbed, 2.0, QTOL)
    assert abs(a.lo - b.lo) <= 2 * QTOL and abs(a.hi - b.hi) <= 2 * QTOL


def test_adjoint_from_linearized(duffing_cycle):
    res = adjoint_from_linearized_residual(build_symmetric_solution(duffing_cycle))
    assert res["periodic"] <= 1e-7 and res["secular"] <= 1e-7


def test_symmetric_rejections(harmonic_cycle):
    with pytest.raises(DegenerateCycle):
        build_symmetric_solution(harmonic_cycle)
    # x' = y + x^2/10 ... a Hamiltonian field without the reflection symmetry
    skew = PlanarField(lambda x: np.array([x[1] + 0.1 * x[1] ** 2, -x[0] - 0.1 * x[0] ** 2]), name="skew")
    cyc = find_cycle(skew, [0.5, 0.0])
    with pytest.raises(NotSymmetric):
        build_symmetric_solution(cyc)


def test_reconstruction_identity(reference_setup, reference_ladder):
    s = reference_setup
    orbit = reference_ladder[1].orbit
    ts = np.linspace(0, s.rebased.period, 97)
    dx = displacement(orbit, s.rebased, ts)
    c = transversal_coefficient(orbit, s.rebased, s.basis, ts)
    a = tangential_coefficient(orbit, s.rebased, s.basis, ts)
    rebuilt = orbit.eps * c * s.basis.y(ts) + a * s.rebased.xdot(ts)
    err = np.linalg.norm(rebuilt - dx, axis=0)
    assert np.all(err <= 1e-9 * np.linalg.norm(dx, axis=0) + 1e-15)


def test_predicted_segment_is_parallel_to_y(reference_setup, reference_ladder, duffing_cycle, disturbed):
    s = reference_setup
    orbit = reference_ladder[1].orbit
    prof = mperp_profile(s.rebased, s.basis, disturbed, QTOL, n=32)
    ts = prof.times[:-1]
    seg = predict_displacement(s.rebased, s.basis, prof, orbit, ts)
    assert seg.shape == (2, 2, ts.size)
    d = seg[:, 1] - seg[:, 0]
    y = s.basis.y(ts)
    assert np.max(np.abs(d[0] * y[1] - d[1] * y[0])) <= 1e-12
    np.testing.assert_allclose(np.linalg.norm(d, axis=0), orbit.eps * (prof.hi - prof.lo)[:-1] *
                               np.linalg.norm(y, axis=0), rtol=1e-9)
    assert predict_displacement(s.rebased, s.basis, prof, orbit, 0.3).shape == (2, 2)


def test_segment_distance():
    seg = np.array([[0.0, 2.0], [0.0, 0.0]])
    assert segment_distance(np.array([1.0, 1.0]), seg) == pytest.approx(1.0)
    assert segment_distance(np.array([3.0, 0.0]), seg) == pytest.approx(1.0)
    point = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert segment_distance(np.array([1.0, 2.0]), point) == pytest.approx(1.0)


def test_displacement_ratio(duffing_cycle, reference_setup, reference_ladder):
    assert displacement_ratio(cycle_as_orbit(duffing_cycle), duffing_cycle) == 0.0
    orbit = reference_ladder[1].orbit
    a = displacement_ratio(orbit, reference_setup.rebased, 2048)
    b = displacement_ratio(orbit, reference_setup.rebased, 4096)
    assert abs(a - b) <= 0.01 * b


def test_inclusion_residual_zero_for_cycle(reference_setup):
    s = reference_setup
    res = inclusion_residual(cycle_as_orbit(s.rebased), s.rebased, s.basis, s.profile, s.profile.times)
    # c = 0 on the cycle; the residual is the distance from 0 to sigma*I(t)
    lo, hi = s.profile.signed(s.profile.times)
    np.testing.assert_allclose(res, point_interval_distance(0.0, lo, hi), atol=0)


def test_melnikov_matches_trapezoid_for_smooth_forcing(duffing_cycle, duffing_basis):
    T = duffing_cycle.period
    pert = SetValuedPerturbation.from_terms(T, [forcing(1.0, T)])
    for th in (0.0, 0.8, 3.1):
        iv = melnikov_interval(duffing_cycle, duffing_basis, pert, th)
        lo, hi = melnikov_trapezoid(duffing_basis, pert, th)
        assert abs(iv.lo - lo) <= 1e-9 and abs(iv.hi - hi) <= 1e-9
    a = melnikov_interval(duffing_cycle, duffing_basis, pert, 0.8)
    b = melnikov_interval(duffing_cycle, duffing_basis, pert, 0.8 + T)
    assert abs(a.lo - b.lo) <= 1e-9


def test_melnikov_zeros_reference(duffing_cycle, duffing_basis, reference_pert):
    zeros = melnikov_zeros(duffing_cycle, duffing_basis, reference_pert)
    assert len(zeros) == 2
    assert zeros[0].slope * zeros[1].slope < 0
    z = seed_phase(zeros)
    assert z.theta == pytest.approx(0.80157, abs=1e-4)
    iv = melnikov_interval(duffing_cycle, duffing_basis, reference_pert, z.theta, 1e-10)
    assert abs(iv.mid) <= 1e-8


def test_seed_phase_rules():
    with pytest.raises(NoTransversalZero):
        seed_phase([])
    zs = [MelnikovZero(3.0, 2.0), MelnikovZero(1.0, -2.0), MelnikovZero(0.5, 1.0)]
    assert seed_phase(zs).theta == 1.0


def test_scaling_and_t_star_leave_prediction_unchanged(reference_setup, reference_ladder):
    s = reference_setup
    orbit = reference_ladder[1].orbit
    ts = np.linspace(0, s.rebased.period, 16, endpoint=False)
    ref = predict_displacement(s.rebased, s.basis, s.profile, orbit, ts)
    for b in [build_adjoint_basis(s.rebased, scale=c) for c in (0.5, 2.0)]:
        prof = mperp_profile(s.rebased, b, s.pert, QTOL)
        assert np.max(np.abs(predict_displacement(s.rebased, b, prof, orbit, ts) - ref)) <= 1e-9
    for t in s.basis.t_star_candidates:
        b = s.basis.with_t_star(t)
        prof = mperp_profile(s.rebased, b, s.pert, QTOL)
        assert np.max(np.abs(predict_displacement(s.rebased, b, prof, orbit, ts) - ref)) <= 3 * QTOL
