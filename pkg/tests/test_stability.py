import numpy as np
import pytest
from numpy.testing import assert_allclose

from flowfilt import (
    AdmissibilityError,
    LambdaGrid,
    Regime,
    build_stability_report,
    check_fts,
    check_ftcs,
    check_ftss,
    classify_regime,
    contraction_rate,
    ellipsoid_invariance_check,
    error_trajectory,
    homotopy_derivatives,
    linear_error_trajectory,
    lyapunov_derivative,
    preset,
)
from flowfilt.flows import k_schedule

GRID = LambdaGrid.uniform(800)


def test_exact_flow_error_decays_like_closed_form(canonical):
    prior, meas = canonical
    params = preset("exact", prior, meas)
    x0 = np.array([0.8])
    traj = error_trajectory(x0, np.zeros(1), params, GRID, prior, meas)
    # dxtilde = -xtilde / (2 (1 + lam)) integrates to (1 + lam)^{-1/2}.
    assert_allclose(traj.errors[:, 0], 0.8 / np.sqrt(1.0 + GRID.nodes),
                    atol=1e-9)
    # V_M is exactly conserved along the zero-diffusion flow.
    assert np.abs(traj.v_m - traj.v_m[0]).max() < 1e-10
    assert_allclose(traj.v_s, traj.errors[:, 0] ** 2, atol=1e-12)


def test_noise_cancels_in_the_error_dynamics(canonical):
    # The trajectory is deterministic even for a stochastic flow: only
    # the drift difference enters.
    prior, meas = canonical
    params = preset("fixed_q", prior, meas)
    t1 = error_trajectory(np.array([0.5]), np.zeros(1), params, GRID, prior, meas)
    t2 = error_trajectory(np.array([0.5]), np.zeros(1), params, GRID, prior, meas)
    assert np.array_equal(t1.errors, t2.errors)
    assert np.all(np.diff(t1.v_m) <= 1e-12)


def test_lyapunov_derivative_formula(make_model):
    rng = np.random.default_rng(50)
    prior, meas = make_model(rng, 3, 2)
    derivs = homotopy_derivatives(np.zeros(3), 0.4, prior, meas)
    x = rng.standard_normal(3)
    c = rng.standard_normal((3, 3))
    q = c @ c.T
    got = lyapunov_derivative(x, 0.4, q, derivs)
    v = derivs.M @ x
    assert_allclose(got, -v @ q @ v, atol=1e-12)
    assert got <= 0.0
    assert lyapunov_derivative(x, 0.4, np.zeros((3, 3)), derivs) == 0.0


def test_check_fts_verdicts(canonical):
    prior, meas = canonical
    s = prior.precision
    params = preset("fixed_q", prior, meas)
    inside = error_trajectory(np.array([np.sqrt(0.999)]), np.zeros(1), params,
                              GRID, prior, meas)
    assert check_fts(inside, 1.0, 2.0, s).verdict

    outside = error_trajectory(np.array([2.0]), np.zeros(1), params, GRID,
                               prior, meas)
    # Premise fails, so the definition holds vacuously.
    assert check_fts(outside, 1.0, 2.0, s).verdict

    with pytest.raises(ValueError, match="alpha"):
        check_fts(inside, 2.0, 1.0, s)
    with pytest.raises(ValueError, match="alpha"):
        check_fts(inside, -1.0, 1.0, s)


def test_check_fts_flags_unstable_system():
    grid = LambdaGrid.uniform(600)
    s = np.eye(1)
    traj = linear_error_trajectory(np.array([np.sqrt(0.98)]),
                                   lambda lam: np.eye(1), grid, s)
    # xtilde(1) = xtilde(0) e, so V_S(1) = 0.98 e^2 > 2.
    assert not check_fts(traj, 1.0, 2.0, s).verdict
    assert_allclose(traj.errors[-1, 0], np.sqrt(0.98) * np.e, rtol=1e-10)


def test_check_ftcs_verdicts(canonical):
    prior, meas = canonical
    s = prior.precision
    params = preset("constant_q", prior, meas, Q0=np.eye(1))
    traj = error_trajectory(np.array([np.sqrt(0.999)]), np.zeros(1), params,
                            GRID, prior, meas)

    res = check_ftcs(traj, alpha=1.0, beta=0.6, gamma=2.0, s_weight=s)
    assert res.verdict
    assert res.lambda1 is not None and 0.0 < res.lambda1 < 1.0
    at_entry = np.searchsorted(GRID.nodes, res.lambda1)
    assert traj.v_s[at_entry] < 0.6

    # The canonical contraction floor sits near 0.11, so 0.02 is
    # unreachable and the tighter verdict must be false.
    assert not check_ftcs(traj, alpha=1.0, beta=0.02, gamma=2.0,
                          s_weight=s).verdict

    zero = error_trajectory(np.zeros(1), np.zeros(1), params, GRID, prior, meas)
    res0 = check_ftcs(zero, alpha=1.0, beta=0.6, gamma=2.0, s_weight=s)
    assert res0.verdict and res0.lambda1 == GRID.nodes[1]

    with pytest.raises(ValueError, match="beta"):
        check_ftcs(traj, alpha=1.0, beta=1.5, gamma=2.0, s_weight=s)
    with pytest.raises(ValueError, match="beta"):
        check_ftcs(traj, alpha=1.0, beta=0.6, gamma=0.8, s_weight=s)


def test_check_ftss_stable_flow(canonical):
    prior, meas = canonical
    params = preset("fixed_q", prior, meas)
    res = check_ftss(params, prior, meas, GRID, alpha=1.0, beta=4.0,
                     epsilon=0.25, n_mc=2000, seed=0)
    assert res.verdict
    # Initial energies are chi-square with one degree of freedom and the
    # S-norm never grows, so the stay-below probability is about 0.954.
    assert 0.93 <= res.empirical_prob <= 0.98
    assert res.threshold < res.empirical_prob

    again = check_ftss(params, prior, meas, GRID, alpha=1.0, beta=4.0,
                       epsilon=0.25, n_mc=2000, seed=0)
    assert again.empirical_prob == res.empirical_prob


def test_check_ftss_unstable_system(canonical):
    prior, meas = canonical
    res = check_ftss(None, prior, meas, GRID, alpha=1.0, beta=4.0,
                     epsilon=0.25, n_mc=2000, seed=0,
                     system_a_fn=lambda lam: np.eye(1))
    assert not res.verdict
    # P(chi2_1 <= 4 / e^2) is about 0.54, far below the 0.737 threshold.
    assert res.empirical_prob < 0.6


def test_check_ftss_parameter_validation(canonical):
    prior, meas = canonical
    params = preset("fixed_q", prior, meas)
    with pytest.raises(ValueError, match="epsilon"):
        check_ftss(params, prior, meas, GRID, alpha=1.0, beta=4.0,
                   epsilon=0.1, n_mc=2000, seed=0)
    with pytest.raises(ValueError, match="n_mc"):
        check_ftss(params, prior, meas, GRID, alpha=1.0, beta=4.0,
                   epsilon=0.25, n_mc=50, seed=0)
    with pytest.raises(ValueError, match="params"):
        check_ftss(None, prior, meas, GRID, alpha=1.0, beta=4.0,
                   epsilon=0.25, n_mc=2000, seed=0)


def test_contraction_rate_by_regime(canonical):
    prior, meas = canonical
    assert contraction_rate(preset("exact", prior, meas), prior, meas, GRID) == 0.0
    # Q0 = I and S = I give sigma = 1.
    assert_allclose(contraction_rate(preset("constant_q", prior, meas,
                                            Q0=np.eye(1)), prior, meas, GRID),
                    1.0, atol=1e-12)
    rate = contraction_rate(preset("fixed_q", prior, meas), prior, meas, GRID)
    # Q(lam) = (1 + lam)^{-2} stays positive; the floor is at lam = 1.
    assert_allclose(rate, 0.25, atol=1e-12)


def test_contraction_rate_vanishes_for_rank_deficient_diffusion(make_model):
    rng = np.random.default_rng(51)
    prior, meas = make_model(rng, 2, 1)
    # One measurement cannot excite both directions: Q has rank 1.
    rate = contraction_rate(preset("fixed_q", prior, meas), prior, meas, GRID)
    assert rate == 0.0


def test_classify_regime(canonical, make_model):
    prior, meas = canonical
    assert classify_regime(preset("exact", prior, meas), prior, meas,
                           GRID) is Regime.CONSTANT_V
    assert classify_regime(preset("constant_q", prior, meas, Q0=np.eye(1)),
                           prior, meas, GRID) is Regime.EXPONENTIAL_DECAY
    rng = np.random.default_rng(52)
    prior2, meas2 = make_model(rng, 2, 1)
    assert classify_regime(preset("fixed_q", prior2, meas2), prior2, meas2,
                           GRID) is Regime.NON_INCREASING


def test_classify_regime_rejects_indefinite_diffusion(canonical):
    prior, meas = canonical
    # Bypass preset validation to hand the classifier a broken schedule.
    bad = k_schedule(lambda lam: np.array([[-1.0]]))
    with pytest.raises(AdmissibilityError):
        classify_regime(bad, prior, meas, GRID)


def test_ellipsoid_invariance(canonical, make_model):
    prior, meas = canonical
    dev = ellipsoid_invariance_check(prior, meas, LambdaGrid.uniform(2000),
                                     8, seed=0)
    assert dev < 1e-10
    rng = np.random.default_rng(53)
    prior2, meas2 = make_model(rng, 3, 2)
    dev = ellipsoid_invariance_check(prior2, meas2, LambdaGrid.uniform(2000),
                                     8, seed=0)
    assert dev < 1e-9
    assert ellipsoid_invariance_check(prior, meas, GRID, 0, seed=0) == 0.0
    with pytest.raises(ValueError):
        ellipsoid_invariance_check(prior, meas, GRID, -1, seed=0)


def test_build_stability_report(canonical):
    prior, meas = canonical
    params = preset("constant_q", prior, meas, Q0=np.eye(1))
    report = build_stability_report(params, prior, meas, GRID, n_mc=500, seed=1)
    assert report.regime is Regime.EXPONENTIAL_DECAY
    assert_allclose(report.sigma, 1.0, atol=1e-12)
    assert report.fts.verdict
    assert report.ftcs.verdict and report.ftcs.lambda1 is not None
    assert report.ftss.verdict
    payload = report.to_dict()
    assert payload["regime"] == "ExponentialDecay"
    assert set(payload) == {"fts", "ftcs", "ftss", "sigma", "regime"}


def test_error_trajectory_rejects_wrong_shapes(canonical):
    prior, meas = canonical
    params = preset("exact", prior, meas)
    with pytest.raises(ValueError, match="shape"):
        error_trajectory(np.zeros(2), np.zeros(1), params, GRID, prior, meas)
