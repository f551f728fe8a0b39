import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from oracles import logistic, mc_integral
from xsincidence import assay, simulate as sim
from xsincidence.assay import (
    CalibrationRecord,
    RitaCharacteristics,
    TestRecentFunction,
    days,
    double_cov_integral,
    fit_phi,
    fit_phi_arrays,
    integrated_phi,
    mdri,
    phi_cov,
    phi_eval,
    pt_frr_mc,
    pt_mdri,
    residual_integral,
)
from xsincidence.errors import DomainError, EstimationError
from xsincidence.quadrature import adaptive_simpson


def curve(coef, cov=None, frr=0.0, cutoff=2.0):
    coef = np.asarray(coef, dtype=float)
    k = coef.size
    return TestRecentFunction(coef, np.zeros((k, k)) if cov is None else cov, frr, cutoff)


@pytest.fixture(scope="module")
def steep_fit():
    """Fit to calibration data from a steep curve with MDRI 98 days."""
    truth = sim.true_assay(98.0, slope=-8.0)
    d, r = sim.simulate_calibration_arrays(truth, 100, sim.default_visit_grid(), rng_seed=11)
    return truth, fit_phi_arrays(d, r, degree=2), (d, r)


@pytest.fixture(scope="module")
def scenario_fit():
    truth = sim.true_assay()
    d, r = sim.simulate_calibration_arrays(truth, 100, sim.default_visit_grid(), rng_seed=3)
    return truth, fit_phi_arrays(d, r, degree=2, frr_tail=0.014)


# ---------------------------------------------------------------- phi_eval


def test_zero_coefficients_give_one_half():
    for degree in range(4):
        assert phi_eval(curve(np.zeros(degree + 1)), 0.5) == 0.5


def test_tail_value_at_and_beyond_cutoff():
    f = curve([1.0, -2.0, 0.3], frr=0.014)
    assert phi_eval(f, 2.0) == 0.014
    np.testing.assert_array_equal(phi_eval(f, np.array([2.0, 2.5, 40.0])), 0.014)


def test_negative_duration_rejected():
    with pytest.raises(DomainError):
        phi_eval(curve([0.0]), -1e-9)


def test_duration_floor_clamps_the_log():
    f = curve([0.2, 1.0])
    assert phi_eval(f, 0.0) == phi_eval(f, f.duration_floor)
    assert phi_eval(f, 0.0) == pytest.approx(logistic(0.2 + np.log(f.duration_floor)))


@settings(max_examples=60, deadline=None)
@given(coef=st.lists(st.floats(-30, 30), min_size=1, max_size=4),
       u=st.floats(0, 50), tail=st.floats(0, 1))
def test_phi_is_a_probability_with_exact_tail(coef, u, tail):
    f = curve(coef, frr=tail)
    v = phi_eval(f, u)
    assert 0.0 <= v <= 1.0
    if u >= f.cutoff:
        assert v == tail


def test_invalid_curves_rejected():
    with pytest.raises(DomainError):
        TestRecentFunction(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), 0.0)
    with pytest.raises(DomainError):
        TestRecentFunction(np.zeros(1), -np.ones((1, 1)), 0.0)
    with pytest.raises(DomainError):
        curve([0.0], frr=1.5)
    with pytest.raises(DomainError):
        TestRecentFunction(np.zeros(1), np.zeros((1, 1)), 0.0, cutoff=0.0)


def test_model_document_round_trip(scenario_fit):
    _, f = scenario_fit
    doc = f.to_dict()
    assert set(doc) == {"degree", "coefficients", "covariance", "frr_tail", "cutoff", "duration_floor"}
    g = TestRecentFunction.from_dict(doc)
    np.testing.assert_array_equal(g.coefficients, f.coefficients)
    np.testing.assert_array_equal(g.coefficient_covariance, f.coefficient_covariance)
    assert (g.frr_tail, g.cutoff, g.duration_floor) == (f.frr_tail, f.cutoff, f.duration_floor)
    with pytest.raises(DomainError):
        TestRecentFunction.from_dict(dict(doc, degree=3))


# -------------------------------------------------------------- integrals


def test_mdri_of_constant_curves():
    assert mdri(TestRecentFunction.constant(1.0)) == pytest.approx(2.0, abs=1e-6)
    assert mdri(TestRecentFunction.constant(0.5)) == pytest.approx(1.0, abs=1e-12)


def test_residual_integral_of_constant_curve():
    half = TestRecentFunction.constant(0.5)
    assert residual_integral(half, 0.0) == 0.0
    assert residual_integral(half, 1.0) == pytest.approx(0.5, abs=1e-12)


def test_residual_integral_window_checked():
    f = TestRecentFunction.constant(0.5)
    with pytest.raises(DomainError):
        residual_integral(f, -0.1)
    with pytest.raises(DomainError):
        residual_integral(f, 2.1)


def test_steep_fit_mdri_and_residual_against_monte_carlo(steep_fit):
    _, f, _ = steep_fit
    rng = np.random.default_rng(2024)
    target = days(98.0)
    assert abs(mdri(f) - target) < 0.03

    def mc(func, hi, n=10_000_000, chunk=1_000_000):
        vals = [mc_integral(func, 0.0, hi, chunk, rng)[0] for _ in range(n // chunk)]
        return float(np.mean(vals))

    assert mdri(f) == pytest.approx(mc(lambda u: phi_eval(f, u), 2.0), abs=1e-3)
    assert residual_integral(f, 1.0) == pytest.approx(mc(lambda u: 1 - phi_eval(f, u), 1.0), abs=1e-3)


def test_integrals_against_adaptive_simpson(scenario_fit):
    _, f = scenario_fit
    for t in (0.001, 0.1, 0.7, 2.0):
        # integrate on log scale below t, constant piece below the floor
        eps = f.duration_floor
        head = min(t, eps) * phi_eval(f, eps)
        body = 0.0
        if t > eps:
            body = adaptive_simpson(lambda s: phi_eval(f, np.exp(s)) * np.exp(s), np.log(eps), np.log(t),
                                    tol=1e-13)
        assert integrated_phi(f, t) == pytest.approx(head + body, abs=1e-10)


def test_quadrature_refinement_is_stable(scenario_fit):
    _, f = scenario_fit
    for t in (0.05, 0.5, 1.3, 2.0):
        assert abs(residual_integral(f, t) - residual_integral(f, t, panels=32)) < 1e-8
    assert abs(mdri(f) - mdri(f, panels=32)) < 1e-8


@settings(max_examples=40, deadline=None)
@given(coef=st.lists(st.floats(-6, 6), min_size=1, max_size=3),
       t1=st.floats(0, 2), dt=st.floats(0, 2))
def test_residual_integral_monotone_and_lipschitz(coef, t1, dt):
    f = curve(coef)
    t2 = min(t1 + dt, 2.0)
    r1, r2 = residual_integral(f, t1), residual_integral(f, t2)
    assert 0.0 <= r1 <= t1 + 1e-12
    assert -1e-12 <= r2 - r1 <= (t2 - t1) + 1e-12
    assert residual_integral(f, 2.0) + mdri(f) == pytest.approx(2.0, abs=1e-10)


# ------------------------------------------------------------- covariance


def test_zero_coefficient_covariance_gives_zero():
    f = curve([0.3, -1.0, 0.1])
    assert phi_cov(f, 0.4, 1.2) == 0.0
    assert double_cov_integral(f, 0.5, 1.5) == 0.0


def test_phi_cov_symmetric_and_nonnegative_on_the_diagonal(scenario_fit):
    _, f = scenario_fit
    rng = np.random.default_rng(5)
    u, v = rng.uniform(0, 2, 100), rng.uniform(0, 2, 100)
    np.testing.assert_allclose(phi_cov(f, u, v), phi_cov(f, v, u), rtol=0, atol=1e-14)
    assert np.all(phi_cov(f, u, u) >= 0)
    with pytest.raises(DomainError):
        phi_cov(f, 2.5, 0.1)


def test_double_cov_integral_edges(scenario_fit):
    _, f = scenario_fit
    assert double_cov_integral(f, 1.3, 0.0) == 0.0
    assert double_cov_integral(f, 0.7, 0.7) >= 0.0
    assert double_cov_integral(f, 0.4, 1.6) == pytest.approx(double_cov_integral(f, 1.6, 0.4), rel=1e-14)


def test_double_cov_integral_against_monte_carlo_pairs(scenario_fit):
    _, f = scenario_fit
    rng = np.random.default_rng(8)
    n = 1_000_000
    vals = np.concatenate([phi_cov(f, rng.uniform(0, 1, n // 10), rng.uniform(0, 1, n // 10))
                           for _ in range(10)])
    mc = float(vals.mean())
    se = float(vals.std(ddof=1)) / np.sqrt(n)
    got = double_cov_integral(f, 1.0, 1.0)
    assert abs(got - mc) < max(1e-3 * abs(got), 4 * se)


def test_double_cov_integral_against_iterated_simpson(scenario_fit):
    _, f = scenario_fit
    # rho(u, v) is a bilinear form, so its double integral factorises;
    # integrate each gradient component separately with the scalar rule
    k = f.coefficients.size
    eps = f.duration_floor

    def grad_integral(t):
        out = np.empty(k)
        for j in range(k):
            body = adaptive_simpson(
                lambda s: assay.phi_gradient(f, np.exp(s))[j] * np.exp(s), np.log(eps), np.log(t), tol=1e-13)
            out[j] = body + eps * assay.phi_gradient(f, eps)[j]
        return out

    gi, gj = grad_integral(0.8), grad_integral(1.9)
    want = gi @ f.coefficient_covariance @ gj
    assert double_cov_integral(f, 0.8, 1.9) == pytest.approx(want, rel=1e-8)


def test_phi_cov_matches_refit_resample_variance():
    truth = sim.true_assay()
    grid = sim.default_visit_grid()
    fits = []
    for rep in range(2000):
        d, r = sim.simulate_calibration_arrays(truth, 100, grid, rng_seed=77, replicate=rep)
        fits.append(fit_phi_arrays(d, r, degree=2))
    values = np.array([phi_eval(f, 0.5) for f in fits])
    empirical = values.var(ddof=1)
    analytic = np.mean([phi_cov(f, 0.5, 0.5) for f in fits[:200]])
    assert analytic == pytest.approx(empirical, rel=0.15)


# -------------------------------------------------------------------- fit


def test_fit_matches_statsmodels(steep_fit):
    _, f, (d, r) = steep_fit
    keep = d < 2.0
    X = np.vander(np.log(d[keep]), 3, increasing=True)
    ref = sm.Logit(r[keep].astype(float), X).fit(disp=0, method="newton", tol=1e-12, maxiter=200)
    np.testing.assert_allclose(f.coefficients, ref.params, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(f.coefficient_covariance, ref.cov_params(), rtol=1e-5)
    u = np.array([0.05, 0.1, 0.3, 1.0, 1.9])
    np.testing.assert_allclose(phi_eval(f, u), ref.predict(np.vander(np.log(u), 3, increasing=True)),
                               atol=1e-6)
    assert phi_eval(f, 0.1) > 0.9
    assert phi_eval(f, 1.0) < 0.1


def test_fit_on_fair_coins_finds_no_signal():
    rng = np.random.default_rng(99)
    d = rng.uniform(0.01, 2.0, 5000)
    r = rng.random(5000) < 0.5
    f = fit_phi_arrays(d, r, degree=2)
    se = np.sqrt(np.diag(f.coefficient_covariance))
    assert np.all(np.abs(f.coefficients) < 3 * se)
    ref = sm.Logit(r.astype(float), np.vander(np.log(d), 3, increasing=True)).fit(disp=0)
    np.testing.assert_allclose(f.coefficients, ref.params, rtol=1e-6, atol=1e-8)


def test_intercept_only_fit_is_the_sample_proportion():
    rng = np.random.default_rng(4)
    d = rng.uniform(0.01, 3.0, 800)
    r = rng.random(800) < 0.3
    f = fit_phi_arrays(d, r, degree=0)
    share = r[d < 2.0].mean()
    np.testing.assert_allclose(phi_eval(f, np.array([0.01, 0.5, 1.99])), share, atol=1e-8)


def test_fit_recovers_scenario_mdri(scenario_fit):
    truth, f = scenario_fit
    assert abs(mdri(f) - mdri(truth)) < days(10)
    assert abs(mdri(f) - days(98)) < days(10)
    assert f.frr_tail == 0.014


def test_fit_errors():
    with pytest.raises(EstimationError):
        fit_phi_arrays(np.linspace(0.1, 1.5, 50), np.ones(50, dtype=bool))
    with pytest.raises(EstimationError):
        fit_phi_arrays(np.array([0.1, 0.2, 0.3]), np.array([True, False, True]), degree=2)
    # recent exactly when duration < 0.25: perfectly separated
    d = np.linspace(0.01, 1.99, 400)
    with pytest.raises(EstimationError) as info:
        fit_phi_arrays(d, d < 0.25, degree=2)
    assert info.value.details
    with pytest.raises(DomainError):
        fit_phi_arrays(np.array([0.0, 0.5, 1.0, 1.5]), np.array([1, 0, 1, 0], dtype=bool), degree=0)


def test_fit_ignores_records_beyond_cutoff():
    rng = np.random.default_rng(6)
    d = rng.uniform(0.01, 2.0, 600)
    r = rng.random(600) < logistic(-1 - np.log(d))
    extra_d = np.full(300, 3.0)
    extra_r = np.ones(300, dtype=bool)
    a = fit_phi_arrays(d, r)
    b = fit_phi_arrays(np.concatenate([d, extra_d]), np.concatenate([r, extra_r]))
    np.testing.assert_array_equal(a.coefficients, b.coefficients)


def test_record_form_matches_array_form():
    recs = [CalibrationRecord(0.1 * (i % 19) + 0.05, bool(i % 3 == 0 or i % 19 < 3)) for i in range(190)]
    a = fit_phi(recs, degree=1)
    b = fit_phi_arrays([x.duration for x in recs], [x.recent for x in recs], degree=1)
    np.testing.assert_array_equal(a.coefficients, b.coefficients)
    with pytest.raises(DomainError):
        CalibrationRecord(0.0, True)


def test_characteristics_from_fit(scenario_fit):
    _, f = scenario_fit
    chars = RitaCharacteristics.from_fit(f, frr_variance=1e-5)
    assert chars.mdri == mdri(f)
    assert chars.mdri_variance == pytest.approx(double_cov_integral(f, 2.0, 2.0))
    assert chars.frr == 0.014
    assert RitaCharacteristics.from_dict(chars.to_dict()) == chars
    with pytest.raises(DomainError):
        RitaCharacteristics(2.5, 0.0, 0.01, 0.0, 2.0)
    with pytest.raises(DomainError):
        RitaCharacteristics(0.2, -1.0, 0.01, 0.0, 2.0)


# ------------------------------------------------------ PT-RITA quantities


def test_pt_mdri_examples(scenario_fit):
    _, f = scenario_fit
    assert pt_mdri(f, [(False, None)] * 5) == mdri(f)
    assert pt_mdri(f, [(True, 2.0)] * 4) == pytest.approx(2.0, abs=1e-8)
    half = TestRecentFunction.constant(0.5)
    tests = [(True, 1.0)] * 5 + [(False, None)] * 5
    assert pt_mdri(half, tests) == pytest.approx(1.25, abs=1e-12)


def test_pt_mdri_array_input_and_errors(scenario_fit):
    _, f = scenario_fit
    q = np.array([True, False, True])
    t = np.array([0.5, np.nan, 3.0])
    want = mdri(f) + residual_integral(f, 0.5) / 3
    assert pt_mdri(f, (q, t)) == pytest.approx(want, rel=1e-14)
    with pytest.raises(DomainError):
        pt_mdri(f, [(True, None)])
    with pytest.raises(DomainError):
        pt_mdri(f, (q, t), tau=2.5)


@settings(max_examples=30, deadline=None)
@given(coef=st.lists(st.floats(-5, 5), min_size=1, max_size=3),
       rows=st.lists(st.tuples(st.booleans(), st.floats(0, 4)), min_size=1, max_size=20))
def test_pt_mdri_never_below_mdri(coef, rows):
    f = curve(coef)
    tests = [(q, t if q else None) for q, t in rows]
    assert pt_mdri(f, tests) >= mdri(f) - 1e-15


def _beyond_cutoff(rng, n):
    return 2.0 + rng.exponential(3.0, n)


def test_pt_frr_without_prior_tests_is_the_assay_frr():
    f = curve([0.0], frr=0.05)

    def no_tests(u, rng):
        n = u.size
        return np.zeros(n, dtype=bool), np.full(n, np.nan), np.zeros(n, dtype=bool)

    est, se = pt_frr_mc(f, _beyond_cutoff, no_tests, 100_000, 1)
    assert abs(est - 0.05) < 3 * se


def test_pt_frr_is_zero_without_false_recents():
    f = curve([0.0], frr=0.0)

    def tests(u, rng):
        q = rng.random(u.size) < 0.5
        t = np.where(q, rng.uniform(0, 6, u.size), np.nan)
        return q, t, q & (t <= u)

    assert pt_frr_mc(f, _beyond_cutoff, tests, 5000, 2) == (0.0, 0.0)


def test_pt_frr_argument_checks():
    f = curve([0.0], frr=0.05)
    with pytest.raises(DomainError):
        pt_frr_mc(f, _beyond_cutoff, None, 999, 0)
    with pytest.raises(DomainError):
        pt_frr_mc(f, lambda rng, n: np.full(n, 1.0), None, 1000, 0)
