import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stadium_otoc.classical import ThermalEnsemble
from stadium_otoc.semiclassics import (FitError, c_closed, c_closed_log, c_integral, c_integral_log,
                                       effective_log_slope, fit_growth, growth_rate_predicted, mss_bound, mss_bound_check, mss_threshold,
                                       plateau, predict, saturation_model, scaling_alpha,
                                       well_fit_window)
from stadium_otoc.series import OtocSeries

LAM = 0.425


def random_box(n, seed):
    """Random (beta, m, hbar, lambda_g, t) with vtilde t / a <= 30."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        beta = 2.0 ** -rng.uniform(2, 9)
        m = rng.uniform(0.25, 2.0)
        hbar = rng.uniform(0.5, 2.0)
        lam = rng.uniform(0.1, 1.0)
        ell = rng.uniform(0, 30)
        out.append((beta, m, hbar, lam, ell / np.sqrt(1 / (beta * m))))
    return out


def test_closed_form_matches_quadrature():
    for beta, m, hbar, lam, t in random_box(20, 99):
        # ratio via logs: the values themselves can exceed double range
        d = c_closed_log(beta, lam, m, hbar, t) - c_integral_log(beta, lam, m, hbar, t)
        assert abs(np.expm1(d)) < 1e-10


@given(st.floats(1e-3, 10), st.floats(0.1, 3), st.floats(0.01, 2))
@settings(max_examples=40, deadline=None)
def test_zero_time_is_gaussian_moment(beta, m, lam):
    assert c_integral(beta, lam, m, 1.0, 0.0) == pytest.approx(1 / 32, rel=1e-12)
    assert c_closed(beta, lam, m, 1.0, 0.0) == pytest.approx(1 / 32, rel=1e-12)


@given(st.floats(0.01, 1), st.floats(0.2, 2), st.floats(0, 20))
@settings(max_examples=40, deadline=None)
def test_hbar_squared_scaling(beta, m, t):
    assert c_closed(beta, LAM, m, 2.0, t) == pytest.approx(4 * c_closed(beta, LAM, m, 1.0, t), rel=1e-12)


def test_monotone_in_time():
    t = np.linspace(0, 5, 60)
    v = [c_closed(1 / 32, LAM, 0.5, 1.0, x) for x in t]
    assert np.all(np.diff(v) > 0)


def test_predicted_rate_values():
    e = ThermalEnsemble(beta=1.0, m=1.0, hbar=1.0)  # vtilde = 1
    assert growth_rate_predicted(e, LAM) == pytest.approx(0.7361215932167728, rel=1e-14)
    e4 = ThermalEnsemble(beta=0.25, m=1.0, hbar=1.0)
    assert growth_rate_predicted(e4, LAM) == pytest.approx(2 * growth_rate_predicted(e, LAM), rel=1e-14)
    for kT in (8.0, 64.0):
        en = ThermalEnsemble.from_kT(kT)
        assert growth_rate_predicted(en, LAM) / en.vtilde == pytest.approx(np.sqrt(3) * LAM, rel=1e-14)


def test_effective_slope_is_finite_and_rising():
    s = effective_log_slope(ThermalEnsemble.from_kT(32.0), LAM, [0.0, 1.0, 5.0])
    assert np.all(np.isfinite(s)) and np.all(np.diff(s) > 0)


def test_prediction_series_is_consistent():
    e = ThermalEnsemble.from_kT(32.0)
    t = np.linspace(0, 1, 5)
    p = predict(e, LAM, t)
    np.testing.assert_allclose(p.c_values, p.c_closed, rtol=1e-10)
    s = p.series()
    np.testing.assert_allclose(s.ell, e.vtilde * t)


def synthetic(alpha, rate, ell, noise=None, seed=0):
    v = alpha * np.exp(rate * ell)
    if noise:
        v = v * (1 + noise * np.random.default_rng(seed).standard_normal(ell.size))
    return OtocSeries(ell / 2.0, ell, v)


def test_fit_exact_exponential():
    ell = np.linspace(0, 3, 121)
    f = fit_growth(synthetic(0.3, np.sqrt(3) * LAM, ell), (0.4, 1.5), vtilde=2.0)
    assert f.rate_per_length == pytest.approx(np.sqrt(3) * LAM, rel=1e-10)
    assert f.alpha == pytest.approx(0.3, rel=1e-10)
    assert f.rate == pytest.approx(2 * f.rate_per_length)


def test_fit_with_noise_within_propagated_error():
    ell = np.linspace(0, 3, 301)
    for seed in range(5):
        f = fit_growth(synthetic(1.0, 0.7, ell, noise=0.05, seed=seed), (0.4, 1.5))
        assert abs(f.rate_per_length - 0.7) < 3 * f.slope_stderr


def test_fit_rejects_bad_input():
    ell = np.linspace(0, 3, 20)
    with pytest.raises(FitError):
        fit_growth(synthetic(1.0, 0.7, ell), (0.4, 1.5))  # too few points
    s = OtocSeries(np.linspace(0, 1, 50), np.linspace(0, 2, 50), -np.ones(50))
    with pytest.raises(FitError):
        fit_growth(s, (0.4, 1.5))


def test_well_fit_window_on_pure_exponential_is_whole_grid():
    ell = np.linspace(0, 3, 121)
    s = synthetic(0.3, np.sqrt(3) * LAM, ell)
    assert scaling_alpha(s, LAM) == pytest.approx(0.3, rel=1e-12)
    assert well_fit_window(s, LAM) == (s.t[0], s.t[-1])


def test_saturation_exact_linear():
    kTs = [32.0, 64.0, 128.0, 256.0, 512.0]
    t = np.linspace(0, 10, 100)
    data = {k: OtocSeries(t, t, np.full(100, 0.7 * k)) for k in kTs}
    fit = saturation_model(data, m=0.5, a=1.0)
    assert fit.kappa == pytest.approx(0.7 / 0.5, rel=1e-12)
    assert fit.kappa > 0
    assert fit.r2 == pytest.approx(1.0, abs=1e-14)


def test_saturation_requires_plateau():
    t = np.linspace(0, 10, 100)
    data = {1.0: OtocSeries(t, t, 1 + t), 2.0: OtocSeries(t, t, 2 + 0 * t)}
    with pytest.raises(FitError):
        saturation_model(data)
    assert plateau(OtocSeries(t, t, 3 + 0 * t))[1] < 1e-14


def test_bound_threshold_identity():
    for lam, m, hbar in ((0.425, 0.5, 1.0), (1.3, 2.0, 0.7)):
        kT = mss_threshold(lam, m, hbar)
        assert kT == pytest.approx(3 * hbar**2 * lam**2 / (16 * np.pi**2 * m), rel=1e-15)
        e = ThermalEnsemble(1 / kT, m, hbar)
        assert growth_rate_predicted(e, lam) == pytest.approx(mss_bound(e), rel=1e-12)
    hot = ThermalEnsemble.from_kT(100.0)
    assert mss_bound_check(hot, LAM).formula_ok
