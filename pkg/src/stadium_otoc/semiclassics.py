"""Semiclassical OTOC predictions, growth fits and the chaos-bound check.

The order-hbar^2 OTOC is the momentum integral

    C(t) = (beta^2 hbar^2 / 64 m^2) * I_3(a, b),
    I_n  = int_0^inf p^n exp(-a p^2 + b p) dp,  a = beta / 2m,  b = 2 lambda_g t / m.

``c_integral`` evaluates it by adaptive quadrature (the reference) and
``c_closed`` by the error-function form

    I_0 = (1/2) sqrt(pi/a) exp(b^2 / 4a) erfc(-b / 2 sqrt(a)),
    I_{n+1} = (b I_n + n I_{n-1} + delta_{n0}) / (2a).

Both work with logarithms so large exponents do not overflow.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .classical import ThermalEnsemble
from .series import OtocSeries

LOG_TAIL = np.log(1e-16)


def _ab(beta, lambda_g, m, t):
    return beta / (2 * m), 2 * lambda_g * t / m


def _prefactor(beta, m, hbar):
    return beta**2 * hbar**2 / (64 * m**2)


def log_moment_quad(n: int, a: float, b: float) -> float:
    """ln of int_0^inf p^n exp(-a p^2 + b p) dp by adaptive quadrature."""
    # peak of n ln p - a p^2 + b p
    ps = (b + np.sqrt(b * b + 8 * a * n)) / (4 * a)

    def g(p):
        return n * np.log(p) - a * p * p + b * p

    gs = g(ps)
    f = lambda p: np.exp(g(p) - gs) if p > 0 else 0.0  # noqa: E731
    # truncate where the integrand is below 1e-16 of its peak (g is concave)
    hi = optimize.brentq(lambda p: g(p) - gs - LOG_TAIL, ps, ps + 40 / np.sqrt(a) + 10)
    lo = 0.0
    if g(1e-300) - gs < LOG_TAIL:
        lo = optimize.brentq(lambda p: g(p) - gs - LOG_TAIL, 1e-300, ps)
    opts = dict(epsabs=0.0, epsrel=1e-13, limit=400)
    left = integrate.quad(f, lo, ps, **opts)[0]
    right = integrate.quad(f, ps, hi, **opts)[0]
    return gs + np.log(left + right)


def log_moment_closed(n: int, a: float, b: float) -> float:
    """ln of the same moment from the error-function recurrence."""
    s = b * b / (4 * a)
    z = b / (2 * np.sqrt(a))
    es = np.exp(-s)
    J = [0.5 * np.sqrt(np.pi / a) * special.erfc(-z)]  # I_0 exp(-s)
    for k in range(n):
        prev = J[k - 1] if k > 0 else 0.0
        J.append((b * J[k] + k * prev + (es if k == 0 else 0.0)) / (2 * a))
    return s + np.log(J[n])


def c_integral_log(beta, lambda_g, m, hbar, t) -> float:
    a, b = _ab(beta, lambda_g, m, t)
    return np.log(_prefactor(beta, m, hbar)) + log_moment_quad(3, a, b)


def c_closed_log(beta, lambda_g, m, hbar, t) -> float:
    a, b = _ab(beta, lambda_g, m, t)
    return np.log(_prefactor(beta, m, hbar)) + log_moment_closed(3, a, b)


def c_integral(beta, lambda_g, m, hbar, t) -> float:
    """Quadrature value of the semiclassical C(t); inf beyond double range."""
    if min(beta, lambda_g, m, hbar) <= 0 or t < 0:
        raise ValueError("parameters must be positive and t >= 0")
    with np.errstate(over="ignore"):
        return float(np.exp(c_integral_log(beta, lambda_g, m, hbar, t)))


def c_closed(beta, lambda_g, m, hbar, t) -> float:
    if min(beta, lambda_g, m, hbar) <= 0 or t < 0:
        raise ValueError("parameters must be positive and t >= 0")
    with np.errstate(over="ignore"):
        return float(np.exp(c_closed_log(beta, lambda_g, m, hbar, t)))


def growth_rate_predicted(ensemble: ThermalEnsemble, lambda_g: float) -> float:
    """Lambda = sqrt(3) lambda_g vtilde (inverse time)."""
    return np.sqrt(3.0) * lambda_g * ensemble.vtilde


def effective_log_slope(ensemble: ThermalEnsemble, lambda_g: float, ell) -> np.ndarray:
    """d ln C / d ell of the momentum integral, to set against sqrt(3) lambda_g.

    d ln I_3 / d b = I_4 / I_3 and d b / d ell = 2 lambda_g / (m vtilde).
    """
    ell = np.atleast_1d(np.asarray(ell, float))
    a = ensemble.beta / (2 * ensemble.m)
    out = []
    for l in ell:
        b = 2 * lambda_g * l / (ensemble.m * ensemble.vtilde)
        r = np.exp(log_moment_closed(4, a, b) - log_moment_closed(3, a, b))
        out.append(r * 2 * lambda_g / (ensemble.m * ensemble.vtilde))
    return np.array(out)


@dataclass
class SemiclassicalPrediction:
    ensemble: ThermalEnsemble
    lambda_g: float
    t: np.ndarray
    c_values: np.ndarray
    c_closed: np.ndarray
    growth_rate: float
    bound: float
    threshold_kT: float

    def series(self) -> OtocSeries:
        meta = {"quantity": "C_semiclassical", **self.ensemble.describe(),
                "lambda_g": self.lambda_g, "growth_rate_predicted": self.growth_rate}
        return OtocSeries(self.t, self.ensemble.vtilde * self.t, self.c_values, None, meta)


def predict(ensemble: ThermalEnsemble, lambda_g: float, t_grid) -> SemiclassicalPrediction:
    t_grid = np.asarray(t_grid, float)
    e = ensemble
    cq = np.array([c_integral(e.beta, lambda_g, e.m, e.hbar, t) for t in t_grid])
    cc = np.array([c_closed(e.beta, lambda_g, e.m, e.hbar, t) for t in t_grid])
    return SemiclassicalPrediction(e, lambda_g, t_grid, cq, cc, growth_rate_predicted(e, lambda_g),
                                   mss_bound(e), mss_threshold(lambda_g, e.m, e.hbar))


# -- fits -----------------------------------------------------------------

class FitError(ValueError):
    pass


@dataclass
class GrowthFit:
    window: tuple
    rate_per_length: float
    rate: float  # inverse time, rate_per_length * vtilde
    alpha: float
    residual: float  # rms of ln C about the line
    slope_stderr: float
    n_points: int


def fit_growth(series: OtocSeries, window=(0.4, 1.5), vtilde: float | None = None) -> GrowthFit:
    """Least squares of ln C against ell over ``window``."""
    sel = (series.ell >= window[0]) & (series.ell <= window[1])
    n = int(sel.sum())
    if n < 8:
        raise FitError(f"need at least 8 points in {window}, got {n}")
    y = np.real(series.values[sel])
    if np.any(y <= 0):
        raise FitError(f"non-positive values in window {window}: {y[y <= 0][:3]}")
    x = series.ell[sel]
    ly = np.log(y)
    A = np.column_stack([x, np.ones(n)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    slope, icpt = coef
    res = ly - A @ coef
    s2 = res @ res / max(n - 2, 1)
    se = np.sqrt(s2 / np.sum((x - x.mean()) ** 2))
    if vtilde is None:
        vtilde = series.ell[-1] / series.t[-1] if series.t[-1] > 0 else np.nan
    return GrowthFit(tuple(window), float(slope), float(slope * vtilde), float(np.exp(icpt)),
                     float(np.sqrt(np.mean(res**2))), float(se), n)


def scaling_alpha(series: OtocSeries, lambda_g: float, window=(0.4, 1.5)) -> float:
    """alpha(T): mean of C exp(-sqrt(3) lambda_g ell) over the window, in log space."""
    sel = (series.ell >= window[0]) & (series.ell <= window[1])
    y = np.real(series.values[sel])
    if sel.sum() == 0 or np.any(y <= 0):
        raise FitError("window empty or non-positive")
    return float(np.exp(np.mean(np.log(y) - np.sqrt(3) * lambda_g * series.ell[sel])))


def well_fit_window(series: OtocSeries, lambda_g: float, window=(0.4, 1.5),
                    tol: float = np.log(1.25)):
    """Largest contiguous stretch around the fit window following alpha exp(sqrt(3) lambda_g ell).

    Returns ``(t_lo, t_hi)``; the stretch grows outward from the grid point
    nearest the window centre while |ln C - ln alpha - sqrt(3) lambda_g ell| <= tol.
    """
    alpha = scaling_alpha(series, lambda_g, window)
    y = np.real(series.values)
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = np.abs(np.log(y) - np.log(alpha) - np.sqrt(3) * lambda_g * series.ell)
    ok = np.isfinite(dev) & (dev <= tol)
    c = int(np.argmin(np.abs(series.ell - 0.5 * (window[0] + window[1]))))
    if not ok[c]:
        return (series.t[c], series.t[c])
    lo = c
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    hi = c
    while hi < ok.size - 1 and ok[hi + 1]:
        hi += 1
    return (float(series.t[lo]), float(series.t[hi]))


@dataclass
class SaturationFit:
    kappa: float
    r2: float
    kT: np.ndarray
    plateaus: np.ndarray
    drifts: np.ndarray
    m: float
    a: float


def plateau(series: OtocSeries, tail: float = 0.2):
    """Mean of the trailing fraction and its relative drift.

    Drift is the change of a straight-line fit across the tail divided by the
    tail mean.
    """
    n = max(int(np.ceil(tail * len(series))), 3)
    y = np.real(series.values[-n:])
    x = series.t[-n:]
    slope = np.polyfit(x, y, 1)[0]
    mean = float(y.mean())
    return mean, float(abs(slope) * (x[-1] - x[0]) / abs(mean))


def saturation_model(series_by_temperature: dict, m: float = 0.5, a: float = 1.0,
                     tail: float = 0.2, max_drift: float | None = 0.05) -> SaturationFit:
    """Plateau of C against k_B T, fitted through the origin as kappa m a^2 k_B T.

    ``series_by_temperature`` maps k_B T to an OtocSeries.  R^2 uses the
    centred total sum of squares.  ``max_drift=None`` skips the plateau check.
    """
    kTs, plats, drifts = [], [], []
    for kT, s in sorted(series_by_temperature.items()):
        mean, drift = plateau(s, tail)
        if max_drift is not None and drift >= max_drift:
            raise FitError(f"no plateau at k_B T={kT}: relative drift {drift:.3f}")
        kTs.append(kT)
        plats.append(mean)
        drifts.append(drift)
    x, y = np.array(kTs, float), np.array(plats)
    if x.size < 2:
        raise FitError("need at least two temperatures")
    c = (x @ y) / (x @ x)
    ss_res = np.sum((y - c * x) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else float(ss_res == 0)
    return SaturationFit(float(c / (m * a * a)), float(r2), x, y, np.array(drifts), m, a)


# -- chaos bound ------------------------------------------------------------

def mss_bound(ensemble: ThermalEnsemble) -> float:
    return 4 * np.pi * ensemble.kT / ensemble.hbar


def mss_threshold(lambda_g: float, m: float, hbar: float) -> float:
    """k_B T above which sqrt(3) lambda_g vtilde <= 4 pi k_B T / hbar."""
    return 3 * hbar**2 * lambda_g**2 / (16 * np.pi**2 * m)


@dataclass
class BoundReport:
    kT: float
    bound: float
    threshold_kT: float
    rate_predicted: float
    rate_fit: float | None
    formula_ok: bool
    fit_ok: bool | None
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("kT", "bound", "threshold_kT", "rate_predicted", "rate_fit", "formula_ok", "fit_ok")}


def mss_bound_check(ensemble: ThermalEnsemble, lambda_g: float,
                    fitted: GrowthFit | None = None) -> BoundReport:
    bound = mss_bound(ensemble)
    rate = growth_rate_predicted(ensemble, lambda_g)
    rfit = None if fitted is None else fitted.rate
    return BoundReport(
        kT=ensemble.kT,
        bound=bound,
        threshold_kT=mss_threshold(lambda_g, ensemble.m, ensemble.hbar),
        rate_predicted=rate,
        rate_fit=rfit,
        formula_ok=bool(rate <= bound * (1 + 1e-12)),
        fit_ok=None if rfit is None else bool(rfit <= bound),
    )
