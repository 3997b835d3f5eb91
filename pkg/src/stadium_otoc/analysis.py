"""Cross-pipeline comparisons and scaling fits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .series import OtocSeries


@dataclass
class XiFit:
    xi: float
    stderr: float
    log_prefactor: float
    ell: float


def fit_xi(series_by_temperature: dict, ell_point: float) -> XiFit:
    """Exponent of value(ell_point) ~ T^xi by log-log least squares.

    Values between grid points are linearly interpolated in ell.
    """
    if len(series_by_temperature) < 4:
        raise ValueError("need at least four temperatures")
    kT = np.array(sorted(series_by_temperature), float)
    vals = np.array([np.interp(ell_point, series_by_temperature[k].ell,
                               np.real(series_by_temperature[k].values)) for k in kT])
    if np.any(vals <= 0):
        raise ValueError("values must be positive for a power-law fit")
    x, y = np.log(kT), np.log(vals)
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    dof = max(x.size - 2, 1)
    se = np.sqrt(res @ res / dof / np.sum((x - x.mean()) ** 2))
    return XiFit(float(coef[0]), float(se), float(coef[1]), float(ell_point))


@dataclass
class Comparison:
    max_relative_deviation: float
    at_ell: float
    ell_window: tuple
    n_points: int


def compare_curves(reference: OtocSeries, other: OtocSeries, window=(0.0, 2.0),
                   ref_scale: float = 1.0, other_scale: float = 1.0) -> Comparison:
    """Max |other/other_scale - ref/ref_scale| / |ref/ref_scale| over an ell window.

    The reference is interpolated onto the grid of ``other``.
    """
    sel = (other.ell >= window[0]) & (other.ell <= window[1])
    if not np.any(sel):
        raise ValueError("no grid points in window")
    ell = other.ell[sel]
    ref = np.interp(ell, reference.ell, np.real(reference.values)) / ref_scale
    oth = np.real(other.values[sel]) / other_scale
    rel = np.abs(oth - ref) / np.abs(ref)
    i = int(np.argmax(rel))
    return Comparison(float(rel[i]), float(ell[i]), tuple(window), int(sel.sum()))
