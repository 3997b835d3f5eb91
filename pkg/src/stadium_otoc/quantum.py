"""Thermal OTOC components from operator matrices in the energy eigenbasis.

For A = X and B = P_X the per-state components are

    O1_n = <n| A_t B A_t B |n>,  O2_n = <n| A_t B^2 A_t |n>,  O3_n = <n| B A_t^2 B |n>

and the OTOC density is C_n = <n| M^dag M |n> with M = [A_t, B].  With
Y = A_t B and W = B A_t (both restricted to the kept columns) these are
``sum conj(W) Y``, ``|W e_n|^2``, ``|Y e_n|^2`` and ``|(Y - W) e_n|^2``.  The
per-state arrays do not depend on temperature, so one pass over the time
grid serves any number of thermal weightings.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .series import OtocSeries
from .spectral import EigenBasis, OperatorMatrix

LEAKAGE_LIMIT = 1e-8
WEIGHT_FLOOR = 1e-18


class LeakageWarning(UserWarning):
    pass


@dataclass
class ThermalWeights:
    beta: float
    weights: np.ndarray  # over the first n_keep states, trimmed below WEIGHT_FLOOR
    Z: float
    leakage: float
    m: float = 0.5

    @classmethod
    def build(cls, basis: EigenBasis, beta: float) -> "ThermalWeights":
        if beta < 0:
            raise ValueError("beta must be non-negative")
        E = basis.energies[: basis.n_keep]
        w = np.exp(-beta * (E - E[0]))
        leakage = float(w[-1])
        support = int(np.searchsorted(-w, -WEIGHT_FLOOR * w[0], side="right"))
        w = w[: max(support, 1)]
        return cls(float(beta), w, float(w.sum()), leakage, basis.units.m)

    @classmethod
    def from_kT(cls, basis: EigenBasis, kT: float) -> "ThermalWeights":
        return cls.build(basis, 1.0 / kT)

    @property
    def kT(self) -> float:
        return np.inf if self.beta == 0 else 1.0 / self.beta

    @property
    def vtilde(self) -> float:
        return np.sqrt(self.kT / self.m)

    @property
    def support(self) -> int:
        return self.weights.size

    @property
    def leaky(self) -> bool:
        return self.leakage > LEAKAGE_LIMIT

    def average(self, per_state: np.ndarray) -> np.ndarray:
        """Thermal average over the last axis of per-state data."""
        return per_state[..., : self.support] @ self.weights / self.Z


@dataclass
class HeisenbergOperator:
    matrix: np.ndarray
    t: float
    label: str = ""


def phases(basis: EigenBasis, t: float, n: int | None = None) -> np.ndarray:
    E = basis.energies[: n or basis.n_basis]
    return np.exp(1j * (E[:, None] - E[None, :]) * t / basis.units.hbar)


def heisenberg(A: OperatorMatrix, basis: EigenBasis, t: float) -> HeisenbergOperator:
    """(A_t)_mn = exp(i E_mn t / hbar) A_mn."""
    A.check(basis)
    if t == 0:
        return HeisenbergOperator(A.data.copy(), 0.0, A.label)
    return HeisenbergOperator(phases(basis, t) * A.data, float(t), A.label)


@dataclass
class StateResolved:
    """Per-state components at one time, over the first ``k`` states."""

    t: float
    O1: np.ndarray
    O2: np.ndarray
    O3: np.ndarray
    C: np.ndarray
    identity_residual: float


def _real_left(R: np.ndarray, Z: np.ndarray) -> np.ndarray:
    return R @ np.ascontiguousarray(Z.real) + 1j * (R @ np.ascontiguousarray(Z.imag))


def _real_right(Z: np.ndarray, R: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(Z.real) @ R + 1j * (np.ascontiguousarray(Z.imag) @ R)


def state_components(A: OperatorMatrix, B: OperatorMatrix, basis: EigenBasis, t: float,
                     k: int | None = None) -> StateResolved:
    """Per-state O1, O2, O3 and C for the lowest ``k`` states (default n_keep)."""
    A.check(basis)
    B.check(basis)
    k = basis.n_keep if k is None else k
    Bm = B.data
    if np.isrealobj(A.data):
        # A_t = D A D^* with D = diag(exp(iEt/hbar)); real A keeps the products real-by-complex
        d = np.exp(1j * basis.energies * t / basis.units.hbar)
        Z = d.conj()[:, None] * Bm[:, :k]
        Y = d[:, None] * _real_left(A.data, Z)
        W = _real_right(Bm * d[None, :], A.data[:, :k]) * d.conj()[None, :k]
    else:
        At = heisenberg(A, basis, t).matrix
        Y = At @ Bm[:, :k]
        W = Bm @ At[:, :k]
    O1 = np.einsum("ij,ij->j", W.conj(), Y)
    O2 = np.einsum("ij,ij->j", W.conj(), W).real
    O3 = np.einsum("ij,ij->j", Y.conj(), Y).real
    M = Y - W
    C = np.einsum("ij,ij->j", M.conj(), M).real
    comb = -2 * O1.real + O2 + O3
    scale = np.maximum(np.abs(O2) + np.abs(O3), np.finfo(float).tiny)
    resid = float(np.max(np.abs(comb - C) / scale))
    return StateResolved(float(t), O1, O2, O3, C, resid)


def otoc_components(X: OperatorMatrix, P: OperatorMatrix, basis: EigenBasis,
                    weights: ThermalWeights, t: float):
    """Thermal (O1, O2, O3) at one time; O1 is complex."""
    _warn_leakage(weights)
    s = state_components(X, P, basis, t, k=weights.support)
    return complex(weights.average(s.O1)), float(weights.average(s.O2)), float(weights.average(s.O3))


@dataclass
class QuantumOtoc:
    """Thermal components and OTOC on a time grid for one temperature."""

    t: np.ndarray
    weights: ThermalWeights
    O1: np.ndarray
    O2: np.ndarray
    O3: np.ndarray
    C: np.ndarray
    identity_residual: float
    meta: dict = field(default_factory=dict)

    @property
    def ell(self) -> np.ndarray:
        return self.weights.vtilde * self.t

    def series(self, name: str = "C") -> OtocSeries:
        vals = {"C": self.C, "O1": self.O1.real, "O1_imag": self.O1.imag,
                "O2": self.O2, "O3": self.O3}[name]
        meta = {**self.meta, "quantity": name}
        return OtocSeries(self.t, self.ell, vals, np.zeros(self.t.size), meta)


def _warn_leakage(w: ThermalWeights) -> None:
    if w.leaky:
        warnings.warn(f"thermal weight at n_keep is {w.leakage:.2e} at beta={w.beta:.4g} "
                      f"(limit {LEAKAGE_LIMIT:.0e}); truncation may bias the trace",
                      LeakageWarning, stacklevel=3)


def otoc_multi(X: OperatorMatrix, P: OperatorMatrix, basis: EigenBasis, weights_list,
               t_grid) -> list:
    """Components and C(t) for several temperatures sharing one time grid."""
    t_grid = np.asarray(t_grid, float)
    for w in weights_list:
        _warn_leakage(w)
    k = max(w.support for w in weights_list)
    nt = t_grid.size
    acc = [{q: np.empty(nt, complex if q == "O1" else float) for q in ("O1", "O2", "O3", "C")}
           for _ in weights_list]
    resid = 0.0
    for i, t in enumerate(t_grid):
        s = state_components(X, P, basis, t, k=k)
        resid = max(resid, s.identity_residual)
        for w, a in zip(weights_list, acc):
            for q in a:
                a[q][i] = w.average(getattr(s, q))
    out = []
    for w, a in zip(weights_list, acc):
        meta = {
            "beta": w.beta,
            "kT": w.kT,
            "m": basis.units.m,
            "hbar": basis.units.hbar,
            "n_basis": basis.n_basis,
            "n_keep": basis.n_keep,
            "basis": basis.fingerprint,
            "geometry": basis.geometry_id,
            "leakage": w.leakage,
            "leakage_warning": bool(w.leaky),
        }
        out.append(QuantumOtoc(t_grid, w, a["O1"], a["O2"], a["O3"], a["C"], resid, meta))
    return out


def otoc(X: OperatorMatrix, P: OperatorMatrix, basis: EigenBasis, weights: ThermalWeights,
         t_grid) -> OtocSeries:
    """C(t) = -2 Re O1 + O2 + O3 as a series carrying ell = vtilde t."""
    return otoc_multi(X, P, basis, [weights], t_grid)[0].series("C")
