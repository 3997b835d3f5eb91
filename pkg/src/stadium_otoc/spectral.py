"""Dirichlet eigenpairs on a square grid and operator matrices in the eigenbasis.

The Laplacian is discretized on the points ``(i h, j h)`` that lie strictly
inside the billiard.  Each 1D second difference uses a ghost-point closure:
when the neighbour along an axis is outside, the boundary crossing at distance
``theta * h`` is found by ray casting and the missing value is replaced by the
linear extrapolation through the zero on the wall.  This keeps the matrix
symmetric (only the diagonal changes).  The default fourth-order operator is

    L = -(Dxx + Dyy) + (h^2 / 12) (Dxx^2 + Dyy^2)

which cancels the leading truncation error of the 5-point stencil.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Billiard, UnitSystem

BASIS_FORMAT = "stadium-otoc-basis/1"
THETA_MIN = 1e-3


class EigensolveError(RuntimeError):
    pass


class FingerprintMismatch(ValueError):
    pass


@dataclass
class DiscreteDomain:
    geometry: Billiard
    h: float
    order: int = 4
    ghost: bool = True
    index: np.ndarray = field(init=False, repr=False)  # grid (i, j) -> unknown, -1 outside
    x: np.ndarray = field(init=False, repr=False)
    y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.order not in (2, 4):
            raise ValueError("order must be 2 or 4")
        if not self.h > 0:
            raise ValueError("h must be positive")
        xmin, xmax, ymin, ymax = self.geometry.bbox
        i = np.arange(int(np.floor(xmin / self.h)), int(np.ceil(xmax / self.h)) + 1)
        j = np.arange(int(np.floor(ymin / self.h)), int(np.ceil(ymax / self.h)) + 1)
        self._i0, self._j0 = i[0], j[0]
        X, Y = np.meshgrid(i * self.h, j * self.h, indexing="ij")
        inside = self.geometry.contains(X, Y)
        # pad so neighbour lookups never wrap
        self._inside = np.pad(inside, 1)
        idx = -np.ones(self._inside.shape, dtype=np.int64)
        idx[self._inside] = np.arange(inside.sum())
        self.index = idx
        self.x = X[inside]
        self.y = Y[inside]

    @property
    def n(self) -> int:
        return self.x.size

    def describe(self) -> str:
        kind = "13-point 4th-order" if self.order == 4 else "5-point"
        return f"{kind} {'ghost-point' if self.ghost else 'staircase'} Dirichlet, h={self.h!r}"

    def second_difference(self, axis: int) -> sp.csr_matrix:
        I, J = np.nonzero(self._inside)
        me = self.index[I, J]
        rows, cols, vals = [me], [me], [np.full(me.size, -2.0)]
        for s in (-1, 1):
            In, Jn = (I + s, J) if axis == 0 else (I, J + s)
            ok = self._inside[In, Jn]
            rows.append(me[ok])
            cols.append(self.index[In[ok], Jn[ok]])
            vals.append(np.ones(ok.sum()))
            if self.ghost and np.any(~ok):
                miss = ~ok
                pts = np.column_stack([self.x[me[miss]], self.y[me[miss]]])
                d = np.zeros_like(pts)
                d[:, axis] = s
                dist = self.geometry.flight(pts, d).tau
                th = np.clip(dist / self.h, THETA_MIN, 1.0)
                rows.append(me[miss])
                cols.append(me[miss])
                vals.append(-(1.0 - th) / th)
        n = self.n
        D = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
        return D / self.h**2

    def laplacian(self) -> sp.csc_matrix:
        """Positive operator approximating -Laplacian with Dirichlet walls."""
        Dx = self.second_difference(0)
        Dy = self.second_difference(1)
        L = -(Dx + Dy)
        if self.order == 4:
            L = L + (self.h**2 / 12.0) * (Dx @ Dx + Dy @ Dy)
        L = 0.5 * (L + L.T)
        return L.tocsc()


def weyl_count(E, area: float, perimeter: float, units: UnitSystem = UnitSystem()):
    """Two-term Weyl estimate of the number of Dirichlet levels below E."""
    k2 = 2 * units.m * np.asarray(E, float) / units.hbar**2
    return area / (4 * np.pi) * k2 - perimeter / (4 * np.pi) * np.sqrt(k2)


def weyl_energy(n, area: float, perimeter: float, units: UnitSystem = UnitSystem()):
    """Inverse of weyl_count."""
    # A k^2 - P k - 4 pi n = 0
    k = (perimeter + np.sqrt(perimeter**2 + 16 * np.pi * area * np.asarray(n, float))) / (2 * area)
    return units.hbar**2 * k * k / (2 * units.m)


@dataclass
class EigenBasis:
    energies: np.ndarray
    states: np.ndarray | None  # (n_grid, n_basis), Euclidean-orthonormal columns
    h: float
    geometry_id: str
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    units: UnitSystem = UnitSystem()
    n_keep: int | None = None
    scheme: str = ""
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.energies = np.asarray(self.energies, float)
        if self.n_keep is None:
            self.n_keep = self.n_basis
        if not 0 < self.n_keep <= self.n_basis:
            raise ValueError("need 0 < n_keep <= n_basis")

    @property
    def n_basis(self) -> int:
        return self.energies.size

    @property
    def fingerprint(self) -> str:
        hsh = hashlib.sha256()
        hsh.update(f"{self.geometry_id}|{self.h!r}|{self.scheme}|{self.units}".encode())
        hsh.update(np.ascontiguousarray(self.energies).tobytes())
        return hsh.hexdigest()[:16]

    def truncated(self, n_basis: int, n_keep: int | None = None) -> "EigenBasis":
        """The lowest ``n_basis`` states of this basis."""
        if n_basis > self.n_basis:
            raise ValueError("cannot extend a basis by truncation")
        st = None if self.states is None else self.states[:, :n_basis]
        nk = n_keep if n_keep is not None else min(self.n_keep, n_basis)
        return EigenBasis(self.energies[:n_basis], st, self.h, self.geometry_id, self.x, self.y,
                          self.units, nk, self.scheme, dict(self.diagnostics))

    def save(self, path, with_states: bool = True) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = dict(
            format=np.array(BASIS_FORMAT),
            energies=self.energies,
            h=np.array(self.h),
            geometry_id=np.array(self.geometry_id),
            scheme=np.array(self.scheme),
            m=np.array(self.units.m),
            hbar=np.array(self.units.hbar),
            n_keep=np.array(self.n_keep),
        )
        if with_states and self.states is not None:
            payload.update(states=self.states, x=self.x, y=self.y)
        with open(path, "wb") as fh:
            np.savez(fh, **payload)
        return path

    @classmethod
    def load(cls, path, expect_geometry: str | None = None, expect_h: float | None = None):
        with np.load(path, allow_pickle=False) as z:
            if str(z["format"]) != BASIS_FORMAT:
                raise FingerprintMismatch(f"{path}: unknown basis format {z['format']}")
            gid = str(z["geometry_id"])
            h = float(z["h"])
            if expect_geometry is not None and gid != expect_geometry:
                raise FingerprintMismatch(f"{path}: geometry {gid} != {expect_geometry}")
            if expect_h is not None and h != expect_h:
                raise FingerprintMismatch(f"{path}: h {h} != {expect_h}")
            states = z["states"] if "states" in z.files else None
            x = z["x"] if "x" in z.files else None
            y = z["y"] if "y" in z.files else None
            return cls(z["energies"], states, h, gid, x, y,
                       UnitSystem(float(z["m"]), float(z["hbar"])), int(z["n_keep"]), str(z["scheme"]))


def _shift_invert_window(L, sigma, k, tol):
    n = L.shape[0]
    lu = spla.splu((L - sigma * sp.identity(n, format="csc")).tocsc())
    op = spla.LinearOperator(L.shape, matvec=lu.solve, dtype=float)
    try:
        return spla.eigsh(L, k=k, sigma=sigma, which="LM", OPinv=op, tol=tol)
    except spla.ArpackNoConvergence as exc:
        raise EigensolveError(
            f"eigsh did not converge at sigma={sigma:.6g}, k={k}: "
            f"{len(exc.eigenvalues)} of {k} eigenpairs converged"
        ) from exc


def lowest_eigenpairs(L, n_wanted: int, area: float, perimeter: float, window: int = 200,
                      tol: float = 0.0, dense_below: int = 2500):
    """Lowest ``n_wanted`` eigenpairs of a sparse symmetric positive matrix.

    Small problems go to a dense solver.  Larger ones are covered by
    consecutive shift-invert windows; every eigenvalue within the radius of
    the returned cluster is guaranteed found, so each window accepts only
    that range and the next window starts from its top.
    """
    n = L.shape[0]
    if n_wanted >= n:
        raise EigensolveError(f"asked for {n_wanted} eigenpairs of a {n}x{n} matrix")
    if n <= dense_below:
        w, V = sla.eigh(L.toarray(), subset_by_index=[0, n_wanted - 1])
        return w, V, {"method": "dense", "windows": 0}
    lam = np.empty(n_wanted)
    V = np.empty((n, n_wanted))
    found = 0
    lo = -np.inf
    windows = []
    # Weyl in terms of the Laplacian eigenvalue k^2 (m = 1/2, hbar = 1 form)
    unit = UnitSystem(0.5, 1.0)
    while found < n_wanted:
        k = min(window, n - 1)
        if found == 0:
            sigma = 0.0
        else:
            # centre slightly below the midpoint of the next k levels so the
            # window overlaps the found ones despite Weyl fluctuations
            sigma = float(weyl_energy(found + 0.4 * k, area, perimeter, unit))
        for _attempt in range(8):
            w, U = _shift_invert_window(L, sigma, k, tol)
            r = np.max(np.abs(w - sigma))
            if found == 0 or sigma - r < lo:
                break
            # gap below the cluster: move the shift down
            sigma = 0.5 * (lo + sigma) if np.isfinite(lo) else 0.5 * sigma
        else:
            raise EigensolveError(f"could not place a window above {lo:.6g}")
        top = sigma + r * (1 - 1e-9) if found else np.inf
        dedup = 1e-9 * max(abs(lo), 1.0) if np.isfinite(lo) else 0.0
        sel = (w > lo + dedup) & (w < top) if found else np.ones(w.size, bool)
        if found == 0:
            # first window from sigma = 0 covers [0, max(w)); the largest may have a twin
            sel = w < w.max() * (1 - 1e-9)
        order = np.argsort(w[sel])
        wn = w[sel][order]
        Un = U[:, sel][:, order]
        take = min(wn.size, n_wanted - found)
        if take == 0:
            raise EigensolveError(f"window at sigma={sigma:.6g} added no eigenvalues")
        lam[found:found + take] = wn[:take]
        V[:, found:found + take] = Un[:, :take]
        found += take
        lo = lam[found - 1]
        windows.append({"sigma": sigma, "radius": float(r), "accepted": int(take)})
    return lam, V, {"method": "shift-invert", "windows": windows}


def eigensolve(geometry: Billiard, h: float, n_basis: int, n_keep: int | None = None,
               units: UnitSystem = UnitSystem(), order: int = 4, ghost: bool = True,
               window: int = 200) -> EigenBasis:
    """Lowest ``n_basis`` Dirichlet eigenpairs with ``E = (hbar^2 / 2m) k^2``."""
    dom = DiscreteDomain(geometry, h, order=order, ghost=ghost)
    L = dom.laplacian()
    lam, V, diag = lowest_eigenpairs(L, n_basis, geometry.area, geometry.perimeter, window=window)
    G = V.T @ V
    gram_err = float(np.max(np.abs(G - np.eye(n_basis))))
    if gram_err > 1e-8:
        # Rayleigh-Ritz on the span restores orthonormality
        Q, _ = np.linalg.qr(V)
        lam, W = np.linalg.eigh(Q.T @ (L @ Q))
        V = Q @ W
        diag["rayleigh_ritz"] = True
        gram_err = float(np.max(np.abs(V.T @ V - np.eye(n_basis))))
    res = np.linalg.norm(L @ V - V * lam, axis=0) / np.abs(lam)
    diag.update(gram_error=gram_err, max_relative_residual=float(res.max()), n_grid=dom.n,
                kh_max=float(np.sqrt(lam[-1]) * h))
    scale = units.hbar**2 / (2 * units.m)
    gid = geometry.fingerprint() if hasattr(geometry, "fingerprint") else repr(geometry)
    return EigenBasis(scale * lam, V, h, gid, dom.x, dom.y, units, n_keep, dom.describe(), diag)


@dataclass
class OperatorMatrix:
    data: np.ndarray
    label: str
    fingerprint: str

    def check(self, basis: EigenBasis) -> None:
        if self.fingerprint != basis.fingerprint:
            raise FingerprintMismatch(f"{self.label} built on basis {self.fingerprint}, "
                                      f"got {basis.fingerprint}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def truncated(self, n: int, basis: EigenBasis) -> "OperatorMatrix":
        """Leading block, rebadged for the truncated basis."""
        return OperatorMatrix(self.data[:n, :n], self.label, basis.fingerprint)


def x_matrix(basis: EigenBasis) -> OperatorMatrix:
    """X_mn = <m|x|n> on the grid (states are unit vectors, so no h^2 factor)."""
    if basis.states is None:
        raise ValueError("basis was loaded without states")
    S = basis.states
    X = (S * basis.x[:, None]).T @ S
    X = 0.5 * (X + X.T)
    return OperatorMatrix(X, "X", basis.fingerprint)


def p_matrix(x: OperatorMatrix, basis: EigenBasis) -> OperatorMatrix:
    """(P_X)_mn = i (m / hbar) (E_m - E_n) X_mn, from [H, X] = -i (hbar / m) P_X."""
    x.check(basis)
    E = basis.energies
    Emn = E[:, None] - E[None, :]
    P = 1j * (basis.units.m / basis.units.hbar) * Emn * x.data
    return OperatorMatrix(P, "P_X", basis.fingerprint)


def commutator_residual(x: OperatorMatrix, p: OperatorMatrix, basis: EigenBasis,
                        n_check: int | None = None) -> float:
    """max |diag([X, P_X]) - i hbar| over the lowest ``n_check`` states."""
    n_check = n_check or basis.n_keep // 2
    X, P = x.data, p.data
    Xs = X[:n_check]
    Pc = P[:, :n_check]
    d = np.einsum("ij,ji->i", Xs, Pc) - np.einsum("ij,ji->i", P[:n_check], X[:, :n_check])
    return float(np.max(np.abs(d - 1j * basis.units.hbar)))


def rectangle_levels(lx: float, ly: float, n: int, units: UnitSystem = UnitSystem()) -> np.ndarray:
    """Lowest n exact Dirichlet levels of the lx x ly rectangle."""
    kmax = np.sqrt(4 * np.pi * n / (lx * ly)) * 2 + 10
    nx = np.arange(1, int(kmax * lx / np.pi) + 2)
    ny = np.arange(1, int(kmax * ly / np.pi) + 2)
    k2 = (np.pi * nx[:, None] / lx) ** 2 + (np.pi * ny[None, :] / ly) ** 2
    return np.sort(k2.ravel())[:n] * units.hbar**2 / (2 * units.m)
