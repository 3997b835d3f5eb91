"""Classical (leading order in hbar) OTOC by Monte Carlo.

The classical component is the Boltzmann average of ``P_X(0)^2 X(t)^2`` with
positions uniform over the billiard and Gaussian momenta.  Samples are drawn
straight from that product measure, so the normalization cancels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .dynamics import PhaseState, record_x
from .geometry import ArcWall, Billiard, FlatWall, UnitSystem
from .series import OtocSeries


@dataclass(frozen=True)
class ThermalEnsemble:
    beta: float
    m: float = 0.5
    hbar: float = 1.0

    def __post_init__(self):
        if not (self.beta > 0 and self.m > 0 and self.hbar > 0):
            raise ValueError("beta, m and hbar must be positive")

    @classmethod
    def from_kT(cls, kT: float, units: UnitSystem = UnitSystem()) -> "ThermalEnsemble":
        return cls(1.0 / kT, units.m, units.hbar)

    @classmethod
    def from_e0_ratio(cls, ratio: float, units: UnitSystem = UnitSystem(), a: float = 1.0):
        """Ensemble at k_B T = ratio * E_0."""
        return cls.from_kT(ratio * units.e0(a), units)

    @property
    def kT(self) -> float:
        return 1.0 / self.beta

    @property
    def units(self) -> UnitSystem:
        return UnitSystem(self.m, self.hbar)

    @property
    def vtilde(self) -> float:
        """Root-mean-square X velocity."""
        return np.sqrt(self.kT / self.m)

    def Z(self, area: float) -> float:
        """Classical partition function of a free particle in a billiard."""
        return area * self.m / (2 * np.pi * self.hbar**2 * self.beta)

    def describe(self) -> dict:
        return {"beta": self.beta, "kT": self.kT, "m": self.m, "hbar": self.hbar}


def sample_thermal_batch(ensemble: ThermalEnsemble, geometry: Billiard,
                         rng: np.random.Generator, n: int):
    """Positions (n, 2) uniform in the domain, momenta (n, 2) Gaussian."""
    r = geometry.sample_uniform_points(rng, n)
    p = rng.normal(scale=np.sqrt(ensemble.m * ensemble.kT), size=(n, 2))
    return r, p


def sample_thermal(ensemble: ThermalEnsemble, geometry: Billiard,
                   rng: np.random.Generator) -> PhaseState:
    r, p = sample_thermal_batch(ensemble, geometry, rng, 1)
    return PhaseState(r[0], p[0])


def analytic_anchors(ensemble: ThermalEnsemble, geometry: Billiard):
    """(t = 0 value m G_Y^2 k_B T, free-flight quadratic coefficient 3 (k_B T)^2)."""
    gy2 = geometry.gyration_y().gy2
    return ensemble.m * gy2 * ensemble.kT, 3.0 * ensemble.kT**2


def boundary_quadratic_coefficient(geometry: Billiard) -> float:
    """Small-t coefficient of O_cl(t) - O_cl(0) in units of (k_B T)^2 t^2.

    Free flight alone gives 3.  Specular bounces within time t contribute at
    the same order through walls with n_x != 0 at x != 0:
    ``3 - (1/A) * boundary integral of X n_x (1 + 2 n_x^2) ds``.
    """
    total = 0.0
    for w in geometry.walls:
        if isinstance(w, FlatWall):
            nx = w.normal[0]
            if nx == 0.0:
                continue
            xs = 0.5 * (w.start[0] + w.end[0])  # X is constant along walls with n_x != 0
            total += xs * nx * (1 + 2 * nx * nx) * w.length
        elif isinstance(w, ArcWall):
            cx = w.center[0]

            def f(th):
                c = np.cos(th)
                return (cx + w.radius * c) * c * (1 + 2 * c * c) * w.radius

            total += integrate.quad(f, w.theta0, w.theta1, epsabs=1e-14, epsrel=1e-13)[0]
    return 3.0 - total / geometry.area


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(2**63)))
    return np.random.SeedSequence(seed)


def jackknife(block_means: np.ndarray):
    """Mean and jackknife standard error over axis 0 of equal-size block means."""
    b = block_means.shape[0]
    total = block_means.sum(axis=0)
    loo = (total[None] - block_means) / (b - 1)
    mean = total / b
    err = np.sqrt((b - 1) / b * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return mean, err


def _draw_trajectories(ensemble, geometry, rng, n, t_grid):
    """X on the grid for n clean samples; degenerate samples are redrawn."""
    r, p = sample_thermal_batch(ensemble, geometry, rng, n)
    X, nb, bad = record_x(geometry, r, p / ensemble.m, t_grid)
    redrawn = 0
    while np.any(bad):
        k = int(bad.sum())
        redrawn += k
        r2, p2 = sample_thermal_batch(ensemble, geometry, rng, k)
        X2, nb2, bad2 = record_x(geometry, r2, p2 / ensemble.m, t_grid)
        ib = np.flatnonzero(bad)
        r[ib], p[ib], X[ib], nb[ib] = r2, p2, X2, nb2
        bad[ib] = bad2
    return r, p, X, nb, redrawn


def o_classical(ensemble: ThermalEnsemble, geometry: Billiard, t_grid, n_samples: int = 10**6,
                seed=0, n_blocks: int = 100, chunk: int = 20000) -> OtocSeries:
    """Monte Carlo O_cl(t) = <P_X(0)^2 X(t)^2> with jackknife errors.

    Each block has its own RNG stream spawned from ``seed``, so the result
    does not depend on ``chunk`` and is bit-reproducible.  The metadata also
    carries the fraction of samples that have bounced before each grid time.
    """
    if n_samples < n_blocks * 2:
        raise ValueError("need at least two samples per block")
    t_grid = np.asarray(t_grid, float)
    ss = _seed_sequence(seed)
    sizes = np.full(n_blocks, n_samples // n_blocks)
    sizes[: n_samples % n_blocks] += 1
    means = np.empty((n_blocks, t_grid.size))
    bounced = np.zeros(t_grid.size)
    redrawn = 0
    for b, child in enumerate(ss.spawn(n_blocks)):
        rng = np.random.default_rng(child)
        acc = np.zeros(t_grid.size)
        left = sizes[b]
        while left > 0:
            n = min(chunk, left)
            _, p, X, nb, red = _draw_trajectories(ensemble, geometry, rng, n, t_grid)
            acc += (p[:, 0, None] ** 2 * X**2).sum(axis=0)
            bounced += (nb > 0).sum(axis=0)
            redrawn += red
            left -= n
        means[b] = acc / sizes[b]
    w = sizes / sizes.mean()
    mean, err = jackknife(means * w[:, None])
    meta = {
        "quantity": "O_cl",
        **ensemble.describe(),
        "seed": str(seed) if not isinstance(seed, (int, np.integer)) else int(seed),
        "n_samples": int(n_samples),
        "n_blocks": int(n_blocks),
        "geometry": getattr(geometry, "fingerprint", lambda: repr(geometry))(),
        "bounced_fraction": (bounced / n_samples).tolist(),
        "redrawn_degenerate": int(redrawn),
    }
    return OtocSeries(t_grid, ensemble.vtilde * t_grid, mean, err, meta)


@dataclass
class TakeoffResult:
    """Small-t growth of the classical component.

    ``free_flight`` is the paired difference built on the unbounced branch
    X0 + v_x t of every sample.  ``billiard`` uses the exact trajectories.
    ``conditional`` restricts the exact difference to samples that have not
    bounced by t.
    """

    t: np.ndarray
    free_flight: np.ndarray
    free_flight_err: np.ndarray
    billiard: np.ndarray
    billiard_err: np.ndarray
    conditional: np.ndarray
    conditional_err: np.ndarray
    bounced_fraction: np.ndarray
    prediction: np.ndarray
    boundary_prediction: np.ndarray


def quadratic_takeoff(ensemble: ThermalEnsemble, geometry: Billiard, t_grid,
                      n_samples: int = 10**6, seed=0, n_blocks: int = 100,
                      chunk: int = 50000) -> TakeoffResult:
    """Paired estimates of O_cl(t) - O_cl(0) for short times.

    Differences are formed per sample, which removes the O(1) variance of
    X0^2 and leaves an error of order t.
    """
    t_grid = np.asarray(t_grid, float)
    if t_grid[0] <= 0:
        raise ValueError("t_grid must be positive")
    grid = np.concatenate([[0.0], t_grid])
    ss = _seed_sequence(seed)
    sizes = np.full(n_blocks, n_samples // n_blocks)
    sizes[: n_samples % n_blocks] += 1
    nt = t_grid.size
    ff = np.empty((n_blocks, nt))
    bil = np.empty((n_blocks, nt))
    cnum = np.zeros((n_blocks, nt))
    cden = np.zeros((n_blocks, nt))
    bounced = np.zeros(nt)
    for b, child in enumerate(ss.spawn(n_blocks)):
        rng = np.random.default_rng(child)
        s_ff = np.zeros(nt)
        s_b = np.zeros(nt)
        left = sizes[b]
        while left > 0:
            n = min(chunk, left)
            r, p, X, nb, _ = _draw_trajectories(ensemble, geometry, rng, n, grid)
            px2 = p[:, 0, None] ** 2
            vx = p[:, 0, None] / ensemble.m
            x0 = r[:, 0, None]
            s_ff += (px2 * (2 * x0 * vx * t_grid + (vx * t_grid) ** 2)).sum(axis=0)
            d = px2 * (X[:, 1:] ** 2 - X[:, :1] ** 2)
            s_b += d.sum(axis=0)
            free = nb[:, 1:] == 0
            cnum[b] += np.where(free, d, 0.0).sum(axis=0)
            cden[b] += free.sum(axis=0)
            bounced += (~free).sum(axis=0)
            left -= n
        ff[b] = s_ff / sizes[b]
        bil[b] = s_b / sizes[b]
    ff_m, ff_e = jackknife(ff)
    b_m, b_e = jackknife(bil)
    # ratio estimator for the conditional mean, jackknifed on the ratio
    tot_n, tot_d = cnum.sum(0), cden.sum(0)
    loo = (tot_n[None] - cnum) / (tot_d[None] - cden)
    c_m = tot_n / tot_d
    c_e = np.sqrt((n_blocks - 1) / n_blocks * ((loo - loo.mean(0)) ** 2).sum(0))
    return TakeoffResult(
        t=t_grid,
        free_flight=ff_m,
        free_flight_err=ff_e,
        billiard=b_m,
        billiard_err=b_e,
        conditional=c_m,
        conditional_err=c_e,
        bounced_fraction=bounced / n_samples,
        prediction=3.0 * ensemble.kT**2 * t_grid**2,
        boundary_prediction=boundary_quadratic_coefficient(geometry) * ensemble.kT**2 * t_grid**2,
    )


def mean_speed_length(ensemble: ThermalEnsemble, p: np.ndarray, t: float):
    """Sample mean and standard error of |p| t / m (mean trajectory length)."""
    L = np.hypot(p[:, 0], p[:, 1]) * t / ensemble.m
    return L.mean(), L.std(ddof=1) / np.sqrt(L.size)
