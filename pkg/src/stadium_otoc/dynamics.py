"""Event-driven billiard dynamics, transverse tangent map and Lyapunov exponents.

Trajectories move with constant momentum between specular bounces.  The
transverse deviation is carried in the frame ``e_perp = R90(p / |p|)``; the
frame is mirrored at every reflection, which gives the bounce map

    dq' = -dq
    dp' = -dp + (2 |p| kappa / cos(phi)) dq

with ``kappa = 1/rho`` on the focusing arc, ``0`` on flat walls, and ``phi``
the angle of incidence.  Free flight of duration ``tau`` shears
``dq += (tau / m) dp``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .geometry import Billiard, DegenerateHit


@dataclass(frozen=True)
class PhaseState:
    r: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, float).copy())
        object.__setattr__(self, "p", np.asarray(self.p, float).copy())
        if not np.hypot(*self.p) > 0:
            raise ValueError("|p| must be positive")


@dataclass(frozen=True)
class TransverseTangent:
    dq_perp: float
    dp_perp: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dq_perp, self.dp_perp])


@dataclass
class Bounce:
    time: float
    point: np.ndarray
    wall: int


@dataclass
class Trajectory:
    """End state of a single propagation plus its bounce log."""

    state: PhaseState
    bounces: list = field(default_factory=list)
    transfer: np.ndarray | None = None  # 2x2 map on (dq_perp, dp_perp)

    def write_bounce_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "x", "y", "wall"])
            for b in self.bounces:
                w.writerow([repr(b.time), repr(b.point[0]), repr(b.point[1]), b.wall])


def reflect(p, normal):
    """Specular reflection of momenta (n, 2) on unit normals (n, 2)."""
    pn = np.einsum("ij,ij->i", p, normal)
    return p - 2.0 * pn[:, None] * normal


def flight_matrix(tau: float, m: float) -> np.ndarray:
    return np.array([[1.0, tau / m], [0.0, 1.0]])


def bounce_matrix(kappa: float, cos_phi: float, pmag: float) -> np.ndarray:
    return np.array([[-1.0, 0.0], [2.0 * pmag * kappa / cos_phi, -1.0]])


def propagate(geometry: Billiard, state: PhaseState, t: float, m: float = 0.5,
              tangent: bool = False) -> Trajectory:
    """Exact propagation of one trajectory for time ``t``.

    With ``tangent=True`` the 2x2 transverse transfer matrix is accumulated.
    Raises DegenerateHit on grazing or corner collisions.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    r = state.r.copy()
    p = state.p.copy()
    pmag = np.hypot(*p)
    T = np.eye(2)
    bounces = []
    now = 0.0
    last = -1
    while True:
        fb = geometry.flight(r[None], (p / m)[None], np.array([last]))
        tau = fb.tau[0]
        if now + tau > t:
            r = r + (t - now) * p / m
            if tangent:
                T = flight_matrix(t - now, m) @ T
            break
        if fb.degenerate[0]:
            raise DegenerateHit(f"degenerate bounce at t={now + tau!r}, point {fb.hit[0]}")
        now += tau
        r = fb.hit[0]
        n = fb.normal[0]
        cos_phi = abs(p @ n) / pmag
        p = reflect(p[None], n[None])[0]
        if tangent:
            T = bounce_matrix(fb.curvature[0], cos_phi, pmag) @ flight_matrix(tau, m) @ T
        last = fb.wall[0]
        bounces.append(Bounce(now, r.copy(), int(last)))
    return Trajectory(PhaseState(r, p), bounces, T if tangent else None)


def propagate_tangent(geometry: Billiard, state: PhaseState, tangent: TransverseTangent,
                      t: float, m: float = 0.5) -> TransverseTangent:
    tr = propagate(geometry, state, t, m=m, tangent=True)
    out = tr.transfer @ tangent.as_array()
    return TransverseTangent(float(out[0]), float(out[1]))


def record_x(geometry: Billiard, r0: np.ndarray, v0: np.ndarray, t_grid: np.ndarray,
             max_bounces: int = 1_000_000):
    """X(t) on a shared time grid for a batch of trajectories.

    ``r0``, ``v0`` are (n, 2) positions and velocities.  Returns the (n, len(t_grid))
    array of X values, the number of bounces before each grid time, and a mask of
    trajectories that met a degenerate collision (their rows are unusable).
    """
    t_grid = np.asarray(t_grid, float)
    if np.any(np.diff(t_grid) <= 0) or t_grid[0] < 0:
        raise ValueError("t_grid must be non-negative and strictly increasing")
    n = r0.shape[0]
    nt = t_grid.size
    X = np.empty((n, nt))
    nb = np.empty((n, nt), dtype=np.int32)
    bad = np.zeros(n, bool)
    idx = np.arange(n)
    r = r0.copy()
    v = v0.copy()
    now = np.zeros(n)
    last = np.full(n, -1)
    k = np.zeros(n, dtype=np.int64)  # next grid index to fill
    count = np.zeros(n, dtype=np.int32)
    for _ in range(max_bounces):
        if idx.size == 0:
            break
        fb = geometry.flight(r, v, last)
        t_end = now + fb.tau
        k_end = np.searchsorted(t_grid, t_end, side="right")
        nrec = k_end - k
        if np.any(nrec):
            rows = np.repeat(np.arange(idx.size), nrec)
            cols = np.arange(nrec.sum()) - np.repeat(np.cumsum(nrec) - nrec, nrec) + np.repeat(k, nrec)
            dt = t_grid[cols] - now[rows]
            X[idx[rows], cols] = r[rows, 0] + dt * v[rows, 0]
            nb[idx[rows], cols] = count[rows]
        k = k_end
        done = k >= nt
        bad[idx[fb.degenerate & ~done]] = True
        keep = ~done & ~fb.degenerate
        if not np.all(keep):
            idx, fb_keep = idx[keep], keep
            r, v, now, k, count = r[fb_keep], v[fb_keep], t_end[fb_keep], k[fb_keep], count[fb_keep]
            hit, normal, wall = fb.hit[fb_keep], fb.normal[fb_keep], fb.wall[fb_keep]
        else:
            now = t_end
            hit, normal, wall = fb.hit, fb.normal, fb.wall
        r = hit
        v = reflect(v, normal)
        last = wall
        count = count + 1
    else:
        raise RuntimeError("record_x exceeded max_bounces")
    return X, nb, bad


@dataclass(frozen=True)
class LyapunovEstimate:
    lambda_g: float
    stderr: float
    length: float
    n_samples: int
    speed: float = 1.0
    m: float = 0.5
    n_perturbed: int = 0

    @property
    def lambda_time(self) -> float:
        """Per-time exponent (|p|/m) * lambda_g."""
        return self.speed * self.lambda_g

    def lambda_at(self, pmag: float, m: float | None = None) -> float:
        return pmag / (self.m if m is None else m) * self.lambda_g


def lyapunov_geometric(geometry: Billiard, n_traj: int = 200, total_length: float = 2000.0,
                       renorm_length: float = 1.0, seed=0, speed: float = 1.0,
                       m: float = 0.5) -> LyapunovEstimate:
    """Benettin estimate of the exponent per unit arc length.

    All trajectories are advanced together.  The tangent vector is stored as
    ``(dq_perp, dp_perp / |p|)`` so its norm is momentum independent; it is
    renormalized after the first bounce past every ``renorm_length`` of path.
    Grazing or corner hits nudge the direction by 1e-9 rad and are counted.
    """
    if n_traj < 10:
        raise ValueError("n_traj must be at least 10")
    if not total_length > 0 or not renorm_length > 0:
        raise ValueError("lengths must be positive")
    rng = np.random.default_rng(seed)
    r = geometry.sample_uniform_points(rng, n_traj)
    ang = rng.uniform(0, 2 * np.pi, n_traj)
    v = speed * np.column_stack([np.cos(ang), np.sin(ang)])
    tv = rng.normal(size=(n_traj, 2))
    tv /= np.hypot(tv[:, 0], tv[:, 1])[:, None]
    log_sum = np.zeros(n_traj)
    length = np.zeros(n_traj)
    since = np.zeros(n_traj)
    last = np.full(n_traj, -1)
    nudged = 0
    active = np.ones(n_traj, bool)
    while np.any(active):
        ia = np.flatnonzero(active)
        fb = geometry.flight(r[ia], v[ia], last[ia])
        if np.any(fb.degenerate):
            nudged += int(fb.degenerate.sum())
            bad = ia[fb.degenerate]
            rot = 1e-9
            c, s = np.cos(rot), np.sin(rot)
            v[bad] = np.column_stack([c * v[bad, 0] - s * v[bad, 1], s * v[bad, 0] + c * v[bad, 1]])
            continue
        L = fb.tau * speed
        # free flight, unit-speed form: dq += L * dtheta
        tv[ia, 0] += L * tv[ia, 1]
        cos_phi = np.abs(np.einsum("ij,ij->i", v[ia], fb.normal)) / speed
        tv[ia, 1] = -tv[ia, 1] + 2.0 * fb.curvature / cos_phi * tv[ia, 0]
        tv[ia, 0] = -tv[ia, 0]
        r[ia] = fb.hit
        v[ia] = reflect(v[ia], fb.normal)
        last[ia] = fb.wall
        length[ia] += L
        since[ia] += L
        renorm = ia[since[ia] >= renorm_length]
        if renorm.size:
            nrm = np.hypot(tv[renorm, 0], tv[renorm, 1])
            log_sum[renorm] += np.log(nrm)
            tv[renorm] /= nrm[:, None]
            since[renorm] = 0.0
        active = length < total_length
    nrm = np.hypot(tv[:, 0], tv[:, 1])
    log_sum += np.log(nrm)
    est = log_sum / length
    return LyapunovEstimate(
        lambda_g=float(est.mean()),
        stderr=float(est.std(ddof=1) / np.sqrt(n_traj)),
        length=float(length.mean()),
        n_samples=n_traj,
        speed=speed,
        m=m,
        n_perturbed=nudged,
    )
