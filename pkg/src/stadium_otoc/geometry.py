"""Billiard domains, unit system and boundary queries.

The production domain is the desymmetrized Bunimovich stadium: the rectangle
``[0, ls] x [0, a]`` joined to the quarter disk of radius ``a`` centred at
``(ls, 0)``.  Every wall is Dirichlet.  The X origin sits on the left flat wall.

All boundary queries are vectorized over particles; the scalar helpers are
thin wrappers used by tests and by the periodic-orbit code.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate

# a hit with |cos(incidence)| below this is treated as tangential
GRAZING_COS = 1e-10
# distance (in units of the length scale) at which a hit counts as a corner hit
CORNER_TOL = 1e-9
# boundary layer (relative to the scale) that contains() treats as outside
BOUNDARY_TOL = 1e-12


class DegenerateHit(RuntimeError):
    """Grazing or corner collision; the caller should perturb or resample."""


@dataclass(frozen=True)
class UnitSystem:
    """Mass and action units; k_B is fixed to 1 so temperatures are energies."""

    m: float = 0.5
    hbar: float = 1.0

    kB = 1.0

    def __post_init__(self):
        if not (self.m > 0 and self.hbar > 0):
            raise ValueError("m and hbar must be positive")

    def e0(self, a: float = 1.0) -> float:
        """Energy unit hbar^2 / (m a^2)."""
        return self.hbar**2 / (self.m * a * a)

    def t0(self, a: float = 1.0) -> float:
        """Time unit m a^2 / hbar."""
        return self.m * a * a / self.hbar


@dataclass(frozen=True)
class FlatWall:
    start: tuple
    end: tuple
    normal: tuple  # outward unit normal

    @property
    def length(self) -> float:
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))


@dataclass(frozen=True)
class ArcWall:
    center: tuple
    radius: float
    theta0: float
    theta1: float

    @property
    def length(self) -> float:
        return self.radius * (self.theta1 - self.theta0)


@dataclass(frozen=True)
class GyrationData:
    gy2: float
    error: float


@dataclass
class FlightBatch:
    """Result of one free flight for a batch of particles."""

    tau: np.ndarray  # flight length along the unit direction
    hit: np.ndarray  # (n, 2)
    normal: np.ndarray  # (n, 2) outward unit normals
    wall: np.ndarray  # wall index hit
    curvature: np.ndarray  # signed curvature, > 0 for focusing walls
    degenerate: np.ndarray  # grazing or corner hits


class Billiard:
    """Convex billiard bounded by flat walls and circular arcs.

    Subclasses populate ``walls`` and provide ``contains`` and ``top``; the
    domain is always of the form ``0 < y < top(x)`` for ``x`` in ``xrange``.
    """

    walls: tuple = ()
    scale: float = 1.0

    # -- subclass hooks -------------------------------------------------
    def contains(self, x, y):
        raise NotImplementedError

    def top(self, x):
        raise NotImplementedError

    @property
    def xrange(self) -> tuple:
        raise NotImplementedError

    @property
    def bbox(self) -> tuple:
        """(xmin, xmax, ymin, ymax)."""
        raise NotImplementedError

    # -- derived geometry -----------------------------------------------
    @property
    def perimeter(self) -> float:
        return float(sum(w.length for w in self.walls))

    @cached_property
    def corners(self) -> np.ndarray:
        """Wall junctions where the outward normal jumps."""
        pts = []
        ends = []
        for w in self.walls:
            if isinstance(w, FlatWall):
                n = np.array(w.normal, float)
                ends.append((np.array(w.start, float), n))
                ends.append((np.array(w.end, float), n))
            else:
                c = np.array(w.center, float)
                for th in (w.theta0, w.theta1):
                    u = np.array([np.cos(th), np.sin(th)])
                    ends.append((c + w.radius * u, u))
        for i in range(len(ends)):
            for j in range(i + 1, len(ends)):
                (p, n), (q, k) = ends[i], ends[j]
                if np.hypot(*(p - q)) < 1e-12 * self.scale and abs(n @ k - 1) > 1e-12:
                    pts.append(p)
        return np.array(pts).reshape(-1, 2)

    def quadrature_area(self) -> tuple:
        x0, x1 = self.xrange
        return _piecewise_quad(lambda x: self.top(x), x0, x1, self._breaks())

    def _breaks(self) -> list:
        return []

    def gyration_y(self) -> GyrationData:
        """Area average of X^2 by adaptive quadrature of x^2 * top(x)."""
        x0, x1 = self.xrange
        area, e_area = self.quadrature_area()
        mom, e_mom = _piecewise_quad(lambda x: x * x * self.top(x), x0, x1, self._breaks())
        gy2 = mom / area
        err = e_mom / area + gy2 * e_area / area
        return GyrationData(gy2=gy2, error=err)

    def mean_x(self) -> float:
        x0, x1 = self.xrange
        area, _ = self.quadrature_area()
        mom, _ = _piecewise_quad(lambda x: x * self.top(x), x0, x1, self._breaks())
        return mom / area

    # -- sampling ---------------------------------------------------------
    def sample_uniform_points(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Rejection sampling from the bounding box; returns (n, 2)."""
        xmin, xmax, ymin, ymax = self.bbox
        out = np.empty((n, 2))
        filled = 0
        while filled < n:
            need = n - filled
            batch = max(16, int(need * 1.5 * self.box_area / self.area) + 16)
            x = rng.uniform(xmin, xmax, batch)
            y = rng.uniform(ymin, ymax, batch)
            ok = self.contains(x, y)
            take = np.flatnonzero(ok)[:need]
            out[filled:filled + take.size, 0] = x[take]
            out[filled:filled + take.size, 1] = y[take]
            filled += take.size
        return out

    def sample_uniform_point(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_uniform_points(rng, 1)[0]

    @property
    def box_area(self) -> float:
        xmin, xmax, ymin, ymax = self.bbox
        return (xmax - xmin) * (ymax - ymin)

    # -- ray casting ------------------------------------------------------
    def flight(self, pos, direction, last_wall=None) -> FlightBatch:
        """Exit point of straight rays ``pos + s * direction`` (s > 0).

        ``direction`` need not be normalized; ``tau`` is returned in units of
        the direction's length (time if ``direction`` is a velocity).
        ``last_wall`` excludes the flat wall a particle currently sits on.
        """
        pos = np.atleast_2d(np.asarray(pos, float))
        d = np.atleast_2d(np.asarray(direction, float))
        n = pos.shape[0]
        if last_wall is None:
            last_wall = np.full(n, -1)
        tau = np.full(n, np.inf)
        wall = np.full(n, -1)
        eps = 1e-12 * self.scale
        for k, w in enumerate(self.walls):
            with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                t = self._wall_hits(w, pos, d, eps)
            if isinstance(w, FlatWall):
                # a ray can leave the arc and hit it again; only flat walls are excluded
                t = np.where(last_wall == k, np.inf, t)
            better = t < tau
            tau = np.where(better, t, tau)
            wall = np.where(better, k, wall)
        return self._finish(pos, d, tau, wall)

    @staticmethod
    def _wall_hits(w, pos, d, eps):
        """Forward hit parameter on one wall, inf where it is missed."""
        if isinstance(w, FlatWall):
            nx, ny = w.normal
            dn = d[:, 0] * nx + d[:, 1] * ny
            sx, sy = w.start
            gap = (sx - pos[:, 0]) * nx + (sy - pos[:, 1]) * ny
            t = np.where(dn > 0, gap / dn, np.inf)
            t = np.maximum(t, 0.0)
            hx = pos[:, 0] + t * d[:, 0]
            hy = pos[:, 1] + t * d[:, 1]
            ux, uy = w.end[0] - sx, w.end[1] - sy
            s = ((hx - sx) * ux + (hy - sy) * uy) / (ux * ux + uy * uy)
            tol = 1e-9
            ok = np.isfinite(t) & (s >= -tol) & (s <= 1 + tol)
        else:
            cx, cy = w.center
            ox = pos[:, 0] - cx
            oy = pos[:, 1] - cy
            A = d[:, 0] ** 2 + d[:, 1] ** 2
            B = ox * d[:, 0] + oy * d[:, 1]
            C = ox * ox + oy * oy - w.radius**2
            disc = B * B - A * C
            root = np.sqrt(np.maximum(disc, 0.0))
            # far root, written to avoid cancellation
            t = np.where(B < 0, (-B + root) / A, -C / np.maximum(B + root, 1e-300))
            t = np.where(disc >= 0, t, np.inf)
            t = np.where(t > eps, t, np.inf)
            hx = ox + t * d[:, 0]
            hy = oy + t * d[:, 1]
            ang = np.arctan2(hy, hx)
            tol = 1e-9
            ok = np.isfinite(t) & (ang >= w.theta0 - tol) & (ang <= w.theta1 + tol)
        return np.where(ok, t, np.inf)

    def _finish(self, pos, d, tau, wall):
        n = pos.shape[0]
        if np.any(~np.isfinite(tau)):
            raise DegenerateHit("ray does not leave the domain (origin outside?)")
        hit = pos + tau[:, None] * d
        normal = np.empty_like(hit)
        curv = np.zeros(n)
        for k, w in enumerate(self.walls):
            sel = wall == k
            if not np.any(sel):
                continue
            if isinstance(w, FlatWall):
                normal[sel] = w.normal
            else:
                r = hit[sel] - np.asarray(w.center)
                normal[sel] = r / np.hypot(r[:, 0], r[:, 1])[:, None]
                # snap onto the circle
                hit[sel] = np.asarray(w.center) + w.radius * normal[sel]
                curv[sel] = 1.0 / w.radius
        dnorm = np.hypot(d[:, 0], d[:, 1])
        cosi = np.abs(np.einsum("ij,ij->i", d, normal)) / dnorm
        degenerate = cosi < GRAZING_COS
        if self.corners.size:
            dc = np.min(
                np.hypot(hit[:, None, 0] - self.corners[None, :, 0],
                         hit[:, None, 1] - self.corners[None, :, 1]),
                axis=1,
            )
            degenerate |= dc < CORNER_TOL * self.scale
        return FlightBatch(tau, hit, normal, wall, curv, degenerate)

    def ray_to_boundary(self, origin, direction):
        """Single ray: returns (hit point, flight length, outward normal).

        Raises DegenerateHit on a grazing or corner collision.
        """
        origin = np.asarray(origin, float)
        direction = np.asarray(direction, float)
        if not self.contains(origin[0], origin[1]):
            raise ValueError("origin must lie strictly inside the domain")
        fb = self.flight(origin[None], direction[None])
        if fb.degenerate[0]:
            raise DegenerateHit(f"degenerate hit at {fb.hit[0]}")
        return fb.hit[0], float(fb.tau[0] * np.hypot(*direction)), fb.normal[0]

    def distance_to_boundary(self, x, y):
        """Euclidean distance from interior points to the nearest wall."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        best = np.full(np.broadcast(x, y).shape, np.inf)
        for w in self.walls:
            if isinstance(w, FlatWall):
                sx, sy = w.start
                ux, uy = w.end[0] - sx, w.end[1] - sy
                L2 = ux * ux + uy * uy
                s = np.clip(((x - sx) * ux + (y - sy) * uy) / L2, 0, 1)
                dist = np.hypot(x - sx - s * ux, y - sy - s * uy)
            else:
                cx, cy = w.center
                ang = np.clip(np.arctan2(y - cy, x - cx), w.theta0, w.theta1)
                px = cx + w.radius * np.cos(ang)
                py = cy + w.radius * np.sin(ang)
                dist = np.hypot(x - px, y - py)
            best = np.minimum(best, dist)
        return best


def _piecewise_quad(f, x0, x1, breaks):
    edges = [x0] + [b for b in breaks if x0 < b < x1] + [x1]
    total = 0.0
    err = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)
        total += v
        err += e
    return total, err


@dataclass(frozen=True)
class BilliardGeometry(Billiard):
    """Desymmetrized stadium: rectangle [0, ls] x [0, a] plus quarter disk."""

    a: float = 1.0
    ls: float = 1.0
    walls: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.a > 0 or self.ls < 0:
            raise ValueError("need a > 0 and ls >= 0")
        a, ls = float(self.a), float(self.ls)
        walls = [FlatWall((0.0, a), (0.0, 0.0), (-1.0, 0.0))]  # left
        if ls > 0:
            walls.append(FlatWall((0.0, 0.0), (ls, 0.0), (0.0, -1.0)))  # bottom under rectangle
        walls.append(FlatWall((ls, 0.0), (ls + a, 0.0), (0.0, -1.0)))  # bottom under arc
        walls.append(ArcWall((ls, 0.0), a, 0.0, np.pi / 2))
        if ls > 0:
            walls.append(FlatWall((ls, a), (0.0, a), (0.0, 1.0)))  # top
        object.__setattr__(self, "walls", tuple(walls))

    @property
    def scale(self) -> float:
        return self.a

    @property
    def area(self) -> float:
        return self.ls * self.a + np.pi * self.a**2 / 4

    @property
    def xrange(self):
        return (0.0, self.ls + self.a)

    @property
    def bbox(self):
        return (0.0, self.ls + self.a, 0.0, self.a)

    def _breaks(self):
        return [self.ls]

    def contains(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        eps = BOUNDARY_TOL * self.a
        rect = (x > eps) & (x <= self.ls) & (y < self.a - eps)
        disk = (x > self.ls) & (np.hypot(x - self.ls, y) < self.a - eps)
        return (y > eps) & (rect | disk)

    def top(self, x):
        x = np.asarray(x, float)
        u = np.clip(x - self.ls, 0.0, self.a)
        return np.where(x <= self.ls, self.a, np.sqrt(np.maximum(self.a**2 - u * u, 0.0)))

    def scaled(self, c: float) -> "BilliardGeometry":
        return BilliardGeometry(a=self.a * c, ls=self.ls * c)

    def fingerprint(self) -> str:
        return f"stadium(a={self.a!r},ls={self.ls!r})"


@dataclass(frozen=True)
class RectangleGeometry(Billiard):
    """Integrable oracle domain [0, lx] x [0, ly]."""

    lx: float = 1.0
    ly: float = 1.0
    walls: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lx, ly = float(self.lx), float(self.ly)
        object.__setattr__(self, "walls", (
            FlatWall((0.0, ly), (0.0, 0.0), (-1.0, 0.0)),
            FlatWall((0.0, 0.0), (lx, 0.0), (0.0, -1.0)),
            FlatWall((lx, 0.0), (lx, ly), (1.0, 0.0)),
            FlatWall((lx, ly), (0.0, ly), (0.0, 1.0)),
        ))

    @property
    def scale(self) -> float:
        return min(self.lx, self.ly)

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def xrange(self):
        return (0.0, self.lx)

    @property
    def bbox(self):
        return (0.0, self.lx, 0.0, self.ly)

    def contains(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        eps = BOUNDARY_TOL * self.scale
        return (x > eps) & (x < self.lx - eps) & (y > eps) & (y < self.ly - eps)

    def top(self, x):
        return np.full(np.shape(x), self.ly, dtype=float)

    def fingerprint(self) -> str:
        return f"rectangle(lx={self.lx!r},ly={self.ly!r})"


def gyration_y(geometry: Billiard) -> GyrationData:
    return geometry.gyration_y()


def sample_uniform_point(geometry: Billiard, rng: np.random.Generator) -> np.ndarray:
    return geometry.sample_uniform_point(rng)
