"""Short periodic orbits, their monodromy, orbit correlations and the trace-formula correction.

Orbits are found as stationary points of the total chord length over the
boundary arc-length parameters of ``n`` bounce points.  The transverse
monodromy uses the unit-speed tangent map of ``dynamics`` (flight shear
``[[1, L], [0, 1]]``, bounce ``[[-1, 0], [2 kappa / cos(phi), -1]]``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import ArcWall, Billiard, FlatWall, UnitSystem
from .series import OtocSeries

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


class OrbitError(RuntimeError):
    pass


# -- boundary parametrization ----------------------------------------------

class Boundary:
    """Arc-length parametrization of the wall loop, counter-clockwise."""

    def __init__(self, geometry: Billiard):
        self.geometry = geometry
        self.walls = geometry.walls
        self.lengths = np.array([w.length for w in self.walls])
        self.starts = np.concatenate([[0.0], np.cumsum(self.lengths)[:-1]])
        self.perimeter = float(self.lengths.sum())

    def wall_of(self, s):
        s = np.mod(np.asarray(s, float), self.perimeter)
        return np.clip(np.searchsorted(self.starts, s, side="right") - 1, 0, len(self.walls) - 1)

    def evaluate(self, s):
        """Points, unit tangents, outward normals, curvatures and wall ids."""
        s = np.mod(np.atleast_1d(np.asarray(s, float)), self.perimeter)
        k = self.wall_of(s)
        q = np.empty((s.size, 2))
        tan = np.empty((s.size, 2))
        nrm = np.empty((s.size, 2))
        kap = np.zeros(s.size)
        for i, w in enumerate(self.walls):
            sel = k == i
            if not np.any(sel):
                continue
            u = s[sel] - self.starts[i]
            if isinstance(w, FlatWall):
                a, b = np.asarray(w.start), np.asarray(w.end)
                d = (b - a) / w.length
                q[sel] = a + u[:, None] * d
                tan[sel] = d
                nrm[sel] = w.normal
            else:
                th = w.theta0 + u / w.radius
                c = np.column_stack([np.cos(th), np.sin(th)])
                q[sel] = np.asarray(w.center) + w.radius * c
                tan[sel] = np.column_stack([-c[:, 1], c[:, 0]])
                nrm[sel] = c
                kap[sel] = 1.0 / w.radius
        return q, tan, nrm, kap, k

    def distance_to_corner(self, s) -> np.ndarray:
        q = self.evaluate(s)[0]
        cs = self.geometry.corners
        if cs.size == 0:
            return np.full(q.shape[0], np.inf)
        return np.min(np.hypot(q[:, None, 0] - cs[None, :, 0], q[:, None, 1] - cs[None, :, 1]), axis=1)


def _chords(q):
    d = np.roll(q, -1, axis=0) - q  # chord i: bounce i -> i + 1
    L = np.hypot(d[:, 0], d[:, 1])
    with np.errstate(invalid="ignore", divide="ignore"):  # coincident points are rejected later
        return d / L[:, None], L


def length_gradient(bd: Boundary, s) -> np.ndarray:
    q, tan, *_ = bd.evaluate(s)
    u, _ = _chords(q)
    u_in = np.roll(u, 1, axis=0)
    return np.einsum("ij,ij->i", tan, u_in - u)


# -- orbit type -----------------------------------------------------------------

@dataclass
class PeriodicOrbit:
    params: np.ndarray  # boundary arc-length parameter of each bounce
    points: np.ndarray
    normals: np.ndarray
    walls: np.ndarray
    curvatures: np.ndarray
    length: float
    monodromy: np.ndarray
    nu: int
    closure_residual: float
    angle_residual: float
    label: str = ""
    on_symmetry_line: bool = False
    conjugate_points: int = 0

    @property
    def n_bounces(self) -> int:
        return self.points.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.monodromy))

    @property
    def marginal(self) -> bool:
        return abs(abs(self.trace) - 2.0) < 1e-8

    @property
    def unstable(self) -> bool:
        return abs(self.trace) > 2.0 + 1e-8

    def segment_directions(self) -> np.ndarray:
        return _chords(self.points)[0]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "params": self.params.tolist(),
            "points": self.points.tolist(),
            "walls": self.walls.tolist(),
            "length": self.length,
            "trace": self.trace,
            "monodromy": self.monodromy.tolist(),
            "nu": int(self.nu),
            "closure_residual": self.closure_residual,
            "angle_residual": self.angle_residual,
            "on_symmetry_line": self.on_symmetry_line,
            "conjugate_points": self.conjugate_points,
        }


def _monodromy(points, normals, curvatures):
    """Transverse monodromy starting just after bounce 0, plus conjugate-point count."""
    u, L = _chords(points)
    M = np.eye(2)
    zeros = 0
    n = points.shape[0]
    for j in range(n):
        i = (j + 1) % n  # flight j arrives at bounce i
        b = M[0, 1]
        e = b + L[j] * M[1, 1]
        if b * e < 0:
            zeros += 1
        M = np.array([[1.0, L[j]], [0.0, 1.0]]) @ M
        cos_phi = abs(u[j] @ normals[i])
        M = np.array([[-1.0, 0.0], [2.0 * curvatures[i] / cos_phi, -1.0]]) @ M
    return M, zeros


def _assemble(geometry: Billiard, bd: Boundary, s, label="", nu=None, on_symmetry_line=False):
    q, tan, nrm, kap, k = bd.evaluate(s)
    u, L = _chords(q)
    u_in = np.roll(u, 1, axis=0)
    # specular check: the reflected incoming direction must equal the outgoing one
    refl = u_in - 2 * np.einsum("ij,ij->i", u_in, nrm)[:, None] * nrm
    angle_res = float(np.max(np.hypot(*(refl - u).T)))
    M, zeros = _monodromy(q, nrm, kap)
    if nu is None:
        nu = q.shape[0] + zeros
    closure = _closure(geometry, q, u, k, nrm) if not on_symmetry_line else angle_res
    return PeriodicOrbit(np.mod(np.asarray(s, float), bd.perimeter), q, nrm, k, kap, float(L.sum()),
                         M, int(nu), closure, angle_res, label, on_symmetry_line, zeros)


def _closure(geometry, q, u, walls, normals) -> float:
    """Re-propagate one period from bounce 0 and measure the return miss."""
    pos = q[0].copy()
    d = u[0].copy()
    last = walls[0]
    worst = 0.0
    n = q.shape[0]
    for j in range(n):
        fb = geometry.flight(pos[None], d[None], np.array([last]))
        pos = fb.hit[0]
        worst = max(worst, float(np.hypot(*(pos - q[(j + 1) % n]))))
        d = d - 2 * (d @ fb.normal[0]) * fb.normal[0]
        last = fb.wall[0]
    return worst


def find_orbit(geometry: Billiard, guess, n_bounces: int | None = None, max_iter: int = 100,
               tol: float = 1e-13, label: str = "", nu: int | None = None) -> PeriodicOrbit:
    """Newton iteration on the stationarity of the chord length.

    ``guess`` holds the boundary arc-length parameters of the bounces.
    Raises OrbitError when Newton stalls or the result is not a billiard orbit.
    """
    bd = Boundary(geometry)
    s = np.asarray(guess, float).copy()
    if n_bounces is not None and s.size != n_bounces:
        raise ValueError("guess length differs from n_bounces")
    if s.size < 2:
        raise ValueError("need at least two bounces")
    step = 1e-6 * geometry.scale
    for it in range(max_iter):
        g = length_gradient(bd, s)
        if np.max(np.abs(g)) < tol:
            break
        n = s.size
        H = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = step
            H[:, j] = (length_gradient(bd, s + e) - length_gradient(bd, s - e)) / (2 * step)
        try:
            ds = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError as exc:
            raise OrbitError("singular Hessian (marginal family?)") from exc
        lim = 0.25 * geometry.scale
        if np.max(np.abs(ds)) > lim:
            ds *= lim / np.max(np.abs(ds))
        s = np.mod(s + ds, bd.perimeter)
    else:
        raise OrbitError(f"Newton did not converge in {max_iter} iterations "
                         f"(|grad|={np.max(np.abs(length_gradient(bd, s))):.2e})")
    _validate(geometry, bd, s)
    return _assemble(geometry, bd, s, label=label, nu=nu)


def _validate(geometry, bd, s):
    q, tan, nrm, kap, k = bd.evaluate(s)
    u, L = _chords(q)
    if np.min(L) < 1e-6 * geometry.scale:
        raise OrbitError("two consecutive bounces coincide")
    if np.min(bd.distance_to_corner(s)) < 1e-7 * geometry.scale:
        raise OrbitError("orbit hits a corner")
    u_in = np.roll(u, 1, axis=0)
    cin = np.einsum("ij,ij->i", u_in, nrm)
    cout = np.einsum("ij,ij->i", u, nrm)
    if np.any(cin <= 1e-9) or np.any(cout >= -1e-9):
        raise OrbitError("segment runs along or outside the boundary")
    mid = 0.5 * (q + np.roll(q, -1, axis=0))
    if not np.all(geometry.contains(mid[:, 0], mid[:, 1])):
        raise OrbitError("chord leaves the domain")


def axial_orbit(geometry) -> PeriodicOrbit:
    """Orbit on the symmetry axis y = 0: left wall to the far end of the arc and back.

    Both bounces are at normal incidence.  It runs along the bottom wall, so
    it is built directly rather than by Newton iteration.
    """
    bd = Boundary(geometry)
    left = next(i for i, w in enumerate(geometry.walls) if isinstance(w, FlatWall) and w.normal == (-1.0, 0.0))
    arc = next(i for i, w in enumerate(geometry.walls) if isinstance(w, ArcWall))
    s = np.array([bd.starts[left] + bd.lengths[left] * (1 - 1e-15), bd.starts[arc]])
    q, tan, nrm, kap, k = bd.evaluate(s)
    q = np.array([[0.0, 0.0], [geometry.ls + geometry.a, 0.0]])
    nrm = np.array([[-1.0, 0.0], [1.0, 0.0]])
    kap = np.array([0.0, 1.0 / geometry.a])
    u, L = _chords(q)
    M, zeros = _monodromy(q, nrm, kap)
    return PeriodicOrbit(s, q, nrm, np.array([left, arc]), kap, float(L.sum()), M, 2 + zeros, 0.0, 0.0,
                         "axial", True, zeros)


def vertical_orbit(geometry, x0: float) -> PeriodicOrbit:
    """Member of the flat-flat bouncing-ball family at x = x0 (0 < x0 < ls)."""
    if not 0 < x0 < geometry.ls:
        raise ValueError("x0 must lie in (0, ls)")
    bd = Boundary(geometry)
    bottom = next(i for i, w in enumerate(geometry.walls)
                  if isinstance(w, FlatWall) and w.normal == (0.0, -1.0) and w.start[0] <= x0 < w.end[0])
    top = next(i for i, w in enumerate(geometry.walls) if isinstance(w, FlatWall) and w.normal == (0.0, 1.0))
    s = np.array([bd.starts[bottom] + x0 - geometry.walls[bottom].start[0],
                  bd.starts[top] + geometry.walls[top].start[0] - x0])
    o = _assemble(geometry, bd, s, label=f"vertical x0={x0:g}")
    # boundary evaluation can leave the two x values one ulp apart
    o.points[:, 0] = x0
    return o


def monodromy(orbit: PeriodicOrbit, geometry: Billiard | None = None):
    """(M, Tr M) of the primitive orbit."""
    return orbit.monodromy, orbit.trace


def chebyshev_trace(tr: float, p: int) -> float:
    """Tr(M^p) for det M = 1 from Tr M: T_p = tr T_{p-1} - T_{p-2}."""
    a, b = 2.0, tr
    if p == 0:
        return a
    for _ in range(p - 1):
        a, b = b, tr * b - a
    return b


def _same_cycle(a: PeriodicOrbit, b: PeriodicOrbit, tol=1e-7) -> bool:
    if a.n_bounces != b.n_bounces or abs(a.length - b.length) > tol:
        return False
    pa, pb = a.points, b.points
    d = np.hypot(pa[:, None, 0] - pb[None, :, 0], pa[:, None, 1] - pb[None, :, 1])
    return bool(np.all(d.min(axis=1) < tol) and np.all(d.min(axis=0) < tol))


def _is_repetition(o: PeriodicOrbit, tol=1e-7) -> bool:
    n = o.n_bounces
    for d in range(1, n):
        if n % d == 0 and np.all(np.hypot(*(o.points - np.roll(o.points, -d, axis=0)).T) < tol):
            return True
    return False


def _arc_param(bd: Boundary, q, walls) -> np.ndarray:
    """Boundary parameter of points known to lie on the given walls."""
    s = np.empty(q.shape[0])
    for i, w in enumerate(bd.walls):
        sel = walls == i
        if not np.any(sel):
            continue
        if isinstance(w, FlatWall):
            a = np.asarray(w.start)
            s[sel] = bd.starts[i] + np.hypot(*(q[sel] - a).T)
        else:
            th = np.arctan2(q[sel, 1] - w.center[1], q[sel, 0] - w.center[0])
            s[sel] = bd.starts[i] + w.radius * (th - w.theta0)
    return s


def near_returns(geometry: Billiard, n_bounces: int, n_rays: int = 20000, keep: int = 40, seed=0,
                 min_chord: float = 0.1, min_cos: float = 0.1):
    """Bounce parameters of rays that nearly close after ``n_bounces`` bounces.

    Rays start on the boundary; closeness is measured in boundary parameter
    plus outgoing direction angle.
    """
    rng = np.random.default_rng(seed)
    bd = Boundary(geometry)
    s0 = rng.uniform(0, bd.perimeter, n_rays)
    q, tan, nrm, _, k = bd.evaluate(s0)
    ang = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, n_rays)
    # inward direction rotated from the inner normal by ang
    inn = -nrm
    d = np.cos(ang)[:, None] * inn + np.sin(ang)[:, None] * tan
    d0 = d.copy()
    params = [s0]
    pos, last = q.copy(), k.copy()
    ok = np.ones(n_rays, bool)
    for _ in range(n_bounces):
        fb = geometry.flight(pos, d, last)
        # skip grazing arc-sliding rays and very short chords
        cos_in = np.abs(np.einsum("ij,ij->i", d, fb.normal))
        ok &= ~fb.degenerate & (fb.tau > min_chord * geometry.scale) & (cos_in > min_cos)
        pos = fb.hit
        d = d - 2 * np.einsum("ij,ij->i", d, fb.normal)[:, None] * fb.normal
        last = fb.wall
        params.append(_arc_param(bd, pos, fb.wall))
    ds = np.abs(params[-1] - s0)
    ds = np.minimum(ds, bd.perimeter - ds)
    dd = np.hypot(*(d - d0).T)
    score = np.where(ok, ds + dd, np.inf)
    best = np.argsort(score)[:keep]
    return [np.array([p[i] for p in params[:-1]]) for i in best if np.isfinite(score[i])]


def search_orbits(geometry: Billiard, n_bounces=(3, 4, 5, 6, 7, 8), n_rays: int = 20000, keep: int = 60,
                  seed=0, max_length: float | None = None) -> list:
    """Primitive unstable orbits by Newton refinement of near-returns, sorted by length."""
    found = []
    for n in n_bounces:
        for guess in near_returns(geometry, n, n_rays, keep, seed=(seed, n)):
            try:
                # Newton from a good seed converges in a handful of steps
                o = find_orbit(geometry, guess, n, max_iter=25)
            except OrbitError:
                continue
            if not o.unstable or _is_repetition(o) or o.closure_residual > 1e-10 * geometry.scale:
                continue
            if max_length is not None and o.length > max_length:
                continue
            if any(_same_cycle(o, f) for f in found):
                continue
            found.append(o)
    found.sort(key=lambda o: (o.length, o.n_bounces))
    for i, o in enumerate(found):
        o.label = o.label or f"po{i}_{o.n_bounces}b"
    return found


def orbit_library(geometry, n_orbits: int = 8, seed=0) -> list:
    """Axial orbit plus the shortest primitive unstable orbits of a seeded search."""
    lib = [axial_orbit(geometry)]
    for o in search_orbits(geometry, seed=seed):
        if len(lib) >= n_orbits:
            break
        lib.append(o)
    return lib


def save_library(orbits, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump([o.to_dict() for o in orbits], fh, indent=2)
        fh.write("\n")
    return path


def load_library(geometry, path, nu_override: dict | None = None) -> list:
    """Rebuild orbits from stored boundary parameters (monodromy is recomputed)."""
    bd = Boundary(geometry)
    nu_override = nu_override or {}
    out = []
    with open(path) as fh:
        items = json.load(fh)
    for d in items:
        if d.get("on_symmetry_line") and d["label"] == "axial":
            o = axial_orbit(geometry)
        else:
            o = _assemble(geometry, bd, np.array(d["params"]), label=d["label"])
        o.nu = int(nu_override.get(o.label, d.get("nu", o.nu)))
        out.append(o)
    return out


# -- orbit correlation ------------------------------------------------------------

@dataclass
class OrbitCorrelation:
    orbit: PeriodicOrbit
    t: np.ndarray
    values: np.ndarray
    pmag: float
    m: float


def _orbit_x(orbit: PeriodicOrbit, l):
    """X coordinate and direction x-component at arc length l along the loop."""
    u, L = _chords(orbit.points)
    edges = np.concatenate([[0.0], np.cumsum(L)])
    l = np.mod(l, edges[-1])
    j = np.clip(np.searchsorted(edges, l, side="right") - 1, 0, L.size - 1)
    x = orbit.points[j, 0] + (l - edges[j]) * u[j, 0]
    return x, u[j, 0]


def _profile(orbit: PeriodicOrbit, shift: float, n_nodes: int) -> float:
    """int_0^L u_x(l)^2 X(l + shift)^2 dl by corrected trapezoid, nodes aligned to every kink."""
    u, L = _chords(orbit.points)
    total = float(L.sum())
    edges = np.concatenate([[0.0], np.cumsum(L)])
    kinks = np.unique(np.concatenate([edges, np.mod(edges - shift, total), [total]]))
    kinks = kinks[(kinks >= 0) & (kinks <= total)]
    acc = 0.0
    for lo, hi in zip(kinks[:-1], kinks[1:]):
        if hi - lo <= 0:
            continue
        k = max(2, int(np.ceil(n_nodes * (hi - lo) / total)) + 1)
        l = np.linspace(lo, hi, k)
        # u_x is constant on the piece; X is continuous across bounces
        mid = np.array([0.5 * (lo + hi)])
        _, ux = _orbit_x(orbit, mid)
        _, vx = _orbit_x(orbit, mid + shift)
        x, _ = _orbit_x(orbit, l + shift)
        f = ux[0] ** 2 * x**2
        # Euler-Maclaurin end correction; exact because f is quadratic on the piece
        df = 2 * ux[0] ** 2 * vx[0] * (x[-1] - x[0])
        acc += _trapezoid(f, l) - (l[1] - l[0]) ** 2 / 12 * df
    return acc


def c_gamma(orbit: PeriodicOrbit, t_grid, pmag: float, m: float = 0.5,
            n_nodes: int = 1024) -> OrbitCorrelation:
    """c_gamma(t) = int_0^L P_X(l)^2 X(l; t)^2 dl along the orbit at speed |p| / m."""
    if n_nodes < 1024:
        raise ValueError("use at least 1024 nodes")
    t_grid = np.atleast_1d(np.asarray(t_grid, float))
    v = pmag / m
    vals = np.array([pmag**2 * _profile(orbit, np.mod(v * t, orbit.length), n_nodes) for t in t_grid])
    return OrbitCorrelation(orbit, t_grid, vals, pmag, m)


# -- trace-formula correction ------------------------------------------------

@dataclass
class _ShiftTable:
    """Periodic table of the momentum-free profile g(s), s in [0, L)."""

    s: np.ndarray
    g: np.ndarray
    L: float

    def __call__(self, shift):
        return np.interp(np.mod(shift, self.L), self.s, self.g, period=self.L)


def _shift_table(orbit, n=2048):
    s = np.linspace(0.0, orbit.length, n, endpoint=False)
    g = np.array([_profile(orbit, x, 1024) for x in s])
    return _ShiftTable(s, g, orbit.length)


def po_orbit_term(orbit: PeriodicOrbit, p_max: int, beta: float, t_grid, units: UnitSystem,
                  table: _ShiftTable | None = None, n_k: int | None = None) -> np.ndarray:
    """Contribution of one orbit and its repetitions up to ``p_max``."""
    if not orbit.unstable:
        raise ValueError(f"orbit {orbit.label!r} is marginal or stable (|Tr M| = {abs(orbit.trace):.6g})")
    hb, m = units.hbar, units.m
    table = table or _shift_table(orbit)
    kmax = np.sqrt(2 * m * 40.0 / beta) / hb
    # resolve the fastest cosine with ~30 nodes per period
    n_k = n_k or int(max(400, 30 * kmax * p_max * orbit.length / (2 * np.pi)))
    x, w = np.polynomial.legendre.leggauss(min(n_k, 4000)) if n_k <= 4000 else _composite_gl(n_k)
    k = 0.5 * kmax * (x + 1)
    wk = 0.5 * kmax * w
    eps = (hb * k) ** 2 / (2 * m)
    jac = hb**2 * k / m  # d eps / d k
    amp = np.zeros(k.size)
    for p in range(1, p_max + 1):
        trp = chebyshev_trace(orbit.trace, p)
        amp += np.cos(p * k * orbit.length - p * np.pi * orbit.nu / 2) / np.sqrt(abs(trp - 2))
    base = wk * jac * np.exp(-beta * eps) * amp * (hb * k) ** 2
    pref = 2.0 / (2 * np.pi * hb) ** 2
    t_grid = np.atleast_1d(np.asarray(t_grid, float))
    out = np.empty(t_grid.size)
    for i, t in enumerate(t_grid):
        out[i] = pref * np.sum(base * table(hb * k * t / m))
    return out


def _composite_gl(n):
    """Composite 20-point Gauss-Legendre rule on [-1, 1] with about n nodes."""
    x0, w0 = np.polynomial.legendre.leggauss(20)
    panels = max(1, n // 20)
    e = np.linspace(-1, 1, panels + 1)
    h = np.diff(e) / 2
    x = (e[:-1, None] + h[:, None] * (x0[None] + 1)).ravel()
    w = (h[:, None] * w0[None]).ravel()
    return x, w


def po_correction(orbits, p_max: int, beta: float, t_grid, units: UnitSystem = UnitSystem()) -> OtocSeries:
    """Truncated periodic-orbit correction to O^(3), additive to the classical term."""
    t_grid = np.atleast_1d(np.asarray(t_grid, float))
    for o in orbits:
        if not o.unstable:
            raise ValueError(f"orbit {o.label!r} is marginal (|Tr M| = {abs(o.trace):.6g}); "
                             "bouncing-ball families are excluded from the sum")
    total = np.zeros(t_grid.size)
    for o in orbits:
        total = total + po_orbit_term(o, p_max, beta, t_grid, units)
    vt = np.sqrt(1.0 / (beta * units.m))
    meta = {"quantity": "O3_periodic_orbit_correction", "beta": beta, "p_max": p_max,
            "orbits": [o.label for o in orbits], "nu": [o.nu for o in orbits],
            "m": units.m, "hbar": units.hbar}
    return OtocSeries(t_grid, vt * t_grid, total, None, meta)


def cos_factor(orbit: PeriodicOrbit, k, p: int = 1) -> np.ndarray:
    """k-resolved oscillating factor of a single repetition."""
    return np.cos(p * np.asarray(k) * orbit.length - p * np.pi * orbit.nu / 2)
