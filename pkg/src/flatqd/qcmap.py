"""Quasiconformal comparison of flat structures.

Quasisymmetry estimation for boundary correspondences, Beurling-Ahlfors
extension to the upper half-plane, dilatation measurement (pointwise fields,
piecewise-affine triangle maps, marked-point shears), and assembly of a
global quasiconformal map between two close sphere differentials with an
upper-bound estimate for their Teichmueller distance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.spatial import Delaunay as _PlaneDelaunay

from .qdiff import (
    INF,
    QDError,
    RationalQD,
    evaluate as qd_evaluate,
    mobius_normalize,
)
from .periods import Contour, period_detailed
from .surfaces import (
    HalfTranslationSurface,
    NRRP,
    RightPolygonSpec,
    Triangulation,
    double_nrrp,
    nrrp_system,
    triangulate,
)

__all__ = [
    "BoundaryMap",
    "BAExtension",
    "DilatationField",
    "DilatationReport",
    "Region",
    "SamplePlan",
    "ShearMap",
    "UniformizedDisk",
    "assemble_qc_map",
    "beurling_ahlfors",
    "boundary_correspondence",
    "default_sample_plan",
    "dilatation_field",
    "marked_point_shear",
    "pl_map_dilatation",
    "quasisymmetry_constant",
    "uniformized_double",
]


# ============================================================
# boundary maps
# ============================================================

class BoundaryMap:
    """Sampled orientation-preserving self-map of the real line.

    Holds strictly increasing sample pairs (x_k, h(x_k)) and evaluates by
    monotone cubic (PCHIP) interpolation, so the interpolant is increasing
    wherever the samples are.  Maps produced by `boundary_correspondence`
    additionally fix 0 and 1 (two of the three pinned corners; the third
    pinned correspondence is at infinity, outside any sample window)."""

    def __init__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 4:
            raise QDError("boundary map needs two matching 1-d sample arrays "
                          "with at least 4 points")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise QDError("boundary map samples must be finite")
        if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
            raise QDError("boundary map samples must be strictly increasing")
        self.x = x
        self.y = y
        self._interp = PchipInterpolator(x, y, extrapolate=False)
        # exact integrals of the interpolant; the extension formulas only
        # ever need the antiderivative
        self._anti = self._interp.antiderivative()

    @property
    def window(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])

    def _require(self, t):
        lo, hi = self.window
        if np.any(t < lo) or np.any(t > hi):
            raise QDError(
                f"evaluation outside the sampled boundary range "
                f"[{lo:.6g}, {hi:.6g}]"
            )

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        self._require(t)
        out = self._interp(t)
        return float(out) if out.ndim == 0 else out

    def integral(self, a, b):
        """Integral of the map from a to b, exact on the interpolant."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        self._require(a)
        self._require(b)
        out = self._anti(b) - self._anti(a)
        return float(out) if out.ndim == 0 else out

    @classmethod
    def identity(cls, lo=-4.0, hi=5.0, n=257) -> "BoundaryMap":
        xs = np.linspace(float(lo), float(hi), int(n))
        return cls(xs, xs.copy())

    @classmethod
    def from_function(cls, fn, lo, hi, n=1025) -> "BoundaryMap":
        xs = np.linspace(float(lo), float(hi), int(n))
        ys = np.asarray([float(fn(x)) for x in xs])
        return cls(xs, ys)


@dataclass(frozen=True)
class SamplePlan:
    """Probe grid for quasisymmetry estimation: base points and offsets."""

    xs: tuple[float, ...]
    ts: tuple[float, ...]


def default_sample_plan(h: BoundaryMap, nx: int = 41, nt: int = 25) -> SamplePlan:
    lo, hi = h.window
    span = hi - lo
    xs = np.linspace(lo + span / 8, hi - span / 8, nx)
    ts = np.geomspace(span * 1e-4, span * 3 / 8, nt)
    return SamplePlan(tuple(float(v) for v in xs), tuple(float(v) for v in ts))


def quasisymmetry_constant(h: BoundaryMap, plan: SamplePlan | None = None) -> float:
    """Sampled lower bound for the quasisymmetry constant of h.

    Evaluates max(ratio, 1/ratio) of the symmetric difference quotients
    (h(x+t) - h(x)) / (h(x) - h(x-t)) over the plan's (x, t) grid,
    restricted to probes that stay inside the sample window.  The true
    constant is a supremum over all probes, so this underestimates it."""
    if plan is None:
        plan = default_sample_plan(h)
    lo, hi = h.window
    rho = 1.0
    for t in plan.ts:
        if t <= 0:
            raise QDError("probe offsets must be positive")
        xs = np.asarray([x for x in plan.xs if x - t >= lo and x + t <= hi])
        if xs.size == 0:
            continue
        num = h(xs + t) - h(xs)
        den = h(xs) - h(xs - t)
        if np.any(num <= 0) or np.any(den <= 0):
            k = int(np.argmax((num <= 0) | (den <= 0)))
            raise QDError(f"nonmonotone samples near x = {xs[k]:.6g}")
        ratio = num / den
        rho = max(rho, float(np.max(ratio)), float(np.max(1.0 / ratio)))
    return rho


# ============================================================
# Beurling-Ahlfors extension
# ============================================================

@dataclass(frozen=True)
class BAExtension:
    """The parameter-r extension of a boundary map to the upper half-plane:
    the averages of h over [x, x+y] and over [x-y, x] give the real part,
    and r/2 times their difference the imaginary part.  Both averages are
    computed exactly on the monotone cubic interpolant through its
    antiderivative, not by quadrature."""

    boundary: BoundaryMap
    r: float

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        x, y = z.real, z.imag
        if np.any(y <= 0):
            raise QDError("the extension is defined on the open upper half-plane")
        self.boundary._require(x - y)
        self.boundary._require(x + y)
        A = self.boundary._anti
        up = A(x + y) - A(x)       # y * mean of h over [x, x+y]
        dn = A(x) - A(x - y)       # y * mean of h over [x-y, x]
        out = 0.5 * (up + dn) / y + 0.5j * self.r * (up - dn) / y
        return complex(out) if out.ndim == 0 else out


def beurling_ahlfors(h: BoundaryMap, r: float = 2.0) -> BAExtension:
    if not r > 0:
        raise QDError("extension parameter r must be positive")
    return BAExtension(h, float(r))


# ============================================================
# dilatation measurement
# ============================================================

@dataclass(frozen=True)
class DilatationField:
    points: np.ndarray
    values: np.ndarray
    max_dilatation: float
    argmax: complex
    step: float


def dilatation_field(f, points, step: float) -> DilatationField:
    """Pointwise dilatation K = (|f_z| + |f_zbar|) / (|f_z| - |f_zbar|) on a
    set of sample points, with the Wirtinger derivatives taken by central
    differences of size `step`.  f must accept complex arrays."""
    z = np.asarray(points, dtype=complex).ravel()
    if z.size == 0:
        raise QDError("dilatation probe needs at least one point")
    s = float(step)
    if not s > 0:
        raise QDError("finite-difference step must be positive")
    fx = (np.asarray(f(z + s)) - np.asarray(f(z - s))) / (2 * s)
    fy = (np.asarray(f(z + 1j * s)) - np.asarray(f(z - 1j * s))) / (2 * s)
    fz = (fx - 1j * fy) / 2
    fzb = (fx + 1j * fy) / 2
    az = np.abs(fz)
    azb = np.abs(fzb)
    bad = az <= azb
    if np.any(bad):
        k = int(np.argmax(bad))
        raise QDError(
            f"orientation failure at z = {complex(z[k]):.6g}: "
            f"|f_z| = {az[k]:.3g} <= |f_zbar| = {azb[k]:.3g}"
        )
    K = (az + azb) / (az - azb)
    k = int(np.argmax(K))
    return DilatationField(z, K, float(K[k]), complex(z[k]), s)


def _tri_affine_dilatation(p, q) -> float:
    u1, u2 = p[1] - p[0], p[2] - p[0]
    v1, v2 = q[1] - q[0], q[2] - q[0]
    U = np.array([[u1.real, u2.real], [u1.imag, u2.imag]])
    V = np.array([[v1.real, v2.real], [v1.imag, v2.imag]])
    dU = float(np.linalg.det(U))
    dV = float(np.linalg.det(V))
    scale = max(abs(u1), abs(u2), abs(v1), abs(v2), 1e-300) ** 2
    if abs(dU) < 1e-14 * scale or abs(dV) < 1e-14 * scale:
        raise QDError(f"degenerate triangle (zero area) near {complex(p[0]):.6g}")
    if dU * dV < 0:
        raise QDError("triangle correspondence reverses orientation")
    L = V @ np.linalg.inv(U)
    sv = np.linalg.svd(L, compute_uv=False)
    return float(sv[0] / sv[1])


def pl_map_dilatation(src, dst, correspondence=None):
    """Per-triangle dilatation of the piecewise-affine map sending each
    source triangle to its corresponding target triangle.

    src/dst are either two Triangulations with matching combinatorics (faces
    paired by index, or through an explicit index `correspondence` into the
    target), or two sequences of vertex triples.  Returns the per-triangle
    array and its max."""
    pairs = []
    if isinstance(src, Triangulation) and isinstance(dst, Triangulation):
        fs, fd = src.faces(), dst.faces()
        if len(fs) != len(fd):
            raise QDError("combinatorics mismatch: triangle counts differ")
        order = list(correspondence) if correspondence is not None else list(range(len(fs)))
        for i, j in zip(range(len(fs)), order):
            a = fs[i]
            b = fd[j]
            p = (0j, complex(src.vec[a[0]]),
                 complex(src.vec[a[0]]) + complex(src.vec[a[1]]))
            q = (0j, complex(dst.vec[b[0]]),
                 complex(dst.vec[b[0]]) + complex(dst.vec[b[1]]))
            pairs.append((p, q))
    else:
        s = [tuple(complex(v) for v in t) for t in src]
        d = [tuple(complex(v) for v in t) for t in dst]
        if correspondence is not None:
            d = [d[j] for j in correspondence]
        if len(s) != len(d):
            raise QDError("combinatorics mismatch: triangle counts differ")
        pairs = list(zip(s, d))
    if not pairs:
        raise QDError("no triangles to compare")
    Ks = np.array([_tri_affine_dilatation(p, q) for p, q in pairs])
    return Ks, float(np.max(Ks))


@dataclass(frozen=True)
class ShearMap:
    """The real-linear self-map of the plane fixing the real axis pointwise:
    x + iy maps to x + y*coefficient.  Orientation-preserving exactly when
    the coefficient has positive imaginary part."""

    coefficient: complex
    dilatation: float

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = z.real + z.imag * complex(self.coefficient)
        return complex(out) if out.ndim == 0 else out


def marked_point_shear(target: complex, source: complex) -> ShearMap:
    """The unique real-linear map fixing the real line pointwise and sending
    `source` to `target`; both must lie in the open upper half-plane."""
    target = complex(target)
    source = complex(source)
    if source.imag <= 0 or target.imag <= 0:
        raise QDError("shear endpoints must lie in the open upper half-plane")
    w = (target - source.real) / source.imag
    # f = x + y w has Wirtinger derivatives (1 -+ i w)/2
    fz = abs(1 - 1j * w) / 2
    fzb = abs(1 + 1j * w) / 2
    return ShearMap(w, float((fz + fzb) / (fz - fzb)))


# ============================================================
# uniformized doubles and boundary correspondences
# ============================================================

@dataclass(frozen=True)
class UniformizedDisk:
    """A doubled right polygon moved so that corner 0 sits at 0, corner 1 at
    1, and the last corner at infinity.  `corners` lists the finite corner
    positions in boundary order; the polygon boundary consists of the
    segments between consecutive finite corners plus the two rays through
    the corner at infinity.  `side_lengths` are the singular-metric side
    lengths in the same order (last entry = the closing side)."""

    differential: RationalQD
    corners: tuple[float, ...]
    interior: tuple[complex, ...]
    side_lengths: tuple[float, ...]


def uniformized_double(double_result) -> UniformizedDisk:
    n = len(double_result.corners)
    q = double_result.differential
    lengths = tuple(float(v) for v in double_result.side_lengths)
    if n < 3:
        # a two-corner double is a four-pole sphere already carrying its
        # corners at 0 and 1; infinity stays a regular boundary point
        recs = q.singularities
        corners = tuple(float(np.real(recs[k].location)) for k in range(n))
        interior = tuple(
            complex(r.location) for r in recs[n:]
            if complex(r.location).imag > 0
        )
        return UniformizedDisk(q, corners, interior, lengths)
    qn = mobius_normalize(q, (0, 1, n - 1), (0.0, 1.0, INF))
    recs = qn.singularities
    fin = n - 1
    corners = [float(complex(recs[k].location).real) for k in range(fin)]
    if any(b - a <= 0 for a, b in zip(corners, corners[1:])):
        raise QDError("normalization scrambled the corner order")
    interior = tuple(
        complex(r.location) for r in recs[fin:]
        if complex(r.location).imag > 0
    )
    return UniformizedDisk(qn, tuple(corners), interior, lengths)


def _density(q, x):
    """sqrt|Q| along the real axis."""
    vals = np.asarray([qd_evaluate(q, complex(v)) for v in np.atleast_1d(x)])
    return np.sqrt(np.abs(vals))


_GL2_OFF = 0.5 / math.sqrt(3.0)


def _monotone_inverse(cum, pos, targets):
    """Positions at the given cumulative-length targets, by monotone-cubic
    inversion of the (cum, pos) table.  Linear inversion is not enough: the
    inverse curve stiffens wherever the density decays (far ray tails), and
    its secant error there dominates every other error in the boundary
    correspondence.  Targets are clamped to the sampled range."""
    cum = np.asarray(cum)
    pos = np.asarray(pos)
    keep = np.concatenate([[True], np.diff(cum) > 0])
    return PchipInterpolator(cum[keep], pos[keep])(
        np.clip(targets, cum[keep][0], cum[keep][-1])
    )


def _cum_gl2(integrand, u):
    """Cumulative integral of `integrand` over the grid `u` by composite
    two-point Gauss-Legendre.  Far-tail boundary matching divides these
    cumulatives by a vanishing density, so midpoint-rule accuracy is not
    enough there."""
    du = np.diff(u)
    um = (u[:-1] + u[1:]) / 2
    lo = um - _GL2_OFF * du
    hi = um + _GL2_OFF * du
    w = 0.5 * (integrand(lo) + integrand(hi)) * du
    return np.concatenate([[0.0], np.cumsum(w)])


def _finite_side_table(q, a, b, nper):
    """Cumulative singular length along [a, b], graded so the inverse-sqrt
    blowup at both endpoint corners is resolved.  Returns (positions,
    cumulative), both of size nper+1, cumulative starting at 0."""
    u = np.linspace(0.0, 1.0, nper + 1)
    pos = a + (b - a) * np.sin(np.pi * u / 2) ** 2

    def integrand(uu):
        zz = a + (b - a) * np.sin(np.pi * uu / 2) ** 2
        dz = (b - a) * (np.pi / 2) * np.sin(np.pi * uu)
        return _density(q, zz) * dz

    return pos, _cum_gl2(integrand, u)


def _ray_side_table(q, a, direction, reach, nper):
    """Cumulative singular length along the ray leaving corner a toward
    +infinity (direction +1) or -infinity (direction -1), truncated at
    coordinate distance `reach` from the corner.  The substitution grades
    both the corner-pole blowup and the quartic decay toward infinity.
    Positions are ordered away from the corner."""
    L = max(1.0, abs(a) / 2, reach / 8)
    w_max = reach / (reach + L)
    u_max = (2 / np.pi) * np.arcsin(np.sqrt(w_max))
    u = np.linspace(0.0, u_max, nper + 1)
    wv = np.sin(np.pi * u / 2) ** 2
    pos = a + direction * L * wv / (1 - wv)

    def integrand(uu):
        wm = np.sin(np.pi * uu / 2) ** 2
        zm = a + direction * L * wm / (1 - wm)
        dz = L * (np.pi / 2) * np.sin(np.pi * uu) / (1 - wm) ** 2
        return _density(q, zm) * dz

    return pos, _cum_gl2(integrand, u)


def _matched_ray(q1, q2, c1, c2, direction, T1, T2, reach, nper):
    """Sample the affine-in-arc-length correspondence along a pair of rays:
    the point at cumulative length s from the first corner goes to the point
    at cumulative length s*T2/T1 from the second, T being the solved side
    lengths.  The target table is extended until it covers the needed range
    (the far tail converges, so a few doublings always suffice)."""
    p1, lens1 = _ray_side_table(q1, c1, direction, reach, nper)
    need = lens1 * (T2 / T1)
    reach2 = reach
    p2, lens2 = _ray_side_table(q2, c2, direction, reach2, nper)
    for _ in range(8):
        if lens2[-1] >= need[-1]:
            break
        reach2 *= 2
        p2, lens2 = _ray_side_table(q2, c2, direction, reach2, nper)
    return p1, _monotone_inverse(lens2, p2, need)


def boundary_correspondence(
    d1: UniformizedDisk,
    d2: UniformizedDisk,
    samples_per_side: int = 384,
    coverage: float | None = None,
) -> BoundaryMap:
    """The boundary map between two uniformized doubles: corners go to
    corners and each pair of corresponding sides is identified affinely in
    singular arc length (equal normalized length integrals), sampled at
    `samples_per_side` points per side and monotone-cubic interpolated.

    `coverage` sets how far the two unbounded sides are sampled: the window
    extends at least `coverage` beyond the finite corners on both ends."""
    if len(d1.corners) != len(d2.corners):
        raise QDError("combinatorics mismatch: corner counts differ")
    if len(d1.side_lengths) != len(d2.side_lengths):
        raise QDError("combinatorics mismatch: side counts differ")
    nper = max(int(samples_per_side), 256)
    n = len(d1.side_lengths)
    cs1, cs2 = d1.corners, d2.corners
    q1, q2 = d1.differential, d2.differential
    if coverage is None:
        coverage = 2.0 * max(1.0, cs1[-1], cs2[-1])

    pieces = []
    if n == 2:
        # bigon: one finite side [0, 1] and a closing side wrapping through
        # infinity; each wrap half is matched by its own truncated fractions,
        # which pins the point at infinity and matches corners exactly
        lp1, ll1 = _ray_side_table(q1, 0.0, -1, coverage, nper)
        lp2, ll2 = _ray_side_table(q2, 0.0, -1, coverage, nper)
        yl = _monotone_inverse(ll2 / ll2[-1], lp2, ll1 / ll1[-1])
        pieces.append((lp1[::-1], yl[::-1]))
        sp1, sl1 = _finite_side_table(q1, 0.0, 1.0, nper)
        sp2, sl2 = _finite_side_table(q2, 0.0, 1.0, nper)
        pieces.append((sp1, _monotone_inverse(sl2 / sl2[-1], sp2, sl1 / sl1[-1])))
        rp1, rl1 = _ray_side_table(q1, 1.0, +1, coverage, nper)
        rp2, rl2 = _ray_side_table(q2, 1.0, +1, coverage, nper)
        pieces.append((rp1, _monotone_inverse(rl2 / rl2[-1], rp2, rl1 / rl1[-1])))
    else:
        # closing side, traversed away from corner 0 toward -infinity
        px, py = _matched_ray(q1, q2, 0.0, 0.0, -1,
                              d1.side_lengths[-1], d2.side_lengths[-1],
                              coverage, nper)
        pieces.append((px[::-1], py[::-1]))
        for j in range(n - 2):
            p1, c1 = _finite_side_table(q1, cs1[j], cs1[j + 1], nper)
            p2, c2 = _finite_side_table(q2, cs2[j], cs2[j + 1], nper)
            pieces.append((p1, _monotone_inverse(c2 / c2[-1], p2, c1 / c1[-1])))
        px, py = _matched_ray(q1, q2, cs1[-1], cs2[-1], +1,
                              d1.side_lengths[n - 2], d2.side_lengths[n - 2],
                              coverage, nper)
        pieces.append((px, py))

    xs: list[float] = []
    ys: list[float] = []
    for px, py in pieces:
        if xs and abs(px[0] - xs[-1]) < 1e-12 * max(1.0, abs(px[0])):
            px, py = px[1:], py[1:]
        xs.extend(px)
        ys.extend(py)
    ax = np.asarray(xs)
    ay = np.asarray(ys)
    # interp clamping at a truncated far tail can produce flat ties at the
    # outermost samples; drop those rather than fail monotonicity validation
    keep = np.concatenate([[True], (np.diff(ax) > 0) & (np.diff(ay) > 0)])
    h = BoundaryMap(ax[keep], ay[keep])
    for c in (0.0, 1.0):
        if abs(h(c) - c) > 1e-9:
            raise QDError("boundary correspondence failed to pin a corner")
    return h


# ============================================================
# assembled map and report
# ============================================================

@dataclass(frozen=True)
class Region:
    id: str
    kind: str
    dilatation: float
    note: str = ""


@dataclass(frozen=True)
class DilatationReport:
    max_dilatation: float
    regions: tuple[Region, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.max_dilatation >= 1.0 - 1e-12:
            raise QDError("dilatation bound below 1")

    @property
    def teich_bound(self) -> float:
        return 0.5 * math.log(max(self.max_dilatation, 1.0))

    def to_json_dict(self) -> dict:
        return {
            "K_total": self.max_dilatation,
            "teich_bound": self.teich_bound,
            "regions": [
                {"id": r.id, "kind": r.kind, "K": r.dilatation}
                for r in self.regions
            ],
            **dict(self.meta),
        }


def _as_rational(x):
    return x.to_rational() if hasattr(x, "to_rational") else x


def _identical_differentials(a: RationalQD, b: RationalQD) -> bool:
    if complex(a.scale) != complex(b.scale):
        return False
    if len(a.singularities) != len(b.singularities):
        return False
    return all(r1 == r2 for r1, r2 in zip(a.singularities, b.singularities))


def _identical_surfaces(a: Triangulation, b: Triangulation) -> bool:
    return (
        a.vec.shape == b.vec.shape
        and np.array_equal(a.twin, b.twin)
        and np.array_equal(a.nxt, b.nxt)
        and np.array_equal(a.vec, b.vec)
    )


def _members_of(q: RationalQD, poly: NRRP) -> tuple[int, ...]:
    finite = [s for s in q.singularities if s.location is not INF]
    out = []
    for rec in poly.interior:
        for i, s in enumerate(finite):
            if s.location == rec.location and s.order == rec.order:
                out.append(i)
                break
        else:
            raise QDError("polygon interior does not match the differential")
    return tuple(sorted(out))


def _point_in_hull(z: complex, corners) -> bool:
    pts = list(corners)
    tot = 0.0
    for i in range(len(pts)):
        a, b = pts[i], pts[(i + 1) % len(pts)]
        tot += a.real * b.imag - b.real * a.imag
    sgn = 1.0 if tot > 0 else -1.0
    for i in range(len(pts)):
        a, b = pts[i], pts[(i + 1) % len(pts)]
        cr = (b - a).real * (z - a).imag - (b - a).imag * (z - a).real
        if sgn * cr < 0:
            return False
    return True


def _pl_complement(polys1, polys2) -> list[Region]:
    """Piecewise-affine comparison of the polygon complements: a plane
    triangulation of all polygon corners plus a fixed far-field frame, with
    triangles interior to a polygon skipped (those are covered by the
    polygon's own map)."""
    pts1: list[complex] = []
    pts2: list[complex] = []
    owner: list[int] = []
    for i, (p1, p2) in enumerate(zip(polys1, polys2)):
        if len(p1.corners) != len(p2.corners):
            raise QDError("combinatorics mismatch: polygon corner counts differ")
        pts1.extend(complex(c) for c in p1.corners)
        pts2.extend(complex(c) for c in p2.corners)
        owner.extend([i] * len(p1.corners))
    if not pts1:
        raise QDError("no polygon corners to triangulate")
    ctr = sum(pts1) / len(pts1)
    R = 2.5 * max(abs(p - ctr) for p in pts1) + 1.0
    frame = [ctr + R * (dx + 1j * dy) for dx in (-1, 1) for dy in (-1, 1)]
    pts1 = pts1 + frame
    pts2 = pts2 + frame          # far field held fixed
    owner = owner + [-1] * 4
    mesh = _PlaneDelaunay(np.array([[z.real, z.imag] for z in pts1]))
    regions = []
    for t, simplex in enumerate(mesh.simplices):
        i, j, k = (int(v) for v in simplex)
        own = {owner[i], owner[j], owner[k]}
        if len(own) == 1 and -1 not in own:
            pid = own.pop()
            centroid = (pts1[i] + pts1[j] + pts1[k]) / 3
            if _point_in_hull(centroid, polys1[pid].corners):
                continue
        K = _tri_affine_dilatation(
            (pts1[i], pts1[j], pts1[k]), (pts2[i], pts2[j], pts2[k])
        )
        regions.append(Region(f"pl:{t}", "pl", K))
    return regions


def _rectangle_region(rid, p1: NRRP, p2: NRRP) -> list[Region]:
    """Exact affine comparison for polygons whose doubles are flat
    rectangles: a bigon around a pole, or a four-sided polygon around a
    marked point.  The affine map stretches the two side classes
    independently, so its dilatation is the mismatch of side-class ratios."""
    a1 = sum(ln for lab, ln in p1.sides if lab == "v")
    b1 = sum(ln for lab, ln in p1.sides if lab == "h")
    a2 = sum(ln for lab, ln in p2.sides if lab == "v")
    b2 = sum(ln for lab, ln in p2.sides if lab == "h")
    sigma = (a2 / a1) / (b2 / b1)
    K = max(sigma, 1.0 / sigma)
    note = "pole bigon" if len(p1.sides) == 2 else "marked-point rectangle"
    return [Region(rid, "nrrp", float(K), note)]


def _coalesced_spec(p: NRRP) -> RightPolygonSpec:
    """Replace the interior singularities by a single one of the total
    order.  The side count already pins the total order, so the coalesced
    polygon is solvable from side lengths alone; intra-group structure is
    compared separately through internal periods."""
    m = sum(rec.order for rec in p.interior)
    return RightPolygonSpec(sides=p.sides, interior_orders=(m,))


def _uhp_probe_points(d1: UniformizedDisk, d2: UniformizedDisk,
                      shape, fd_step) -> np.ndarray:
    hi = max(d1.corners[-1], d2.corners[-1], 1.0)
    span = hi + 1.0
    nx, ny = shape
    xs = np.linspace(-0.4 * span, hi + 0.4 * span, nx)
    ys = np.geomspace(max(4 * fd_step, 0.01 * span), 1.2 * span, ny)
    X, Y = np.meshgrid(xs, ys)
    pts = (X + 1j * Y).ravel()
    # dilatation is sampled off a small neighborhood of the singular set:
    # corners on the axis and interior singularities of either disk
    excl = [complex(c) for c in d1.corners + d2.corners]
    excl += [complex(w) for w in d1.interior + d2.interior]
    guard = max(2.5 * fd_step, 0.02 * span)
    keep = np.ones(pts.shape, dtype=bool)
    for c in excl:
        keep &= np.abs(pts - c) > guard
    return pts[keep]


def _internal_period_correction(q1, q2, members) -> tuple[float, tuple | None]:
    """Dilatation cost of matching the interior configuration of a polygon:
    for each consecutive pair of enclosed singularities, the internal period
    mismatch raised to the inverse collision exponent 2/(2+m) of the pair.
    That is the factor by which the local uniformizing chart is stretched."""
    finite1 = [s for s in q1.singularities if s.location is not INF]
    finite2 = [s for s in q2.singularities if s.location is not INF]
    K_int = 1.0
    worst = None
    for a, b in zip(members, members[1:]):
        cont1 = Contour(
            (complex(finite1[a].location), complex(finite1[b].location)),
            endpoint_singular=(True, True),
        )
        cont2 = Contour(
            (complex(finite2[a].location), complex(finite2[b].location)),
            endpoint_singular=(True, True),
        )
        P1 = period_detailed(q1, cont1).value
        P2 = period_detailed(q2, cont2).value
        if P1 == 0:
            raise QDError("vanishing internal period inside a polygon")
        ratio = P2 / P1
        if ratio.real < 0:
            ratio = -ratio      # periods carry a sign ambiguity
        mpair = finite1[a].order + finite1[b].order
        t = ratio ** (2.0 / (2.0 + mpair))
        Kj = 1.0 + abs(t - 1.0)
        if Kj > K_int:
            K_int, worst = Kj, (a, b)
    return K_int, worst


def _accepted_double(res, spec: NRRP) -> bool:
    """Decide whether a doubling solve is usable as a uniformization proxy.

    When the interior carries several zeros of even total order, coalescing
    them makes the developed boundary close up exactly, and the true side
    vector violates that closure by the internal period.  The solve then
    plateaus at the least-squares projection onto the attainable side
    vectors.  That projection is still the right proxy: both compared disks
    carry the same defect to first order, so it cancels in the boundary
    correspondence, and the intra-group signal is measured separately from
    the internal periods themselves."""
    if res.converged:
        return True
    mean_side = float(np.mean([ln for _, ln in spec.sides]))
    if res.residual_norm > 0.3 * mean_side:
        return False
    hist = res.residual_history
    if len(hist) < 2:
        # warm start already at the plateau, no improving step existed
        return True
    return hist[-2] - hist[-1] <= 0.02 * max(hist[-1], 1e-300)


def _ba_region(rid, q1, q2, p1: NRRP, p2: NRRP, members, r,
               samples_per_side, grid_shape, fd_step) -> list[Region]:
    total_order = sum(rec.order for rec in p1.interior)
    if total_order <= 0:
        if len(p1.interior) == 1:
            return _rectangle_region(rid, p1, p2)
        raise QDError(
            "cannot uniformize a right polygon whose interior mixes a pole "
            "with other singularities"
        )

    res1 = double_nrrp(_coalesced_spec(p1))
    res2 = double_nrrp(_coalesced_spec(p2), initial=res1.differential)
    for tag, res, spec in (("first", res1, p1), ("second", res2, p2)):
        if not _accepted_double(res, spec):
            raise QDError(
                f"doubling the {tag} polygon of region {rid} stalled at "
                f"residual {res.residual_norm:.3g}"
            )
    d1 = uniformized_double(res1)
    d2 = uniformized_double(res2)

    pts = _uhp_probe_points(d1, d2, grid_shape, fd_step)
    hi = max(d1.corners[-1], d2.corners[-1], 1.0)
    need = float(np.max(np.abs(pts.real) + pts.imag)) + hi + 1.0
    h = boundary_correspondence(d1, d2, samples_per_side, coverage=need)
    rho = quasisymmetry_constant(h)
    f = beurling_ahlfors(h, r)

    regions: list[Region] = []
    note = f"rho={rho:.6g}"
    if len(d1.interior) == 1 and len(d2.interior) == 1:
        # compose with the real-linear correction landing the interior
        # singularity on its target, and measure the composite directly
        shear = marked_point_shear(d2.interior[0], complex(f(d1.interior[0])))
        fld = dilatation_field(lambda zz: shear(f(zz)), pts, fd_step)
        regions.append(Region(rid, "nrrp", fld.max_dilatation, note))
        regions.append(Region(f"{rid}:shear", "shear", shear.dilatation))
    else:
        fld = dilatation_field(f, pts, fd_step)
        regions.append(Region(rid, "nrrp", fld.max_dilatation, note))

    if len(members) >= 2:
        K_int, worst = _internal_period_correction(q1, q2, members)
        regions.append(
            Region(f"{rid}:interior", "internal", K_int,
                   f"pair {worst}" if worst else "")
        )
        head = regions[0]
        regions[0] = Region(head.id, head.kind,
                            head.dilatation * K_int, head.note)
    return regions


def assemble_qc_map(a, b, delta: float = 0.1, r: float = 2.0,
                    samples_per_side: int = 384, grid=(24, 14),
                    fd_step: float = 1e-4) -> DilatationReport:
    """Build a global quasiconformal comparison of two close flat structures
    and report its dilatation by region.

    For two polygon-glued surfaces (or triangulations) with matching
    combinatorics the map is piecewise affine on corresponding triangles.
    For two sphere differentials the singularities are grouped into
    delta-clusters, each group is enclosed in a right polygon, the polygon
    complement is compared by a piecewise-affine map on the corner
    triangulation, and each polygon pair is compared through the extension
    of its side-length boundary correspondence composed with interior
    corrections.  The reported bound is the max over regions; teich_bound
    is half its log."""
    surf_types = (HalfTranslationSurface, Triangulation)
    if isinstance(a, surf_types) and isinstance(b, surf_types):
        t1 = a if isinstance(a, Triangulation) else triangulate(a)
        t2 = b if isinstance(b, Triangulation) else triangulate(b)
        if _identical_surfaces(t1, t2):
            return DilatationReport(
                1.0, (Region("all", "identity", 1.0),),
                {"mode": "surface", "r": r},
            )
        Ks, Kmax = pl_map_dilatation(t1, t2)
        regions = tuple(
            Region(f"tri:{i}", "pl", float(K)) for i, K in enumerate(Ks)
        )
        return DilatationReport(Kmax, regions, {"mode": "surface", "r": r})

    q1 = _as_rational(a)
    q2 = _as_rational(b)
    if not isinstance(q1, RationalQD) or not isinstance(q2, RationalQD):
        raise QDError("expected two sphere differentials or two surfaces")
    if _identical_differentials(q1, q2):
        return DilatationReport(
            1.0, (Region("all", "identity", 1.0),),
            {"mode": "sphere", "delta": delta, "r": r},
        )

    polys1 = nrrp_system(q1, delta)
    polys2 = nrrp_system(q2, delta)
    parts1 = {_members_of(q1, p): p for p in polys1}
    parts2 = {_members_of(q2, p): p for p in polys2}
    if set(parts1) != set(parts2):
        raise QDError(
            "combinatorics mismatch: right-polygon systems differ "
            f"({sorted(parts1)} vs {sorted(parts2)})"
        )
    keys = sorted(parts1)

    regions: list[Region] = []
    regions.extend(_pl_complement([parts1[k] for k in keys],
                                  [parts2[k] for k in keys]))
    for idx, k in enumerate(keys):
        regions.extend(
            _ba_region(f"nrrp:{idx}", q1, q2, parts1[k], parts2[k], k, r,
                       samples_per_side, grid, fd_step)
        )

    Kmax = max(rg.dilatation for rg in regions)
    return DilatationReport(
        float(Kmax), tuple(regions),
        {"mode": "sphere", "delta": delta, "r": r,
         "groups": [list(k) for k in keys]},
    )
