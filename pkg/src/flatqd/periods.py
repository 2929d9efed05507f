"""Periods of the square root of a quadratic differential along piecewise
linear contours, with exact branch transport.

On a straight segment avoiding the singularities, the continuous change of
arg(z − z_j) equals the principal argument of (end − z_j)/(start − z_j): a
segment subtends less than a half turn from any point not on it.  The branch
of √q is therefore transported exactly, with no step-size dependence, by
accumulating principal relative arguments factor by factor.

A segment ending at a singularity of order e is integrated after the
substitution z = end + (start − end)·σ², which turns the integrand into
σ^{e+1} times an analytic function, so Gauss–Kronrod panels converge at
spectral rate for every admissible order e ≥ −1.
"""

from __future__ import annotations

import cmath
import heapq
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .qdiff import ClusterDifferential, QDError, RationalQD, SingularityRecord, _root_data


# ============================================================
# Gauss-Kronrod 7-15 panel rule
# ============================================================

_K = np.array([
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898, 0.0,
])
_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
])
_WG7 = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469,
])

_XS = np.concatenate([-_K[:7], _K[7:8], _K[6::-1]])      # 15 ascending nodes
_WKF = np.concatenate([_WK[:7], _WK[7:8], _WK[6::-1]])   # Kronrod weights
_WGF = np.zeros(15)
_WGF[[1, 13]] = _WG7[0]
_WGF[[3, 11]] = _WG7[1]
_WGF[[5, 9]] = _WG7[2]
_WGF[7] = _WG7[3]


def _adaptive(f: Callable, lo: float, hi: float, tol: float, budget: int = 4000):
    """Integrate the vectorized complex integrand f over [lo, hi] by bisecting
    the panel with the worst Kronrod-vs-Gauss discrepancy until the summed
    estimate drops under tol (or the double-precision floor)."""

    def panel(a, b):
        c, hw = (a + b) / 2, (b - a) / 2
        fv = f(c + hw * _XS)
        k = hw * (fv * _WKF).sum()
        g = hw * (fv * _WGF).sum()
        return k, abs(k - g)

    k0, e0 = panel(lo, hi)
    heap = [(-e0, lo, hi, k0)]
    n = 1
    while n < budget:
        total_v = sum(item[3] for item in heap)
        total_e = -sum(item[0] for item in heap)
        if total_e <= max(tol, 5e-15 * abs(total_v)):
            return total_v, total_e
        _, a, b, _ = heapq.heappop(heap)
        m = (a + b) / 2
        k1, e1 = panel(a, m)
        k2, e2 = panel(m, b)
        heapq.heappush(heap, (-e1, a, m, k1))
        heapq.heappush(heap, (-e2, m, b, k2))
        n += 2
    total_v = sum(item[3] for item in heap)
    total_e = -sum(item[0] for item in heap)
    if total_e > max(tol, 5e-15 * abs(total_v)):
        raise QDError(
            f"quadrature budget exceeded: error estimate {total_e:.3e} "
            f"above requested {tol:.3e} after {n} panels"
        )
    return total_v, total_e


# ============================================================
# contours and charts
# ============================================================

@dataclass(frozen=True)
class Contour:
    """Piecewise linear integration path.  Only the two path endpoints may sit
    at singularities, declared by the endpoint_singular flags; the interior
    must stay clear."""

    vertices: tuple[complex, ...]
    endpoint_singular: tuple[bool, bool] = (True, True)

    def __post_init__(self):
        verts = tuple(complex(v) for v in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 2:
            raise QDError("a contour needs at least two vertices")
        for a, b in zip(verts, verts[1:]):
            if a == b:
                raise QDError(f"zero-length contour segment at {a}")

    @property
    def start(self) -> complex:
        return self.vertices[0]

    @property
    def end(self) -> complex:
        return self.vertices[-1]


@dataclass(frozen=True)
class PeriodChart:
    """Spanning tree of contours over all finite singularities.

    edges[i] = (a, b) are the singularity indices contour i runs between,
    oriented a -> b.  anchors[i] is the branch choice: the value of √q at the
    midpoint of the contour's first segment; re-evaluations pick the square
    root sign closest to the anchor, which transports the branch continuously
    through deformations of the configuration.
    """

    contours: tuple[Contour, ...]
    edges: tuple[tuple[int, int], ...]
    anchors: tuple[complex, ...]
    values: tuple[complex, ...]

    def __post_init__(self):
        if not (len(self.contours) == len(self.edges) == len(self.anchors) == len(self.values)):
            raise QDError("chart fields must have equal length")


class PeriodResult(NamedTuple):
    value: complex
    error: float
    ref: complex  # √q at the first segment's midpoint, branch as integrated


# ============================================================
# geometry helpers
# ============================================================

def _span(points) -> float:
    pts = [complex(p) for p in points]
    if not pts:
        return 1.0
    re = [p.real for p in pts]
    im = [p.imag for p in pts]
    return max(max(re) - min(re), max(im) - min(im), 1e-30)


def _seg_param(z: complex, p: complex, r: complex) -> tuple[float, float]:
    """(distance to [p,r], clamped projection parameter in [0,1])."""
    d = r - p
    L2 = (d * d.conjugate()).real
    t = ((z - p) * d.conjugate()).real / L2
    t = min(1.0, max(0.0, t))
    return abs(z - (p + t * d)), t


def _match_singularity(zs: np.ndarray, point: complex, eps: float) -> int | None:
    if len(zs) == 0:
        return None
    d = np.abs(zs - point)
    j = int(d.argmin())
    return j if d[j] <= eps else None


def _check_clearance(zs, verts, i0, i1, eps):
    """The open contour must avoid every singularity; flagged endpoints are
    allowed exactly at the path ends."""
    last = len(verts) - 2
    for k in range(len(verts) - 1):
        p, r = verts[k], verts[k + 1]
        seg_len = abs(r - p)
        for j in range(len(zs)):
            dist, t = _seg_param(zs[j], p, r)
            if dist > eps:
                continue
            at_start = t * seg_len <= eps
            at_end = (1 - t) * seg_len <= eps
            if k == 0 and j == i0 and at_start:
                continue
            if k == last and j == i1 and at_end:
                continue
            raise QDError(
                f"contour passes through singularity {j} at {zs[j]} "
                f"(segment {k}, distance {dist:.3e})"
            )


# ============================================================
# the integration engine
# ============================================================

def _prep(q) -> tuple[complex, np.ndarray, np.ndarray]:
    scale, pairs = _root_data(q)
    zs = np.array([p[0] for p in pairs], dtype=complex)
    es = np.array([p[1] for p in pairs], dtype=float)
    return complex(scale), zs, es


def _theta_initial(scale, zs, es, v0, skip, depart):
    """Total phase of q at the path start: principal arguments of every
    factor, with the vanishing factor (if the start is singular) assigned the
    argument of the departure direction."""
    th = cmath.phase(scale)
    for j in range(len(zs)):
        w = depart if j == skip else v0 - zs[j]
        th += es[j] * cmath.phase(w)
    return th


def _sqrt_at(scale, zs, es, z, theta):
    L = math.log(abs(scale)) + float((es * np.log(np.abs(z - zs))).sum())
    return cmath.exp(0.5 * L + 0.5j * theta)


def _integrate_piece(scale, zs, es, p, r, theta_p, tol, sing, J, weight):
    """∫√q dz over the straight piece [p, r] carrying total phase theta_p at p.

    sing: None (regular), "start" (p = zs[J]) or "end" (r = zs[J]).
    Returns (value, error, theta at r).
    """
    lnA = math.log(abs(scale))
    if sing is None:
        d = r - p
        ref = p - zs

        def f(ss):
            z = p + ss * d
            dz = z[:, None] - zs[None, :]
            L = lnA + (es * np.log(np.abs(dz))).sum(axis=1)
            TH = theta_p + (es * np.angle(dz / ref[None, :])).sum(axis=1)
            w = np.exp(0.5 * L + 0.5j * TH) * d
            if weight is not None:
                w = w * weight(z)
            return w

        val, err = _adaptive(f, 0.0, 1.0, tol)
        theta_r = theta_p + float((es * np.angle((r - zs) / ref)).sum())
        return val, err, theta_r

    mask = np.arange(len(zs)) != J
    zo, eo = zs[mask], es[mask]
    eJ = es[J]
    if sing == "start":
        d, base = r - p, p
        amp = 2 * d * abs(d) ** (eJ / 2)
    else:
        d, base = p - r, r
        amp = -2 * d * abs(d) ** (eJ / 2)
    refo = p - zo

    def f(sig):
        z = base + d * sig * sig
        dz = z[:, None] - zo[None, :]
        L = lnA + (eo * np.log(np.abs(dz))).sum(axis=1)
        TH = theta_p + (eo * np.angle(dz / refo[None, :])).sum(axis=1)
        w = np.exp(0.5 * L + 0.5j * TH) * (sig ** (eJ + 1)) * amp
        if weight is not None:
            w = w * weight(z)
        return w

    val, err = _adaptive(f, 0.0, 1.0, tol)
    # the vanishing factor keeps a constant argument along the piece
    theta_r = theta_p + float((eo * np.angle((r - zo) / refo)).sum())
    return val, err, theta_r


def period_detailed(
    q,
    contour: Contour,
    tol: float = 1e-10,
    anchor: complex | None = None,
    weight: Callable | None = None,
) -> PeriodResult:
    """∫√q dz along the contour with absolute error estimate below tol.

    anchor: optional branch choice; the result's sign is flipped so that √q at
    the first segment's midpoint has positive inner product with the anchor.
    Without an anchor, the branch is the principal-argument initialization.
    weight: optional extra factor (vectorized callable of z) under the
    integral, used for differentiating periods in the singularity positions.
    """
    scale, zs, es = _prep(q)
    verts = list(contour.vertices)
    s0, s1 = contour.endpoint_singular
    eps = 1e-12 * _span(list(zs) + verts)

    i0 = _match_singularity(zs, verts[0], eps) if s0 else None
    i1 = _match_singularity(zs, verts[-1], eps) if s1 else None
    if s0 and i0 is None:
        raise QDError(f"contour start {verts[0]} flagged singular but no singularity there")
    if s1 and i1 is None:
        raise QDError(f"contour end {verts[-1]} flagged singular but no singularity there")
    if not s0 and _match_singularity(zs, verts[0], eps) is not None:
        raise QDError(f"contour start {verts[0]} sits on a singularity but is not flagged")
    if not s1 and _match_singularity(zs, verts[-1], eps) is not None:
        raise QDError(f"contour end {verts[-1]} sits on a singularity but is not flagged")
    if s0:
        verts[0] = complex(zs[i0])  # snap exactly
    if s1:
        verts[-1] = complex(zs[i1])
    _check_clearance(zs, verts, i0, i1, eps)

    # split the first segment at its midpoint so the branch reference point is
    # always a regular interior point (and so a single both-singular segment
    # decomposes into two one-sided singular pieces)
    mid0 = (verts[0] + verts[1]) / 2
    pieces: list[tuple[complex, complex, str | None, int | None]] = []
    first_sing = ("start", i0) if s0 else (None, None)
    pieces.append((verts[0], mid0, *first_sing))
    if len(verts) == 2:
        tail_sing = ("end", i1) if s1 else (None, None)
        pieces.append((mid0, verts[1], *tail_sing))
    else:
        pieces.append((mid0, verts[1], None, None))
        for k in range(1, len(verts) - 2):
            pieces.append((verts[k], verts[k + 1], None, None))
        tail_sing = ("end", i1) if s1 else (None, None)
        pieces.append((verts[-2], verts[-1], *tail_sing))

    theta = _theta_initial(scale, zs, es, verts[0], i0 if s0 else None, verts[1] - verts[0])
    piece_tol = tol / len(pieces)
    total = 0j
    err = 0.0
    ref = None
    for idx, (p, r, sing, J) in enumerate(pieces):
        val, e, theta = _integrate_piece(scale, zs, es, p, r, theta, piece_tol, sing, J, weight)
        total += val
        err += e
        if idx == 0:
            ref = _sqrt_at(scale, zs, es, r, theta)

    if anchor is not None:
        dot = (ref * anchor.conjugate()).real
        if abs(dot) < 1e-6 * abs(ref) * abs(anchor):
            raise QDError(
                "branch ambiguity: the anchor is nearly orthogonal to the "
                "square root at the reference point"
            )
        if dot < 0:
            total, ref = -total, -ref
    return PeriodResult(total, err, ref)


def period(q, contour: Contour, tol: float = 1e-10, branch: int = 1) -> complex:
    """Period ∫√q dz along the contour, absolute error below tol.

    branch = ±1 selects the square root sign relative to the principal branch
    at the contour's first reference point.
    """
    if branch not in (1, -1):
        raise QDError(f"branch must be +1 or -1, got {branch!r}")
    return branch * period_detailed(q, contour, tol).value


# ============================================================
# flat length of a straight segment (no branch needed)
# ============================================================

def _flat_length_piece(lnA, zs, es, p, r, J, toward_r, rel_tol):
    """∫|√q| |dz| over [p, r]; J = index of the singularity at p (or r when
    toward_r) or None."""
    if J is None:
        d = r - p

        def f(ss):
            z = p + ss * d
            L = lnA + (es * np.log(np.abs(z[:, None] - zs[None, :]))).sum(axis=1)
            return np.exp(0.5 * L) * abs(d) + 0j

    else:
        mask = np.arange(len(zs)) != J
        zo, eo = zs[mask], es[mask]
        eJ = es[J]
        base, d = (r, p - r) if toward_r else (p, r - p)
        amp = 2 * abs(d) ** (1 + eJ / 2)

        def f(sig):
            z = base + d * sig * sig
            L = lnA + (eo * np.log(np.abs(z[:, None] - zo[None, :]))).sum(axis=1)
            return np.exp(0.5 * L) * sig ** (eJ + 1) * amp + 0j

    coarse = abs(f(0.5 * (_XS + 1.0)).sum() / 15)
    val, _ = _adaptive(f, 0.0, 1.0, rel_tol * max(coarse, 1e-30))
    return val.real


def flat_length(q, a: complex, b: complex, rel_tol: float = 1e-6) -> float:
    """q-length of the straight segment [a, b], endpoints may be singular."""
    scale, zs, es = _prep(q)
    lnA = math.log(abs(scale))
    eps = 1e-12 * _span(list(zs) + [a, b])
    ia = _match_singularity(zs, a, eps)
    ib = _match_singularity(zs, b, eps)
    if ia is not None and ib is not None:
        m = (a + b) / 2
        return _flat_length_piece(lnA, zs, es, a, m, ia, False, rel_tol) + _flat_length_piece(
            lnA, zs, es, m, b, ib, True, rel_tol
        )
    if ia is not None:
        return _flat_length_piece(lnA, zs, es, a, b, ia, False, rel_tol)
    if ib is not None:
        return _flat_length_piece(lnA, zs, es, a, b, ib, True, rel_tol)
    return _flat_length_piece(lnA, zs, es, a, b, None, False, rel_tol)


def contour_flat_length(q, contour: Contour, rel_tol: float = 1e-6) -> float:
    return sum(
        flat_length(q, a, b, rel_tol) for a, b in zip(contour.vertices, contour.vertices[1:])
    )


# ============================================================
# spanning tree charts
# ============================================================

def _segment_clear(zs, p, r, eps, allow: tuple[int | None, int | None]):
    seg_len = abs(r - p)
    for j in range(len(zs)):
        dist, t = _seg_param(zs[j], p, r)
        if dist > eps:
            continue
        if j == allow[0] and t * seg_len <= eps:
            continue
        if j == allow[1] and (1 - t) * seg_len <= eps:
            continue
        return False
    return True


def _route(zs, i, j, eps) -> tuple[complex, ...]:
    """Straight contour between singularities i and j, bent through one offset
    vertex when another singularity blocks the direct segment."""
    a, b = complex(zs[i]), complex(zs[j])
    if _segment_clear(zs, a, b, eps, (i, j)):
        return (a, b)
    for h in (0.25, -0.25, 0.5, -0.5, 0.75, -0.75, 1.0, -1.0, 1.5, -1.5):
        m = (a + b) / 2 + 1j * (b - a) * h
        if _segment_clear(zs, a, m, eps, (i, None)) and _segment_clear(zs, m, b, eps, (None, j)):
            return (a, m, b)
    raise QDError(f"cannot route a contour between singularities {i} and {j}")


def spanning_tree_chart(q, length_bound: float | None = None, tol: float = 1e-10) -> PeriodChart:
    """Greedy shortest-first spanning tree over all finite singularities, with
    periods and branch anchors evaluated on each tree contour.

    Candidate contours are straight segments (bent around blocking
    singularities), ranked by flat length with lexicographic (length, i, j)
    tie-breaking.  An edge longer than length_bound (default: 4 times the
    longest candidate, so the default never refuses) raises an error naming
    the length that would be needed.
    """
    scale, zs, es = _prep(q)
    n = len(zs)
    if n < 2:
        raise QDError("need at least two finite singularities to build a chart")
    eps = 1e-12 * _span(zs)

    cand = []
    for i in range(n):
        for j in range(i + 1, n):
            verts = _route(zs, i, j, eps)
            L = sum(flat_length(q, a, b, 1e-8) for a, b in zip(verts, verts[1:]))
            cand.append((L, i, j, verts))
    cand.sort(key=lambda t: (t[0], t[1], t[2]))
    bound = 4 * max(t[0] for t in cand) if length_bound is None else float(length_bound)

    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    chosen = []
    for L, i, j, verts in cand:
        ri, rj = find(i), find(j)
        if ri == rj:
            continue
        if L > bound:
            raise QDError(
                f"spanning tree needs a contour of flat length {L:.6g}, "
                f"above the bound {bound:.6g}"
            )
        parent[ri] = rj
        chosen.append((i, j, verts))
        if len(chosen) == n - 1:
            break

    contours, edges, anchors, values = [], [], [], []
    for i, j, verts in chosen:
        cont = Contour(verts, (True, True))
        res = period_detailed(q, cont, tol)
        contours.append(cont)
        edges.append((i, j))
        anchors.append(res.ref)
        values.append(res.value)
    return PeriodChart(tuple(contours), tuple(edges), tuple(anchors), tuple(values))


def reevaluate_chart(q, chart: PeriodChart, tol: float = 1e-10) -> PeriodChart:
    """Recompute the chart's periods for q (same contours), carrying each
    branch anchor forward."""
    anchors, values = [], []
    for cont, anc in zip(chart.contours, chart.anchors):
        res = period_detailed(q, cont, tol, anchor=anc)
        anchors.append(res.ref)
        values.append(res.value)
    return PeriodChart(chart.contours, chart.edges, tuple(anchors), tuple(values))


# ============================================================
# derivatives of periods in the singularity positions
# ============================================================

def _records_from_arrays(zs, es) -> tuple[SingularityRecord, ...]:
    return tuple(
        SingularityRecord(complex(z), int(e), marked=(e <= 0)) for z, e in zip(zs, es)
    )


def _fd_endpoint_entry(scale, zs, es, cont, anchor, j, t_idx, tol, fd_scale):
    """Total derivative of the period in an endpoint singularity of order 0 or
    −1, where the boundary term defeats differentiation under the integral.

    The configuration with only z_j moved to z_j + h is conjugated, by the
    affine map fixing the opposite endpoint z_t, into a differential over the
    original fixed contour: roots ẑ_k = z_t + (z_k − z_t)/a_h for k ≠ j with
    ẑ_j kept, periods multiplied by a_h^{(Σe+2)/2}, a_h = 1 + h/(z_j − z_t).
    The period is then holomorphic in h, so a real central difference yields
    the complex derivative.
    """
    z_j, z_t = complex(zs[j]), complex(zs[t_idx])
    sep = np.abs(zs - z_j)
    sep[j] = np.inf
    h = fd_scale * float(sep.min())
    power = (float(es.sum()) + 2.0) / 2.0

    def F(hh):
        a_h = 1 + hh / (z_j - z_t)
        zh = z_t + (zs - z_t) / a_h
        zh[j] = z_j
        qh = RationalQD(scale, _records_from_arrays(zh, es))
        val = period_detailed(qh, cont, tol, anchor=anchor).value
        return (a_h ** power) * val

    return (F(h) - F(-h)) / (2 * h)


def period_jacobian(q, chart: PeriodChart, tol: float = 1e-11, fd_scale: float = 1e-6) -> np.ndarray:
    """Matrix of total derivatives M[i, j] = dP_i/dz_j of the chart periods in
    the singularity positions.

    For z_j away from contour i's endpoints (or at an endpoint of order ≥ 1,
    where the boundary term vanishes), differentiation under the integral
    gives dP_i/dz_j = ∫ e_j √q / (2 (z_j − z)) dz along the contour.  Endpoint
    singularities of order 0 or −1 go through the conjugated finite-difference
    family instead.
    """
    scale, zs, es = _prep(q)
    n = len(zs)
    M = np.zeros((len(chart.contours), n), dtype=complex)
    for i, (cont, (ia, ib)) in enumerate(zip(chart.contours, chart.edges)):
        anchor = chart.anchors[i]
        entry_tol = tol * max(1.0, abs(chart.values[i]))
        for j in range(n):
            if j in (ia, ib) and es[j] < 1:
                t_idx = ib if j == ia else ia
                M[i, j] = _fd_endpoint_entry(
                    scale, zs, es, cont, anchor, j, t_idx, entry_tol, fd_scale
                )
                continue
            if es[j] == 0:
                continue  # a marked point away from the contour: exactly zero

            def w(z, zj=complex(zs[j]), e=float(es[j])):
                return e / (2 * (zj - z))

            M[i, j] = period_detailed(q, cont, entry_tol, anchor=anchor, weight=w).value
    return M


# ============================================================
# chart distance with homotopy persistence
# ============================================================

def _stratum_signature(q):
    _, pairs = _root_data(q)
    return tuple((int(e)) for _, e in pairs)


def d_euclidean_chart(q1, q2, chart: PeriodChart | None = None, tol: float = 1e-10) -> float:
    """Max-norm difference of chart periods between two differentials of the
    same stratum, after continuing the branch anchors along the straight-line
    homotopy of singularity positions (and linear homotopy of scales).

    Raises when the homotopy pinches (two singularities collide or the chart
    stops being routable), since the comparison is then meaningless.
    """
    s1, zs1, es1 = _prep(q1)
    s2, zs2, es2 = _prep(q2)
    if len(zs1) != len(zs2) or not np.array_equal(es1, es2):
        raise QDError("stratum mismatch: singularity counts or orders differ by index")
    if chart is None:
        chart = spanning_tree_chart(q1, tol=tol)
    base_vals = chart.values

    n = len(zs1)
    span0 = _span(list(zs1) + list(zs2))
    pinch_eps = 1e-9 * span0

    def config(t):
        zt = (1 - t) * zs1 + t * zs2
        st = (1 - t) * s1 + t * s2
        if abs(st) < 1e-12 * max(abs(s1), abs(s2)):
            raise QDError(f"homotopy pinched: scale vanishes near t={t:.4g}")
        dmin = np.inf
        for a in range(n):
            for b in range(a + 1, n):
                dmin = min(dmin, abs(zt[a] - zt[b]))
        if n > 1 and dmin < pinch_eps:
            raise QDError(f"homotopy pinched: singularities collide near t={t:.4g}")
        return RationalQD(st, _records_from_arrays(zt, es1))

    def eval_at(t, anchors):
        q_t = config(t)
        _, zt, _ = _prep(q_t)
        eps = 1e-12 * _span(zt)
        vals, refs = [], []
        for (ia, ib), anc in zip(chart.edges, anchors):
            verts = _route(zt, ia, ib, eps)
            res = period_detailed(q_t, Contour(verts, (True, True)), tol, anchor=anc)
            vals.append(res.value)
            refs.append(res.ref)
        return vals, refs

    t_cur = 0.0
    vals_cur = list(base_vals)
    anch_cur = list(chart.anchors)
    step = 1.0
    while t_cur < 1.0:
        t_next = min(1.0, t_cur + step)
        try:
            vals, refs = eval_at(t_next, anch_cur)
            jump = max(
                abs(v - w) for v, w in zip(vals, vals_cur)
            )
            guard = 0.4 * max(
                max(abs(v), abs(w)) for v, w in zip(vals, vals_cur)
            ) + 1e-12
            ok = jump <= guard or step <= 1e-5
        except QDError as exc:
            if "pinched" in str(exc):
                raise
            ok = False
        if ok:
            t_cur, vals_cur, anch_cur = t_next, vals, refs
            step = min(1.0, step * 1.6)
        else:
            step *= 0.5
            if step < 1e-6:
                raise QDError("homotopy pinched: chart cannot be continued to the target")
    return max(abs(v - w) for v, w in zip(vals_cur, base_vals))


# ============================================================
# Newton adjustment of roots to hit prescribed periods
# ============================================================

def solve_periods(
    q: RationalQD,
    chart: PeriodChart,
    targets,
    free: list[int] | None = None,
    tol: float = 1e-12,
    max_iter: int = 25,
):
    """Move the free singularities so the chart periods hit the targets.

    Gauss-Newton on the period map, least squares when the system is not
    square.  Returns (q, chart, residual_norm, iterations) with the chart
    re-evaluated on the final configuration.
    """
    scale, zs, es = _prep(q)
    n = len(zs)
    if free is None:
        free = list(range(1, n))
    targets = np.asarray(targets, dtype=complex)
    scale_ref = max(1.0, float(np.max(np.abs(targets))))

    cur = chart
    zs_cur = zs.copy()
    for it in range(max_iter):
        r = targets - np.asarray(cur.values, dtype=complex)
        rnorm = float(np.max(np.abs(r)))
        if rnorm <= tol * scale_ref:
            return RationalQD(scale, _records_from_arrays(zs_cur, es)), cur, rnorm, it
        q_cur = RationalQD(scale, _records_from_arrays(zs_cur, es))
        M = period_jacobian(q_cur, cur)[:, free]
        delta, *_ = np.linalg.lstsq(M, r, rcond=None)
        zs_cur[free] += delta
        eps = 1e-12 * _span(zs_cur)
        conts, anchors, values = [], [], []
        q_new = RationalQD(scale, _records_from_arrays(zs_cur, es))
        for (ia, ib), anc in zip(cur.edges, cur.anchors):
            verts = _route(zs_cur, ia, ib, eps)
            res = period_detailed(q_new, Contour(verts, (True, True)), tol=1e-12, anchor=anc)
            conts.append(Contour(verts, (True, True)))
            anchors.append(res.ref)
            values.append(res.value)
        cur = PeriodChart(tuple(conts), cur.edges, tuple(anchors), tuple(values))
    r = targets - np.asarray(cur.values, dtype=complex)
    rnorm = float(np.max(np.abs(r)))
    if rnorm > tol * scale_ref:
        raise QDError(f"period solve did not converge: residual {rnorm:.3e}")
    return RationalQD(scale, _records_from_arrays(zs_cur, es)), cur, rnorm, max_iter


# ============================================================
# collision-limit probe of the Jacobian
# ============================================================

def _loglog_fit(xs, ys) -> tuple[float, float]:
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def jacobian_cluster_limit_probe(
    family: Callable[[float], RationalQD],
    eps_values,
    cluster_indices=None,
    tol: float = 1e-11,
) -> dict:
    """Track the period Jacobian of a family with one collapsing cluster.

    For each parameter value: row norms of the contours interior to the
    cluster, the leading outside factor t evaluated at the cluster's weighted
    center, the proportionality defects |e_k·M[i,j] − e_j·M[i,k]| of colliding
    columns on rows reaching outside, and the translation row-sum ratio.
    The returned exponent is the log-log slope of the internal row norms,
    divided by |t|^{1/2}, against the cluster diameter; for a cluster of total
    order m it should approach m/2.
    """
    eps_values = sorted(float(e) for e in eps_values)
    if len(eps_values) < 2:
        raise QDError("need at least two parameter values to fit an exponent")

    records = []
    edges_ref = None
    cluster = None
    for eps in eps_values:
        q = family(eps)
        scale, zs, es = _prep(q)
        chart = spanning_tree_chart(q, tol=max(tol, 1e-12))
        if edges_ref is None:
            edges_ref = chart.edges
        elif chart.edges != edges_ref:
            raise QDError(
                f"chart combinatorics changed across the family at eps={eps:g}"
            )
        if cluster is None:
            if cluster_indices is not None:
                cluster = sorted(set(int(i) for i in cluster_indices))
            else:
                # auto-detect: the pair(s) much closer than the configuration span
                span = _span(zs)
                close = set()
                for a in range(len(zs)):
                    for b in range(a + 1, len(zs)):
                        if abs(zs[a] - zs[b]) < 0.05 * span:
                            close.update((a, b))
                cluster = sorted(close)
            if len(cluster) < 2:
                raise QDError("no collapsing cluster identified")
        S = set(cluster)

        M = period_jacobian(q, chart, tol=tol)
        internal = [i for i, (a, b) in enumerate(chart.edges) if a in S and b in S]
        external = [i for i in range(len(chart.edges)) if i not in internal]
        if not internal:
            raise QDError("the chart has no contour interior to the cluster")

        diam = max(abs(zs[a] - zs[b]) for a in S for b in S if a != b)
        m_total = float(sum(es[a] for a in S))
        center = sum(es[a] * zs[a] for a in S) / m_total
        t_val = scale
        for k in range(len(zs)):
            if k not in S:
                t_val *= (center - zs[k]) ** es[k]

        int_norm = max(float(np.linalg.norm(M[i, :])) for i in internal)
        defect = 0.0
        pairs = [(a, b) for a in cluster for b in cluster if a < b]
        for i in external:
            rn = float(np.linalg.norm(M[i, :]))
            if rn == 0:
                continue
            for a, b in pairs:
                defect = max(defect, abs(es[b] * M[i, a] - es[a] * M[i, b]) / rn)
        ones = np.ones(len(zs), dtype=complex)
        rowsum_ratio = float(np.max(np.abs(M @ ones)) / np.max(np.abs(M)))

        records.append(
            {
                "eps": eps,
                "diam": float(diam),
                "t": complex(t_val),
                "internal_row_norm": int_norm,
                "defect": defect,
                "rowsum_ratio": rowsum_ratio,
            }
        )

    slope, _ = _loglog_fit(
        [r["diam"] for r in records],
        [r["internal_row_norm"] / math.sqrt(abs(r["t"])) for r in records],
    )
    return {
        "records": records,
        "exponent": slope,
        "cluster": cluster,
        "cluster_order": float(sum(_prep(family(eps_values[0]))[2][a] for a in cluster)),
    }
