"""Polygon-glued flat surfaces with translation and half-turn edge gluings.

A surface is a collection of planar polygons with every edge glued to exactly
one partner by a map z ↦ ±z + c.  Since all transition maps are of this form,
directions are globally defined up to sign, cone angles come out as multiples
of π, and each cone point carries an order m with angle (m+2)π.

The triangulation machinery stores halfedge arrays (twin, next, vector, gluing
sign).  Each face keeps its own chart; a halfedge's vector is the edge as seen
from its face, and the twin's vector is -sign times it.  Edge flips rewrite the
two incident triangles in a common development, which keeps the Delaunay logic
metric-exact.  Flips run until the local empty-circumdisk (or empty-square)
test passes everywhere; certificates re-check every face against all vertex
lifts developed by breadth-first search, independent of the flip path.

The right-polygon section builds axis-parallel polygons with all interior
angles π/2 around singularity groups of a sphere differential, by tracing
unit-speed vertical/horizontal segments and closing up with a Newton solve,
and the doubling solver recovers a conjugation-symmetric sphere differential
whose boundary side lengths match a given right polygon.
"""

from __future__ import annotations

import cmath
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .qdiff import (
    INF,
    evaluate as qd_evaluate,
    QDError,
    RationalQD,
    SingularityRecord,
    mobius_normalize,
)
from .periods import (
    Contour,
    PeriodChart,
    _prep,
    _span,
    contour_flat_length,
    flat_length,
    period_detailed,
    period_jacobian,
)
from .clusters import delta_clusters
from .metric import pairwise_flat_distances


def _cross(u: complex, v: complex) -> float:
    return u.real * v.imag - u.imag * v.real


# ============================================================
# polygon input and parsing
# ============================================================

Gluing = tuple[tuple[int, int], tuple[int, int], int]


def parse_polygon_spec(text: str):
    """Parse a polygon gluing table.

    Lines: `polygon x,y x,y ...` lists one polygon's vertices in
    counterclockwise order; `glue (p,e) <-> (p,e) sign` identifies two edges,
    sign +1 for a translation and -1 for a half-turn.  Edge e runs from vertex
    e to vertex e+1.  '#' starts a comment.
    """
    polygons: list[list[complex]] = []
    gluings: list[Gluing] = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "polygon":
                verts = []
                for tok in parts[1:]:
                    x, y = tok.split(",")
                    verts.append(complex(float(x), float(y)))
                polygons.append(verts)
            elif parts[0] == "glue":
                body = " ".join(parts[1:]).replace("<->", " ")
                toks = body.replace("(", " ").replace(")", " ").replace(",", " ").split()
                if len(toks) != 5:
                    raise ValueError("expected (poly,edge) <-> (poly,edge) sign")
                p1, e1, p2, e2 = (int(t) for t in toks[:4])
                s = {"+": 1, "-": -1, "+1": 1, "-1": -1, "1": 1}.get(toks[4])
                if s is None:
                    raise ValueError(f"gluing sign must be +1 or -1, got {toks[4]!r}")
                gluings.append(((p1, e1), (p2, e2), s))
            else:
                raise ValueError(f"unknown directive {parts[0]!r}")
        except (ValueError, IndexError) as exc:
            raise QDError(f"line {ln}: {exc}") from None
    return polygons, gluings


def load_polygon_file(path) -> tuple[list[list[complex]], list[Gluing]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_polygon_spec(fh.read())


def _insert_fold_midpoints(polygons, gluings):
    """Split self-glued edges at their midpoints so every gluing joins two
    distinct halfedges; the midpoint becomes a fold vertex of angle π."""
    splits: dict[int, set[int]] = {}
    for (p1, e1), (p2, e2), s in gluings:
        if (p1, e1) == (p2, e2):
            if s != -1:
                raise QDError(
                    f"edge ({p1},{e1}) glued to itself by a translation: "
                    "only a half-turn can fold an edge"
                )
            splits.setdefault(p1, set()).add(e1)

    new_polys = []
    index_map: dict[tuple[int, int], int] = {}
    for p, verts in enumerate(polygons):
        cut = splits.get(p, set())
        out = []
        for i, v in enumerate(verts):
            index_map[(p, i)] = len(out)
            out.append(v)
            if i in cut:
                out.append((v + verts[(i + 1) % len(verts)]) / 2)
        new_polys.append(out)

    new_gluings: list[Gluing] = []
    for (p1, e1), (p2, e2), s in gluings:
        if (p1, e1) == (p2, e2):
            k = index_map[(p1, e1)]
            new_gluings.append(((p1, k), (p1, k + 1), -1))
        else:
            new_gluings.append(
                ((p1, index_map[(p1, e1)]), (p2, index_map[(p2, e2)]), s)
            )
    return new_polys, new_gluings


# ============================================================
# the glued surface
# ============================================================

@dataclass(frozen=True)
class VertexRecord:
    angle: float
    order: int
    marked: bool
    halfedge: int  # a representative halfedge whose origin is this vertex


@dataclass(frozen=True)
class HalfTranslationSurface:
    polygons: tuple[tuple[complex, ...], ...]
    twin: np.ndarray
    nxt: np.ndarray
    vec: np.ndarray
    sign: np.ndarray
    origin: np.ndarray          # vertex id per halfedge origin
    face_of: np.ndarray         # polygon id per halfedge
    vertices: tuple[VertexRecord, ...]
    euler_characteristic: int

    @property
    def genus(self) -> int:
        return (2 - self.euler_characteristic) // 2

    def cone_angles(self) -> list[float]:
        return [v.angle for v in self.vertices]


def build_from_polygons(polygons, gluings, tol: float = 1e-9) -> HalfTranslationSurface:
    """Glue planar polygons along equal-length parallel edges.

    Each polygon is a counterclockwise vertex list; gluings identify edge
    (p1,e1) with (p2,e2) under z ↦ sign·z + c.  Congruence demands
    vec2 = -sign·vec1 within tol relative to the largest edge.  Every edge
    must appear in exactly one gluing; self-gluings (folds) use sign -1 and
    are split at the midpoint.
    """
    polys = [[complex(v) for v in P] for P in polygons]
    for p, verts in enumerate(polys):
        if len(verts) < 3:
            raise QDError(f"polygon {p} has fewer than 3 vertices")
        area = sum(
            _cross(verts[i], verts[(i + 1) % len(verts)])
            for i in range(len(verts))
        ) / 2
        if area <= 0:
            raise QDError(
                f"polygon {p} is not counterclockwise (signed area {area:.3g})"
            )

    polys, glu = _insert_fold_midpoints(polys, gluings)

    offsets = []
    total = 0
    for verts in polys:
        offsets.append(total)
        total += len(verts)
    nH = total
    vec = np.zeros(nH, dtype=complex)
    nxt = np.zeros(nH, dtype=int)
    face_of = np.zeros(nH, dtype=int)
    for p, verts in enumerate(polys):
        m = len(verts)
        for i in range(m):
            h = offsets[p] + i
            vec[h] = verts[(i + 1) % m] - verts[i]
            nxt[h] = offsets[p] + (i + 1) % m
            face_of[h] = p
            if vec[h] == 0:
                raise QDError(f"polygon {p} has a zero-length edge {i}")
    scale = float(np.max(np.abs(vec)))

    twin = np.full(nH, -1, dtype=int)
    sign = np.zeros(nH, dtype=int)
    for (p1, e1), (p2, e2), s in glu:
        for p, e in ((p1, e1), (p2, e2)):
            if not (0 <= p < len(polys)) or not (0 <= e < len(polys[p])):
                raise QDError(f"gluing names nonexistent edge ({p},{e})")
        if s not in (1, -1):
            raise QDError(f"gluing sign must be +1 or -1, got {s}")
        h1 = offsets[p1] + e1
        h2 = offsets[p2] + e2
        if twin[h1] != -1 or twin[h2] != -1:
            raise QDError(f"edge ({p1},{e1}) or ({p2},{e2}) glued twice")
        if abs(vec[h2] + s * vec[h1]) > tol * scale:
            raise QDError(
                f"incongruent gluing ({p1},{e1}) <-> ({p2},{e2}): vectors "
                f"{vec[h1]} and {vec[h2]} with sign {s}"
            )
        twin[h1], twin[h2] = h2, h1
        sign[h1] = sign[h2] = s
    unglued = np.nonzero(twin < 0)[0]
    if unglued.size:
        h = int(unglued[0])
        p = int(face_of[h])
        raise QDError(f"unglued edge ({p},{h - offsets[p]})")

    prev = np.zeros(nH, dtype=int)
    prev[nxt] = np.arange(nH)

    # interior angle at the origin corner of each halfedge
    corner = np.zeros(nH)
    for h in range(nH):
        ratio = (-vec[prev[h]]) / vec[h]
        th = cmath.phase(ratio)
        if th <= 0:
            th += 2 * math.pi
        if th < 1e-12 or th > 2 * math.pi - 1e-12:
            raise QDError(f"degenerate corner at halfedge {h}")
        corner[h] = th

    # vertex orbits: h -> nxt[twin[h]] walks the outgoing halfedges
    origin = np.full(nH, -1, dtype=int)
    vertices: list[VertexRecord] = []
    for h0 in range(nH):
        if origin[h0] >= 0:
            continue
        vid = len(vertices)
        angle = 0.0
        h = h0
        while True:
            origin[h] = vid
            angle += corner[h]
            h = nxt[twin[h]]
            if h == h0:
                break
        order = round(angle / math.pi) - 2
        if abs(angle - (order + 2) * math.pi) > 1e-9:
            raise QDError(
                f"cone angle {angle:.12g} at vertex {vid} is not a multiple "
                "of π (tolerance 1e-9 rad)"
            )
        vertices.append(VertexRecord(angle, order, order <= 0, h0))

    V = len(vertices)
    E = nH // 2
    F = len(polys)
    chi = V - E + F
    gb = sum(2 * math.pi - v.angle for v in vertices)
    if abs(gb - 2 * math.pi * chi) > 1e-9 * max(1, V):
        raise QDError(
            f"angle defect {gb:.12g} does not match 2πχ = {2 * math.pi * chi:.12g}"
        )

    return HalfTranslationSurface(
        polygons=tuple(tuple(v) for v in polys),
        twin=twin, nxt=nxt, vec=vec, sign=sign,
        origin=origin, face_of=face_of,
        vertices=tuple(vertices),
        euler_characteristic=chi,
    )


# ============================================================
# triangulation
# ============================================================

def _point_in_triangle(p, a, b, c, tol):
    # inside or on the boundary, up to tol (positive tol admits boundary)
    return (
        _cross(b - a, p - a) >= -tol
        and _cross(c - b, p - b) >= -tol
        and _cross(a - c, p - c) >= -tol
    )


def _ear_clip(pts: Sequence[complex]) -> list[tuple[int, int, int]]:
    """Triangulate a simple CCW polygon, preferring the shortest diagonal
    among available ears so near-symmetric shapes triangulate predictably."""
    n = len(pts)
    scale = max(abs(a - b) for a in pts for b in pts)
    atol = 1e-12 * scale * scale
    idx = list(range(n))
    tris = []
    while len(idx) > 3:
        m = len(idx)
        best = None
        for k in range(m):
            i0, i1, i2 = idx[(k - 1) % m], idx[k], idx[(k + 1) % m]
            a, b, c = pts[i0], pts[i1], pts[i2]
            if _cross(b - a, c - a) <= atol:
                continue  # reflex or flat corner: not an ear
            blocked = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                if _point_in_triangle(pts[j], a, b, c, atol / scale):
                    blocked = True
                    break
            if blocked:
                continue
            d = abs(c - a)
            if best is None or d < best[0] - 1e-15 * scale:
                best = (d, k)
        if best is None:
            raise QDError("polygon cannot be ear-clipped; is it simple and CCW?")
        k = best[1]
        m = len(idx)
        tris.append((idx[(k - 1) % m], idx[k], idx[(k + 1) % m]))
        del idx[k]
    tris.append(tuple(idx))
    return tris


@dataclass
class Triangulation:
    """Halfedge triangulation of a glued surface.

    Every face is a triangle with its own chart; vec[h] is the edge vector in
    the face's chart and vec[twin[h]] = -sign[h]·vec[h].  Vertices carry cone
    data; saddle-connection period vectors are defined up to sign.
    """

    twin: np.ndarray
    nxt: np.ndarray
    vec: np.ndarray
    sign: np.ndarray
    origin: np.ndarray
    vertices: tuple[VertexRecord, ...]
    euler_characteristic: int
    delaunay: bool = False
    linf_delaunay: bool = False
    flips: int = 0
    slope_flags: dict = field(default_factory=dict)

    @property
    def n_halfedges(self) -> int:
        return len(self.twin)

    def edge_reps(self) -> list[int]:
        return [h for h in range(self.n_halfedges) if h < self.twin[h]]

    def edge_vectors(self) -> list[complex]:
        return [complex(self.vec[h]) for h in self.edge_reps()]

    def faces(self) -> list[tuple[int, int, int]]:
        seen = np.zeros(self.n_halfedges, dtype=bool)
        out = []
        for h in range(self.n_halfedges):
            if seen[h]:
                continue
            a, b, c = h, int(self.nxt[h]), int(self.nxt[self.nxt[h]])
            if self.nxt[c] != a:
                raise QDError("face is not a triangle")
            seen[[a, b, c]] = True
            out.append((a, b, c))
        return out

    def check_invariants(self):
        nH = self.n_halfedges
        for h in range(nH):
            if self.twin[self.twin[h]] != h:
                raise QDError("twin is not an involution")
            res = self.vec[self.twin[h]] + self.sign[h] * self.vec[h]
            if abs(res) > 1e-9 * max(1.0, abs(self.vec[h])):
                raise QDError(f"twin vector mismatch at halfedge {h}")
        for a, b, c in self.faces():
            s = self.vec[a] + self.vec[b] + self.vec[c]
            if abs(s) > 1e-9 * max(1.0, abs(self.vec[a])):
                raise QDError("face does not close in its development")
        V = len(self.vertices)
        E = nH // 2
        F = len(self.faces())
        if V - E + F != self.euler_characteristic:
            raise QDError("Euler characteristic mismatch")

    def copy(self) -> "Triangulation":
        return Triangulation(
            self.twin.copy(), self.nxt.copy(), self.vec.copy(),
            self.sign.copy(), self.origin.copy(), self.vertices,
            self.euler_characteristic, self.delaunay, self.linf_delaunay,
            self.flips, dict(self.slope_flags),
        )


def triangulate(surf: HalfTranslationSurface) -> Triangulation:
    """Initial triangulation: ear-clip each polygon, diagonals glued by
    translation (sign +1) since both sides share the polygon's chart."""
    offsets = []
    total = 0
    for verts in surf.polygons:
        offsets.append(total)
        total += len(verts)

    key_to_new: dict[tuple[int, int, int], int] = {}
    vec_l: list[complex] = []
    nxt_l: list[int] = []
    origin_l: list[int] = []
    keys: list[tuple[int, int, int]] = []
    for p, verts in enumerate(surf.polygons):
        for (i, j, k) in _ear_clip(verts):
            base = len(vec_l)
            for t, (a, b) in enumerate(((i, j), (j, k), (k, i))):
                h = base + t
                vec_l.append(verts[b] - verts[a])
                nxt_l.append(base + (t + 1) % 3)
                origin_l.append(int(surf.origin[offsets[p] + a]))
                key_to_new[(p, a, b)] = h
                keys.append((p, a, b))

    nH = len(vec_l)
    twin = np.full(nH, -1, dtype=int)
    sign = np.zeros(nH, dtype=int)
    for h, (p, a, b) in enumerate(keys):
        if twin[h] >= 0:
            continue
        m = len(surf.polygons[p])
        if b == (a + 1) % m:
            hs = offsets[p] + a               # surface boundary halfedge
            ts = int(surf.twin[hs])
            p2 = int(surf.face_of[ts])
            a2 = ts - offsets[p2]
            h2 = key_to_new[(p2, a2, (a2 + 1) % len(surf.polygons[p2]))]
            twin[h], twin[h2] = h2, h
            sign[h] = sign[h2] = int(surf.sign[hs])
        else:
            h2 = key_to_new[(p, b, a)]
            twin[h], twin[h2] = h2, h
            sign[h] = sign[h2] = 1

    tri = Triangulation(
        twin=twin, nxt=np.array(nxt_l), vec=np.array(vec_l, dtype=complex),
        sign=sign, origin=np.array(origin_l), vertices=surf.vertices,
        euler_characteristic=surf.euler_characteristic,
    )
    tri.check_invariants()
    return tri


# ============================================================
# edge flips
# ============================================================

def _quad(tri: Triangulation, h: int):
    """Develop the two triangles at edge h into face(h)'s chart.

    Returns (P0, P1, P2, D): edge endpoints, apex of face(h), apex of the twin
    face; or None when both sides are the same face (unflippable)."""
    t = int(tri.twin[h])
    if t == tri.nxt[h] or t == tri.nxt[tri.nxt[h]]:
        return None
    a1 = int(tri.nxt[h])
    b1 = int(tri.nxt[t])
    P0 = 0j
    P1 = complex(tri.vec[h])
    P2 = P1 + complex(tri.vec[a1])
    D = tri.sign[h] * (complex(tri.vec[t]) + complex(tri.vec[b1])) + P1
    return P0, P1, P2, D


def _flip(tri: Triangulation, h: int):
    t = int(tri.twin[h])
    a1 = int(tri.nxt[h]); a2 = int(tri.nxt[a1])
    b1 = int(tri.nxt[t]); b2 = int(tri.nxt[b1])
    s = int(tri.sign[h])

    P2 = complex(tri.vec[h]) + complex(tri.vec[a1])
    D = s * (complex(tri.vec[t]) + complex(tri.vec[b1])) + complex(tri.vec[h])

    new_vec_b1 = s * complex(tri.vec[b1])
    new_vec_b2 = s * complex(tri.vec[b2])
    new_origin_h = int(tri.origin[b2])
    new_origin_t = int(tri.origin[a2])

    # new faces: [b1, h, a2] and [a1, t, b2], both in face(h)'s old chart
    tri.nxt[b1] = h; tri.nxt[h] = a2; tri.nxt[a2] = b1
    tri.nxt[a1] = t; tri.nxt[t] = b2; tri.nxt[b2] = a1
    tri.vec[h] = P2 - D
    tri.vec[t] = D - P2
    tri.sign[h] = tri.sign[t] = 1
    tri.vec[b1] = new_vec_b1
    tri.vec[b2] = new_vec_b2
    if s == -1:
        for e in (b1, b2):
            tri.sign[e] = -tri.sign[e]
            tri.sign[tri.twin[e]] = -tri.sign[tri.twin[e]]
    tri.origin[h] = new_origin_h
    tri.origin[t] = new_origin_t
    return a1, a2, b1, b2


def _incircle_det(a, b, c, d) -> float:
    rows = []
    for p in (a, b, c):
        dx, dy = p.real - d.real, p.imag - d.imag
        rows.append((dx, dy, dx * dx + dy * dy))
    (ax, ay, a2), (bx, by, b2), (cx, cy, c2) = rows
    return (
        ax * (by * c2 - b2 * cy)
        - ay * (bx * c2 - b2 * cx)
        + a2 * (bx * cy - by * cx)
    )


def _fingerprint(tri: Triangulation):
    items = []
    for h in tri.edge_reps():
        v = complex(tri.vec[h])
        if (v.real, v.imag) < (0.0, 0.0):
            v = -v
        o1, o2 = int(tri.origin[h]), int(tri.origin[tri.twin[h]])
        items.append((min(o1, o2), max(o1, o2), round(v.real, 9), round(v.imag, 9)))
    return tuple(sorted(items))


def _quad_convex(P0, P1, P2, D) -> bool:
    # the flip edge P2-D must properly cross the old edge P0-P1
    s1 = _cross(P1 - P0, P2 - P0)
    s2 = _cross(P1 - P0, D - P0)
    s3 = _cross(D - P2, P0 - P2)
    s4 = _cross(D - P2, P1 - P2)
    return s1 * s2 < 0 and s3 * s4 < 0


def _flip_until(tri: Triangulation, edge_ok, tol: float) -> int:
    """Flip edges failing the local criterion until all pass.

    Guards: budget of 50 flips per edge and detection of repeated
    triangulation states, both reported with the offending edge.  Edges whose
    quad is not strictly convex cannot flip and are left in place."""
    nE = tri.n_halfedges // 2
    budget = 50 * nE
    queue = deque(tri.edge_reps())
    queued = set(queue)
    states = {_fingerprint(tri)}
    flips = 0
    while queue:
        h = queue.popleft()
        queued.discard(h)
        q = _quad(tri, h)
        if q is None:
            continue
        if edge_ok(*q, tol):
            continue
        if not _quad_convex(*q):
            continue
        neighbors = _flip(tri, h)
        flips += 1
        if flips > budget:
            raise QDError(
                f"flip budget {budget} exceeded; last flipped edge had "
                f"vector {tri.vec[h]}"
            )
        fp = _fingerprint(tri)
        if fp in states:
            raise QDError(
                f"flip cycle detected after {flips} flips at edge with "
                f"vector {tri.vec[h]}"
            )
        states.add(fp)
        for e in (h,) + neighbors:
            r = min(int(e), int(tri.twin[e]))
            if r not in queued:
                queue.append(r)
                queued.add(r)
    return flips


def _euclid_edge_ok(P0, P1, P2, D, tol) -> bool:
    L = max(abs(P1 - P0), abs(P2 - P0), abs(D - P0), abs(P2 - D))
    det = _incircle_det(P0, P1, P2, D)
    return det <= tol * L**4


# ----- L-infinity: axis-aligned squares through three points -----

_SIDE_ROWS = {
    "L": (1.0, 0.0, -1.0, "x"),
    "R": (1.0, 0.0, 1.0, "x"),
    "B": (0.0, 1.0, -1.0, "y"),
    "T": (0.0, 1.0, 1.0, "y"),
}


def _squares_through(pts, rel_tol=1e-9):
    """Axis-aligned squares with the three points on the closed boundary.

    Returns (uniques, families): uniques are (cx, cy, s) with s the half-side;
    families are nondegenerate 1-parameter strips (base, direction, lo, hi)
    with square(τ) = base + τ·direction for τ in [lo, hi]."""
    L = max(abs(a - b) for a in pts for b in pts)
    tol = rel_tol * L
    uniques, families = [], []
    seen = set()
    for assign in product("LRBT", repeat=3):
        A = np.zeros((3, 3))
        rhs = np.zeros(3)
        for r, (p, side) in enumerate(zip(pts, assign)):
            cx, cy, cs, which = _SIDE_ROWS[side]
            A[r] = (cx, cy, cs)
            rhs[r] = p.real if which == "x" else p.imag
        U, sv, Vt = np.linalg.svd(A)
        if sv[2] > 1e-9 * sv[0]:
            sol = Vt.T @ ((U.T @ rhs) / sv)
            cxv, cyv, s = sol
            if s < tol:
                continue
            ok = True
            for p, side in zip(pts, assign):
                other = p.imag - cyv if _SIDE_ROWS[side][3] == "x" else p.real - cxv
                if abs(other) > s + tol:
                    ok = False
                    break
            if ok:
                key = (round(cxv / L, 9), round(cyv / L, 9), round(s / L, 9))
                if key not in seen:
                    seen.add(key)
                    uniques.append((cxv, cyv, s))
        elif sv[1] > 1e-9 * sv[0]:
            # one-parameter family: base + τ·null, constrained by the side
            # ranges and s > 0
            base = Vt.T[:, :2] @ ((U.T @ rhs)[:2] / sv[:2])
            if np.linalg.norm(A @ base - rhs) > 1e-9 * max(1.0, np.linalg.norm(rhs)):
                continue
            null = Vt.T[:, 2]
            lo, hi = -np.inf, np.inf
            # s(τ) = base[2] + τ null[2] >= tol
            cons = [(-null[2], base[2] - tol)]  # -n_s τ <= base_s - tol
            for p, side in zip(pts, assign):
                if _SIDE_ROWS[side][3] == "x":
                    c0, cn = base[1], null[1]
                    pv = p.imag
                else:
                    c0, cn = base[0], null[0]
                    pv = p.real
                # |pv - (c0 + τ cn)| <= s(τ) + tol
                cons.append((-cn - null[2], -(pv - c0) + base[2] + tol))
                cons.append((cn - null[2], (pv - c0) + base[2] + tol))
            feasible = True
            for a, b in cons:  # a τ <= b
                if abs(a) < 1e-15:
                    if b < 0:
                        feasible = False
                        break
                elif a > 0:
                    hi = min(hi, b / a)
                else:
                    lo = max(lo, b / a)
            if feasible and lo <= hi and np.isfinite(lo) and np.isfinite(hi):
                families.append((base, null, lo, hi))
    return uniques, families


def _inside_interval(d: complex, base, null, tol):
    """Open τ-interval where d lies strictly inside square(τ), or None."""
    lo, hi = -np.inf, np.inf
    for coord, ci in ((d.real, 0), (d.imag, 1)):
        # |coord - (base_c + τ null_c)| < s(τ) - tol
        c0, cn = base[ci], null[ci]
        s0, sn = base[2], null[2]
        for a, b in (
            (-cn - sn, -(coord - c0) + s0 - tol),
            (cn - sn, (coord - c0) + s0 - tol),
        ):
            # a τ < b
            if abs(a) < 1e-15:
                if b <= 0:
                    return None
            elif a > 0:
                hi = min(hi, b / a)
            else:
                lo = max(lo, b / a)
    if lo >= hi:
        return None
    return lo, hi


def _linf_edge_ok(P0, P1, P2, D, tol) -> bool:
    L = max(abs(P1 - P0), abs(P2 - P0), abs(D - P0), abs(P2 - D))
    atol = tol * L
    uniques, families = _squares_through((P0, P1, P2))
    for cx, cy, s in uniques:
        if max(abs(D.real - cx), abs(D.imag - cy)) >= s - atol:
            return True
    for base, null, lo, hi in families:
        inside = _inside_interval(D, base, null, atol)
        if inside is None:
            return True
        ilo, ihi = inside
        if lo < ilo - 1e-15 or hi > ihi + 1e-15:
            return True
    return False


def _as_triangulation(obj) -> Triangulation:
    if isinstance(obj, Triangulation):
        return obj.copy()
    if isinstance(obj, HalfTranslationSurface):
        return triangulate(obj)
    raise QDError(f"expected a surface or triangulation, got {type(obj).__name__}")


def delaunay(obj, tol: float = 1e-12) -> Triangulation:
    """Flip to the empty-circumdisk triangulation.

    Cocircular ties (determinant within tol of zero, scaled) retain the edge
    already present."""
    tri = _as_triangulation(obj)
    tri.flips = _flip_until(tri, _euclid_edge_ok, tol)
    tri.delaunay = True
    tri.linf_delaunay = False
    tri.check_invariants()
    return tri


def _slope_flag(v: complex) -> str:
    s = v.real * v.imag
    if abs(s) < 1e-14 * abs(v) ** 2:
        return "both"
    return "nonneg" if s > 0 else "nonpos"


def linf_delaunay(obj, tol: float = 1e-12) -> Triangulation:
    """Flip until every edge admits an empty axis-aligned square through the
    incident triangle with the opposite apex outside.  Records a slope-sign
    flag per edge (period vectors are defined up to sign, so only the sign of
    the slope is meaningful)."""
    tri = _as_triangulation(obj)
    tri.flips = _flip_until(tri, _linf_edge_ok, tol)
    tri.linf_delaunay = True
    tri.delaunay = False
    tri.slope_flags = {h: _slope_flag(complex(tri.vec[h])) for h in tri.edge_reps()}
    tri.check_invariants()
    return tri


# ============================================================
# development and brute-force certificates
# ============================================================

def _face_anchor(tri: Triangulation, h: int) -> int:
    a, b, c = h, int(tri.nxt[h]), int(tri.nxt[tri.nxt[h]])
    return min(a, b, c)


def _local_positions(tri: Triangulation, anchor: int):
    h1 = int(tri.nxt[anchor])
    h2 = int(tri.nxt[h1])
    return {anchor: 0j, h1: complex(tri.vec[anchor]),
            h2: complex(tri.vec[anchor]) + complex(tri.vec[h1])}


def _develop(tri: Triangulation, seed_anchor: int, keep):
    """BFS development of faces in the chart of seed_anchor's face.

    Yields (anchor, transform (s, c), {halfedge: developed origin position}).
    keep(positions) decides whether to expand across a face's edges."""
    scale = max(1.0, float(np.max(np.abs(tri.vec))))
    start = (seed_anchor, 1, 0j)
    seen = {(seed_anchor, 1, 0j)}
    queue = deque([start])
    while queue:
        anchor, S, C = queue.popleft()
        local = _local_positions(tri, anchor)
        pos = {h: S * z + C for h, z in local.items()}
        yield anchor, (S, C), pos
        if not keep(list(pos.values())):
            continue
        for h, ph in pos.items():
            t = int(tri.twin[h])
            n_anchor = _face_anchor(tri, t)
            n_local = _local_positions(tri, n_anchor)
            s_h = int(tri.sign[h])
            # map from neighbor chart: ψ(z) = s_h z + c, sending twin origin
            # to h's target
            c_h = (local[h] + complex(tri.vec[h])) - s_h * n_local[t]
            S2 = S * s_h
            C2 = S * c_h + C
            key = (n_anchor, S2, complex(round(C2.real / scale, 9),
                                         round(C2.imag / scale, 9)))
            if key in seen:
                continue
            seen.add(key)
            queue.append((n_anchor, S2, C2))


def _circumcircle(a, b, c):
    d = 2 * _cross(b - a, c - a)
    if d == 0:
        raise QDError("degenerate triangle has no circumcircle")
    ux = (
        abs(b - a) ** 2 * (c - a).imag - abs(c - a) ** 2 * (b - a).imag
    ) / d
    uy = (
        abs(c - a) ** 2 * (b - a).real - abs(b - a) ** 2 * (c - a).real
    ) / d
    center = a + complex(ux, uy)
    return center, abs(center - a)


def delaunay_certificate(tri: Triangulation, tol: float = 1e-9) -> dict:
    """Check every face's circumdisk against all developed vertex lifts, with
    no reference to how the triangulation was produced."""
    violations = []
    maxd = float(np.max(np.abs(tri.vec)))
    for a, b, c in tri.faces():
        anchor = _face_anchor(tri, a)
        local = _local_positions(tri, anchor)
        corners = list(local.values())
        center, R = _circumcircle(*corners)
        margin = R * (1 + 10 * tol) + 2 * maxd

        def keep(ps, center=center, margin=margin):
            return min(abs(p - center) for p in ps) <= margin

        for _, _, pos in _develop(tri, anchor, keep):
            for h, p in pos.items():
                if abs(p - center) < R * (1 - tol):
                    if any(abs(p - q) < tol * R for q in corners):
                        continue
                    violations.append(
                        {"face_anchor": anchor, "vertex": int(tri.origin[h]),
                         "position": p, "depth": abs(p - center) / R}
                    )
    return {"ok": not violations, "violations": violations}


def linf_delaunay_certificate(tri: Triangulation, tol: float = 1e-9) -> dict:
    """Check that every face has an axis-aligned square through its corners
    whose interior is free of developed vertex lifts."""
    violations = []
    for a, b, c in tri.faces():
        anchor = _face_anchor(tri, a)
        local = _local_positions(tri, anchor)
        corners = list(local.values())
        Lsc = max(abs(u - v) for u in corners for v in corners)
        atol = tol * Lsc
        uniques, families = _squares_through(tuple(corners))
        if not uniques and not families:
            violations.append({"face_anchor": anchor, "reason": "no square"})
            continue

        # collect all vertex lifts near the face once, then test candidates
        maxd = float(np.max(np.abs(tri.vec)))
        reach = max(
            [2 * s for _, _, s in uniques]
            + [2 * (b_[2] + max(abs(lo), abs(hi)) * abs(n_[2]))
               for b_, n_, lo, hi in families]
        )
        cen0 = sum(corners) / 3

        def keep(ps, cen0=cen0, reach=reach, maxd=maxd):
            return min(abs(p - cen0) for p in ps) <= 2 * reach + 2 * maxd

        lifts = []
        for _, _, pos in _develop(tri, anchor, keep):
            for h, p in pos.items():
                if any(abs(p - q) < atol for q in corners):
                    continue
                lifts.append(p)

        ok = False
        for cx, cy, s in uniques:
            if all(
                max(abs(p.real - cx), abs(p.imag - cy)) >= s - atol
                for p in lifts
            ):
                ok = True
                break
        if not ok:
            for base, null, lo, hi in families:
                segments = [(lo, hi)]
                for p in lifts:
                    inside = _inside_interval(p, base, null, atol)
                    if inside is None:
                        continue
                    ilo, ihi = inside
                    segments = [
                        piece
                        for (slo, shi) in segments
                        for piece in ((slo, min(shi, ilo)), (max(slo, ihi), shi))
                        if piece[0] < piece[1] - 1e-15
                    ]
                    if not segments:
                        break
                if segments:
                    ok = True
                    break
        if not ok:
            violations.append({"face_anchor": anchor, "reason": "no empty square"})
    return {"ok": not violations, "violations": violations}


# ============================================================
# diameter by geodesic sampling
# ============================================================

def _diameter_on_graph(tri: Triangulation, k: int) -> float:
    node_ids: dict = {}
    positions: list[complex] = []

    def node(key, pos):
        if key not in node_ids:
            node_ids[key] = len(positions)
            positions.append(pos)
        return node_ids[key]

    rows, cols, data = [], [], []
    vertex_nodes: set[int] = set()
    for a, b, c in tri.faces():
        anchor = _face_anchor(tri, a)
        local = _local_positions(tri, anchor)
        hs = [anchor, int(tri.nxt[anchor]), int(tri.nxt[tri.nxt[anchor]])]
        A, B, C = (local[h] for h in hs)
        ids = []
        for i in range(k + 1):
            for j in range(k + 1 - i):
                pos = A + (B - A) * (i / k) + (C - A) * (j / k)
                l = k - i - j
                # canonical key: corners by vertex id, edge interiors by the
                # edge representative and offset, face interiors per face
                if i == k:
                    key = ("v", int(tri.origin[hs[1]]))
                elif j == k:
                    key = ("v", int(tri.origin[hs[2]]))
                elif l == k:
                    key = ("v", int(tri.origin[hs[0]]))
                elif l == 0:
                    h = hs[1]  # edge B->C, fraction j/k from B
                    e, frac = (h, j) if h < tri.twin[h] else (int(tri.twin[h]), k - j)
                    key = ("e", e, frac)
                elif j == 0:
                    h = hs[0]  # edge A->B, fraction i/k from A
                    e, frac = (h, i) if h < tri.twin[h] else (int(tri.twin[h]), k - i)
                    key = ("e", e, frac)
                elif i == 0:
                    h = hs[2]  # edge C->A, fraction (k-j)/k from C
                    e, frac = (h, k - j) if h < tri.twin[h] else (int(tri.twin[h]), j)
                    key = ("e", e, frac)
                else:
                    key = ("f", anchor, i, j)
                nid = node(key, pos)
                if key[0] == "v":
                    vertex_nodes.add(nid)
                ids.append((nid, pos))
        for x in range(len(ids)):
            ax, px = ids[x]
            for y in range(x + 1, len(ids)):
                ay, py = ids[y]
                if ax == ay:
                    continue
                w = abs(px - py)
                rows.append(ax); cols.append(ay); data.append(w)

    n = len(positions)
    g = csr_matrix((data, (rows, cols)), shape=(n, n))
    sources = sorted(vertex_nodes)
    have = set(sources)
    best = 0.0
    for _ in range(8):
        dist = dijkstra(g, directed=False, indices=sources)
        best = max(best, float(dist.max()))
        far = int(np.argmax(dist.min(axis=0)))  # farthest from the source set
        if far in have:
            break
        sources.append(far)
        have.add(far)
    return best


def surface_diameter(obj, rel_tol: float = 1e-3) -> float:
    """Geodesic diameter, from shortest paths on barycentric sample graphs at
    two refinement levels with Richardson extrapolation."""
    tri = _as_triangulation(obj)
    d1 = _diameter_on_graph(tri, 8)
    d2 = _diameter_on_graph(tri, 16)
    d = (4 * d2 - d1) / 3
    if abs(d2 - d1) > 12 * rel_tol * max(d, 1e-300):
        d3 = _diameter_on_graph(tri, 32)
        d = (4 * d3 - d2) / 3
    return float(d)


# ============================================================
# induced subgraph connectivity
# ============================================================

def cluster_subgraph_connected(tri: Triangulation, D):
    """Is the subgraph induced by the vertex set D connected in tri?

    Returns (True, spanning tree edges) or (False, (component, rest)): the
    separating cut is the partition with no induced edge across it."""
    Dset = {int(v) for v in D}
    if not Dset:
        raise QDError("vertex set is empty")
    nV = len(tri.vertices)
    if any(not 0 <= v < nV for v in Dset):
        raise QDError("vertex index out of range")
    adj: dict[int, set[int]] = {v: set() for v in Dset}
    for h in tri.edge_reps():
        u, w = int(tri.origin[h]), int(tri.origin[tri.twin[h]])
        if u in Dset and w in Dset and u != w:
            adj[u].add(w)
            adj[w].add(u)
    start = next(iter(Dset))
    seen = {start}
    tree = []
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in sorted(adj[u]):
            if w not in seen:
                seen.add(w)
                tree.append((u, w))
                queue.append(w)
    if seen == Dset:
        return True, tree
    return False, (sorted(seen), sorted(Dset - seen))


# ============================================================
# right polygons around singularity groups
# ============================================================

@dataclass(frozen=True)
class NRRP:
    """A right polygon: boundary of alternating vertical/horizontal geodesic
    segments, every interior angle π/2, traced around a group of
    singularities of a sphere differential.

    sides are (label, q-length) with label 'v' or 'h'; interior lists the
    singularities enclosed; radius is the q-distance from the boundary to the
    nearest interior singularity; corners are the traced corner points in the
    differential's coordinate."""

    sides: tuple[tuple[str, float], ...]
    interior: tuple[SingularityRecord, ...]
    radius: float
    corners: tuple[complex, ...] = ()
    center: complex = 0j

    def __post_init__(self):
        n = len(self.sides)
        if n < 2:
            raise QDError("a right polygon needs at least two sides")
        for lab, ln in self.sides:
            if lab not in ("v", "h"):
                raise QDError(f"side label must be 'v' or 'h', got {lab!r}")
            if not ln > 0:
                raise QDError("side lengths must be positive")
        for i in range(n):
            if self.sides[i][0] == self.sides[(i + 1) % n][0]:
                raise QDError("side directions must alternate")
        if not self.interior:
            raise QDError("a right polygon must enclose at least one singularity")
        npoles = sum(1 for s in self.interior if s.order <= -1)
        if npoles > 1:
            raise QDError("a right polygon may enclose at most one pole")
        if any(s.order < -1 for s in self.interior):
            raise QDError("enclosed singularity orders must be at least -1")
        total = sum(s.order for s in self.interior)
        if n != 2 * (total + 2):
            raise QDError(
                f"{n} sides inconsistent with enclosed total order {total}: "
                f"need {2 * (total + 2)}"
            )
        if not self.radius > 0:
            raise QDError("radius must be positive")

    def to_spec(self) -> "RightPolygonSpec":
        return RightPolygonSpec(
            sides=self.sides,
            interior_orders=tuple(s.order for s in self.interior),
        )


@dataclass(frozen=True)
class RightPolygonSpec:
    """Solver-grade right polygon data: side labels/lengths and the orders of
    the singularities inside.  Unlike NRRP this admits an empty interior
    (degenerate rectangles used to exercise the doubling solver)."""

    sides: tuple[tuple[str, float], ...]
    interior_orders: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.sides)
        if n < 2:
            raise QDError("a right polygon needs at least two sides")
        for lab, ln in self.sides:
            if lab not in ("v", "h"):
                raise QDError(f"side label must be 'v' or 'h', got {lab!r}")
            if not ln > 0:
                raise QDError("side lengths must be positive")
        for i in range(n):
            if self.sides[i][0] == self.sides[(i + 1) % n][0]:
                raise QDError("side directions must alternate")
        total = sum(self.interior_orders)
        if n != 2 * (total + 2):
            raise QDError(
                f"{n} sides inconsistent with interior total order {total}: "
                f"need {2 * (total + 2)}"
            )


def save_nrrp(obj, path):
    data = {"sides": [[lab, ln] for lab, ln in obj.sides]}
    if isinstance(obj, NRRP):
        data["interior_orders"] = [s.order for s in obj.interior]
        data["radius"] = obj.radius
        data["center"] = [obj.center.real, obj.center.imag]
        data["corners"] = [[c.real, c.imag] for c in obj.corners]
    else:
        data["interior_orders"] = list(obj.interior_orders)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1)


def load_nrrp(path) -> RightPolygonSpec:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return RightPolygonSpec(
        sides=tuple((lab, float(ln)) for lab, ln in data["sides"]),
        interior_orders=tuple(int(o) for o in data.get("interior_orders", ())),
    )


# ----- unit-speed tracing of vertical/horizontal geodesics -----

def _qval(scale, zs, es, z):
    v = complex(scale)
    for zj, ej in zip(zs, es):
        v *= (z - zj) ** ej
    return v


def _sqrt_cont(qv, ref):
    s = cmath.sqrt(qv)
    return s if abs(s - ref) <= abs(s + ref) else -s


def _trace_side(scale, zs, es, z, sq, u, length, collect=None):
    """Integrate dz/ds = u/√q for flat length `length`, continuing the branch
    of √q from sq.  Substeps adapt to the distance to the nearest singularity.
    Returns (z_end, sq_end)."""
    s_done = 0.0
    steps = 0
    floor = length / 4096
    while s_done < length:
        dist = min((abs(z - zj) for zj in zs), default=float("inf"))
        ds = max(min(length - s_done, 0.15 * dist * abs(sq), 0.05 * length), floor)
        ds = min(ds, length - s_done)
        k1 = u / _sqrt_cont(_qval(scale, zs, es, z), sq)
        k2 = u / _sqrt_cont(_qval(scale, zs, es, z + 0.5 * ds * k1), sq)
        k3 = u / _sqrt_cont(_qval(scale, zs, es, z + 0.5 * ds * k2), sq)
        k4 = u / _sqrt_cont(_qval(scale, zs, es, z + ds * k3), sq)
        z = z + ds / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        sq = _sqrt_cont(_qval(scale, zs, es, z), sq)
        s_done += ds
        steps += 1
        if collect is not None:
            collect.append(z)
        if steps > 20000:
            raise QDError("geodesic tracing stalled near a singularity")
    return z, sq


def _trace_polygon(scale, zs, es, z0, sq0, lengths, collect=None):
    """Trace the closed right polygon: side j runs in flat direction i^(j+1)
    (vertical first) for lengths[j].  Returns (z_end, corners, sq_end)."""
    z, sq = z0, sq0
    corners = [z0]
    for j, ln in enumerate(lengths):
        u = 1j * (1j) ** j
        z, sq = _trace_side(scale, zs, es, z, sq, u, ln, collect)
        corners.append(z)
    return z, corners, sq


def _dev_ray_offset(scale, zs, es, center, phi, r):
    """∫ √q dz from center to center + r e^{iφ} along the straight ray, with
    the branch continued inward from the outer endpoint (principal there).
    Returns (offset, sq_outer): the flat displacement and the branch at the
    outer end."""
    # graded nodes accumulate near the (possibly singular) center
    N = 96
    taus = np.linspace(0.0, 1.0, N + 1)
    ts = r * taus**2
    dirn = cmath.exp(1j * phi)
    pts = [center + t * dirn for t in ts]
    vals = [cmath.sqrt(_qval(scale, zs, es, p)) if t > 0 else 0j
            for t, p in zip(ts, pts)]
    # continue the branch from the outer end inward
    for k in range(N - 1, 0, -1):
        vals[k] = _sqrt_cont(_qval(scale, zs, es, pts[k]), vals[k + 1])
    total = 0j
    for k in range(N):
        total += (vals[k] + vals[k + 1]) / 2 * (pts[k + 1] - pts[k])
    return total, vals[N]


def _winding_numbers(samples, points):
    zs = np.asarray(samples, dtype=complex)
    out = []
    for p in points:
        rel = zs - p
        ang = np.angle(rel[1:] / rel[:-1])
        out.append(float(np.sum(ang)) / (2 * math.pi))
    return out


def _trace_right_polygon(q, part, center, R):
    """Trace a closed right polygon of inradius ~R around the singularities
    listed in `part` (indices into the finite singularities of q), centered
    at `center`.

    Nominal side length is 2R; the first two sides carry the closing
    correction.  Returns an NRRP."""
    scale, zs, es = _prep(q)
    members = [int(i) for i in part]
    M = int(sum(es[i] for i in members))
    n = 2 * (M + 2)
    rho = R * math.sqrt(2)

    # jump-off radius from the local model t (z-center)^M with t the product
    # of the distant factors at the center
    t_loc = complex(scale)
    for j, (zj, ej) in enumerate(zip(zs, es)):
        if j not in members:
            t_loc *= (center - zj) ** ej
    if t_loc == 0:
        raise QDError("local coefficient vanishes at the polygon center")
    r_jump = ((M + 2) * rho * 1e-3 / (2 * math.sqrt(abs(t_loc)))) ** (2.0 / (M + 2))

    # shoot the entry ray away from the other singularities
    best_phi, best_score = 0.0, -1.0
    for kk in range(32):
        phi = 2 * math.pi * kk / 32 + 0.0391
        score = min(
            (abs(cmath.phase(cmath.exp(1j * (cmath.phase(zj - center) - phi))))
             for j, zj in enumerate(zs) if abs(zs[j] - center) > 1e-12),
            default=math.pi,
        )
        if score > best_score:
            best_score, best_phi = score, phi

    dev_jump, sq_outer = _dev_ray_offset(scale, zs, es, center, best_phi, r_jump)
    rho_jump = abs(dev_jump)
    z_start = center + r_jump * cmath.exp(1j * best_phi)
    # ride the remaining distance in flat direction e^{-iπ/4} relative to the
    # branch at the jump-off point
    sq = sq_outer
    z_corner, sq = _trace_side(scale, zs, es, z_start, sq,
                               cmath.exp(-1j * math.pi / 4), rho - rho_jump)

    base = [2 * R] * n

    def residual(d0, d1):
        lengths = list(base)
        lengths[0] += d0
        lengths[1] += d1
        z_end, corners, _ = _trace_polygon(scale, zs, es, z_corner, sq, lengths)
        return z_end - z_corner, corners

    d0 = d1 = 0.0
    fd = 1e-7 * R
    sq_mag = abs(sq)
    ftol = 1e-11 * n * 2 * R / max(sq_mag, 1e-300)
    F, corners = residual(d0, d1)
    for _ in range(30):
        if abs(F) <= ftol:
            break
        Fp0, _ = residual(d0 + fd, d1)
        Fp1, _ = residual(d0, d1 + fd)
        Jm = np.array([
            [(Fp0 - F).real / fd, (Fp1 - F).real / fd],
            [(Fp0 - F).imag / fd, (Fp1 - F).imag / fd],
        ])
        rhs = -np.array([F.real, F.imag])
        try:
            step = np.linalg.solve(Jm, rhs)
        except np.linalg.LinAlgError:
            raise QDError("right polygon closure system is singular") from None
        lam = 1.0
        for _ in range(8):
            F2, corners2 = residual(d0 + lam * step[0], d1 + lam * step[1])
            if abs(F2) < abs(F):
                d0 += lam * step[0]
                d1 += lam * step[1]
                F, corners = F2, corners2
                break
            lam /= 2
        else:
            raise QDError("right polygon closure did not improve")
    else:
        raise QDError(
            f"right polygon failed to close within budget (residual {abs(F):.3g})"
        )
    if min(base[0] + d0, base[1] + d1) <= 0:
        raise QDError("closing correction degenerated a polygon side")

    lengths = list(base)
    lengths[0] += d0
    lengths[1] += d1

    # containment: winding number of the traced boundary must be ±1 around
    # every enclosed singularity and 0 around every other one
    samples: list[complex] = [z_corner]
    _trace_polygon(scale, zs, es, z_corner, sq, lengths, collect=samples)
    samples.append(z_corner)
    winds = _winding_numbers(samples, zs)
    ref = None
    for j, wnd in enumerate(winds):
        target = 1.0 if j in members else 0.0
        if abs(abs(wnd) - target) > 0.1:
            raise QDError(
                f"traced polygon winds {wnd:.3f} times around singularity "
                f"{j}; expected {'±1' if j in members else '0'}"
            )
        if j in members:
            if ref is None:
                ref = 1.0 if wnd > 0 else -1.0
            elif (wnd > 0) != (ref > 0):
                raise QDError("traced polygon winds inconsistently around its group")

    # developed corner positions relative to the center: every corner of the
    # ideal polygon sits at distance ρ from the apex
    w = rho * cmath.exp(-1j * math.pi / 4)
    dev = [w]
    for j, ln in enumerate(lengths):
        w = w + ln * (1j * (1j) ** j)
        dev.append(w)

    def seg_dist(a, b):
        ab = b - a
        t = max(0.0, min(1.0, (-(a.conjugate() * ab).real) / abs(ab) ** 2))
        return abs(a + t * ab)

    boundary_to_center = min(seg_dist(dev[j], dev[j + 1]) for j in range(n))
    spread = 0.0
    for i in members:
        if abs(zs[i] - center) > 1e-12 * max(1.0, abs(center)):
            spread = max(
                spread,
                contour_flat_length(
                    q,
                    Contour((center, complex(zs[i])), endpoint_singular=(False, True)),
                    rel_tol=1e-8,
                ),
            )
    radius = boundary_to_center - spread
    if radius <= 0:
        raise QDError("traced polygon does not enclose its cluster with margin")

    labels = ["v" if j % 2 == 0 else "h" for j in range(n)]
    interior = _interior_records(q, members)
    return NRRP(
        sides=tuple(zip(labels, lengths)),
        interior=interior,
        radius=radius,
        corners=tuple(corners[:-1]),
        center=center,
    ), (dev, rho)


def _interior_records(q, members):
    recs = []
    finite = [s for s in q.singularities if s.location is not INF]
    for i in members:
        recs.append(finite[i])
    return tuple(recs)


def right_polygon(q, indices, inradius: float | None = None) -> NRRP:
    """Trace one right polygon around the finite singularities at `indices`.

    Without an explicit inradius it defaults to one twelfth of the smallest
    straight-segment q-length from the group to any other singularity (an
    upper bound on the true separation, so pair the result with its winding
    and radius guarantees rather than with system-level separation claims)."""
    if hasattr(q, "to_rational"):
        q = q.to_rational()
    scale, zs, es = _prep(q)
    part = tuple(int(i) for i in indices)
    if not part:
        raise QDError("empty singularity group")
    if any(not 0 <= i < len(zs) for i in part):
        raise QDError("singularity index out of range")
    members = set(part)
    ords = [int(es[i]) for i in part]
    if sum(1 for o in ords if o <= -1) > 1:
        raise QDError("a right polygon may enclose at most one pole")
    Mtot = sum(ords)
    if Mtot >= 1:
        center = complex(sum(es[i] * zs[i] for i in part) / Mtot)
    else:
        center = complex(np.mean([zs[i] for i in part]))
    if inradius is None:
        outside = [j for j in range(len(zs)) if j not in members]
        if outside:
            sep = min(
                contour_flat_length(
                    q,
                    Contour((complex(zs[i]), complex(zs[j]))),
                    rel_tol=1e-8,
                )
                for i in part
                for j in outside
            )
        else:
            probe = center + 2 * _span(list(zs)) + 1.0
            sep = flat_length(q, center, probe, rel_tol=1e-6)
        inradius = sep / 12
    poly, _ = _trace_right_polygon(q, part, center, float(inradius))
    return poly


def nrrp_system(q, delta: float, rel_tol: float = 1e-3) -> list[NRRP]:
    """One right polygon per δ-cluster and per leftover singleton of the
    finite singularities of q, each enclosing exactly its group.

    The inradius is 1/12 of the group's separation from the other
    singularities; polygon radius and side lengths are checked against
    C = separation/24, and distinct polygons are checked to be separated by
    more than twice the longest side."""
    if isinstance(q, (HalfTranslationSurface, Triangulation)):
        raise QDError(
            "right polygon systems are computed on sphere differentials; "
            "triangulated surfaces are not supported"
        )
    if hasattr(q, "to_rational"):
        q = q.to_rational()
    scale, zs, es = _prep(q)
    npts = len(zs)
    if npts == 0:
        raise QDError("differential has no finite singularities")

    if npts >= 3:
        clusters = delta_clusters(list(zs), delta, metric="q", q=q)
    else:
        clusters = []
    in_cluster = {i for cl in clusters for i in cl}
    parts = [tuple(cl) for cl in clusters] + [
        (i,) for i in range(npts) if i not in in_cluster
    ]

    if npts >= 2:
        pw = pairwise_flat_distances(q, list(zs), tol=rel_tol)
    else:
        pw = None

    results = []
    details = []
    for part in parts:
        members = set(part)
        ords = [int(es[i]) for i in part]
        if sum(1 for o in ords if o <= -1) > 1:
            raise QDError(
                f"group {tuple(sorted(members))} holds more than one pole; "
                "no right polygon exists around it"
            )
        Mtot = sum(ords)
        if Mtot >= 1:
            wsum = sum(es[i] * zs[i] for i in part)
            center = complex(wsum / Mtot)
        else:
            center = complex(np.mean([zs[i] for i in part]))

        if pw is not None and len(members) < npts:
            sep = min(
                float(pw[i, j]) for i in part for j in range(npts) if j not in members
            )
        else:
            probe = complex(zs[part[0]]) + 2 * _span(list(zs)) + 1.0
            sep = flat_length(q, center, probe, rel_tol=1e-6)

        R = sep / 12
        C = sep / 24
        spread = 0.0
        blocking = part[0]
        for i in part:
            if abs(zs[i] - center) <= 1e-12 * max(1.0, abs(center)):
                continue
            d = contour_flat_length(
                q, Contour((center, complex(zs[i])), endpoint_singular=(False, True)),
                rel_tol=1e-8,
            )
            if d > spread:
                spread = d
                blocking = i
        if spread > R / 2:
            outside = [(float(pw[blocking, j]), j) for j in range(npts)
                       if j not in members] if pw is not None else []
            jmin = min(outside)[1] if outside else None
            raise QDError(
                f"no admissible right polygon at delta={delta}: group "
                f"{tuple(sorted(members))} is too entangled; blocking pair "
                f"({blocking}, {jmin})"
            )

        poly, (dev, rho) = _trace_right_polygon(q, part, center, R)
        if poly.radius < C:
            raise QDError(
                f"polygon radius {poly.radius:.3g} under the scale floor {C:.3g}"
            )
        if min(ln for _, ln in poly.sides) < C:
            raise QDError(
                f"polygon side under the scale floor {C:.3g}"
            )
        results.append(poly)
        details.append({"part": part, "sep": sep, "rho": rho, "spread": spread})

    # pairwise separation of the polygons: boundary-to-boundary distance is
    # at least the singularity separation minus both extents
    for a in range(len(results)):
        for b in range(a + 1, len(results)):
            pa, pb = details[a]["part"], details[b]["part"]
            sep_ab = min(float(pw[i, j]) for i in pa for j in pb)
            ext_a = details[a]["rho"] + details[a]["spread"]
            ext_b = details[b]["rho"] + details[b]["spread"]
            gap = sep_ab - ext_a - ext_b
            max_side = max(ln for poly in (results[a], results[b])
                           for _, ln in poly.sides)
            if not gap > 2 * max_side:
                raise QDError(
                    f"polygons around {pa} and {pb} are too close: boundary "
                    f"gap at least {gap:.3g} vs required {2 * max_side:.3g}"
                )
    return results


# ============================================================
# doubling: recover a symmetric differential from side lengths
# ============================================================

@dataclass(frozen=True)
class DoubleResult:
    """Outcome of the doubling solve.

    differential has real coefficients: simple poles at the real corner
    images (marked), interior singularities in conjugate pairs, and the point
    at infinity regular (it lies inside the closing side)."""

    differential: RationalQD
    corners: tuple[float, ...]
    interior: tuple[complex, ...]
    side_lengths: tuple[float, ...]
    residuals: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    residual_history: tuple[float, ...]


def _double_q(corners, ws, orders, lam) -> RationalQD:
    recs = [SingularityRecord(float(x), -1, True) for x in corners]
    for w, m in zip(ws, orders):
        if m >= 1:
            recs.append(SingularityRecord(complex(w), int(m), False))
            recs.append(SingularityRecord(complex(w).conjugate(), int(m), False))
        elif m == -1:
            recs.append(SingularityRecord(complex(w), -1, True))
            recs.append(SingularityRecord(complex(w).conjugate(), -1, True))
        elif m == 0:
            recs.append(SingularityRecord(complex(w), 0, True))
            recs.append(SingularityRecord(complex(w).conjugate(), 0, True))
    return RationalQD(float(lam), tuple(recs))


def _closing_length(corners, ws, orders, lam, rel_tol=1e-10) -> float:
    """q-length of the boundary side running from the last corner through ∞
    to the first corner, via the Möbius chart u = -1/(z - s) with s the
    midpoint of the first side."""
    q = _double_q(corners, ws, orders, lam)
    s_ref = (corners[0] + corners[1]) / 2
    a = float(corners[-1])
    A = -1.0 / (a - s_ref)
    B = -1.0 / (corners[0] - s_ref)
    # the same map as u = -1/(z - s_ref), pinned by three of its values
    qt = mobius_normalize(q, (len(corners) - 1, INF, 0), (A, 0.0, B))
    return flat_length(qt, A, B, rel_tol=rel_tol)


def _side_lengths_of(corners, ws, orders, lam, rel_tol=1e-10) -> np.ndarray:
    q = _double_q(corners, ws, orders, lam)
    out = []
    for i in range(len(corners) - 1):
        out.append(flat_length(q, corners[i], corners[i + 1], rel_tol=rel_tol))
    out.append(_closing_length(corners, ws, orders, lam, rel_tol=rel_tol))
    return np.array(out)


def _finite_side_chart(q, corners) -> PeriodChart:
    contours, edges, anchors, values = [], [], [], []
    for i in range(len(corners) - 1):
        cont = Contour((complex(corners[i]), complex(corners[i + 1])))
        res = period_detailed(q, cont, tol=1e-12)
        contours.append(cont)
        edges.append((i, i + 1))
        anchors.append(res.ref)
        values.append(res.value)
    return PeriodChart(tuple(contours), tuple(edges), tuple(anchors), tuple(values))


def double_nrrp(poly, tol: float = 1e-10, max_iter: int = 40, initial=None) -> DoubleResult:
    """Solve for a conjugation-symmetric sphere differential whose bounded
    half is the given right polygon.

    Corners map to simple poles on the real axis with the first two pinned at
    0 and 1 and the last pinned at its initial value (the remaining Möbius
    gauge); interior singularities sit in the upper half plane with mirror
    images below; ∞ is a regular point interior to the closing side.  The
    side lengths of the polygon are matched by a Gauss-Newton iteration whose
    finite-side rows come from the analytic period Jacobian.

    Non-convergence within the budget returns the best iterate with
    converged=False; an initial guess violating the corner ordering raises."""
    spec = poly.to_spec() if isinstance(poly, NRRP) else poly
    if not isinstance(spec, RightPolygonSpec):
        raise QDError("expected an NRRP or RightPolygonSpec")
    n = len(spec.sides)
    targets = np.array([ln for _, ln in spec.sides])
    orders = [o for o in spec.interior_orders if o != 0]
    marked_orders = [o for o in spec.interior_orders if o == 0]
    if marked_orders:
        raise QDError("interior marked points carry no length data; drop them")
    J = len(orders)
    if sum(1 for o in orders if o <= -1) > 1:
        raise QDError("at most one interior pole is supported")
    nfree_x = max(n - 3, 0)
    if nfree_x + 2 * J + 1 > n + (1 if n == 2 else 0):
        raise QDError(
            "side lengths alone underdetermine a polygon with "
            f"{J} interior singularities"
        )

    scale_len = float(np.mean(targets))

    # ----- initial guess -----
    if initial is not None:
        q0 = initial
        reals = sorted(
            s.location.real for s in q0.singularities
            if s.location is not INF and abs(complex(s.location).imag) < 1e-12
        )
        if len(reals) != n:
            raise QDError("invalid initial guess (degenerate corner ordering)")
        corners = [float(x) for x in reals]
        if abs(corners[0]) > 1e-9 or abs(corners[1] - 1) > 1e-9:
            raise QDError("invalid initial guess (degenerate corner ordering)")
        ws = [complex(s.location) for s in q0.singularities
              if s.location is not INF and complex(s.location).imag > 1e-12]
        if len(ws) != J:
            raise QDError("initial guess has the wrong interior structure")
        lam = float(np.real(q0.scale))
    else:
        cum = np.concatenate([[0.0], np.cumsum(targets[: n - 1])]) / targets[0]
        corners = [float(c) for c in cum]
        ws = []
        if J:
            mid = (corners[0] + corners[-1]) / 2 if n > 2 else 0.5
            ws = [complex(mid, float(np.mean(np.diff(corners))) or 1.0)]
            if J > 1:
                raise QDError("more than one interior singularity is not supported")
        # orientation: match the first side's label, then match its length
        lam = 1.0
        q_try = _double_q(corners, ws, orders, lam)
        mid0 = (corners[0] + corners[1]) / 2
        val = qd_evaluate(q_try, mid0)
        want_vertical = spec.sides[0][0] == "v"
        if (val.real > 0) == want_vertical:
            lam = -1.0
        s0 = flat_length(_double_q(corners, ws, orders, lam),
                         corners[0], corners[1], rel_tol=1e-8)
        lam *= (targets[0] / s0) ** 2

    for i in range(n - 1):
        if not corners[i] < corners[i + 1] - 1e-12:
            raise QDError("invalid initial guess (degenerate corner ordering)")
    x_last = corners[-1]

    def pack():
        p = [corners[i] for i in range(2, n - 1)]
        for w in ws:
            p += [w.real, w.imag]
        p.append(lam)
        return np.array(p)

    def unpack(p):
        cs = [0.0, 1.0] + [float(v) for v in p[: nfree_x]] + ([x_last] if n > 2 else [])
        if n == 2:
            cs = [0.0, 1.0]
        wl = []
        for j in range(J):
            wl.append(complex(p[nfree_x + 2 * j], p[nfree_x + 2 * j + 1]))
        lm = float(p[-1])
        return cs, wl, lm

    def admissible(cs, wl, lm):
        for i in range(len(cs) - 1):
            if not cs[i] < cs[i + 1] - 1e-12:
                return False
        for w in wl:
            if not w.imag > 1e-12:
                return False
            if any(abs(w - c) < 1e-9 for c in cs):
                return False
        if lm == 0 or (lm > 0) != (lam_sign > 0):
            return False
        return True

    lam_sign = lam

    def residual_vec(cs, wl, lm):
        s = _side_lengths_of(cs, wl, orders, lm)
        r = list(s - targets)
        if n == 2:
            r.append((wl[0].real - 0.5) * scale_len)
        return np.array(r), s

    p = pack()
    corners, ws, lam = unpack(p)
    r, sides_now = residual_vec(corners, ws, lam)
    history = [float(np.linalg.norm(r, np.inf))]
    best = (history[0], p.copy(), r.copy(), sides_now.copy())
    iterations = 0
    stalls = 0
    converged = history[0] < tol

    while not converged and iterations < max_iter:
        q_now = _double_q(corners, ws, orders, lam)
        chart = _finite_side_chart(q_now, corners)
        Jc = period_jacobian(q_now, chart, tol=1e-12)
        nparams = len(p)
        Jr = np.zeros((len(r), nparams))
        Pv = np.array(chart.values)
        Ph = Pv / np.abs(Pv)
        # finite-side rows from the analytic period Jacobian
        for i in range(n - 1):
            for k in range(nfree_x):
                Jr[i, k] = (Ph[i].conjugate() * Jc[i, 2 + k]).real
            for j in range(J):
                cw = Jc[i, n + 2 * j]
                cwb = Jc[i, n + 2 * j + 1]
                Jr[i, nfree_x + 2 * j] = (Ph[i].conjugate() * (cw + cwb)).real
                Jr[i, nfree_x + 2 * j + 1] = (
                    Ph[i].conjugate() * (1j * cw - 1j * cwb)
                ).real
            Jr[i, -1] = sides_now[i] / (2 * lam)
        # closing-side row by central differences
        for k in range(nparams):
            h = 1e-6 * (abs(p[k]) + scale_len)
            pp = p.copy(); pp[k] += h
            pm = p.copy(); pm[k] -= h
            csp, wlp, lmp = unpack(pp)
            csm, wlm, lmm = unpack(pm)
            up = _closing_length(csp, wlp, orders, lmp, rel_tol=1e-9)
            um = _closing_length(csm, wlm, orders, lmm, rel_tol=1e-9)
            Jr[n - 1, k] = (up - um) / (2 * h)
        if n == 2:
            Jr[n, nfree_x] = scale_len  # gauge: Re w pinned

        # collinear starting configurations make the side map nearly
        # rank-deficient; damp tiny singular directions and cap the step
        # instead of trusting the raw least-squares solution
        U, S, Vt = np.linalg.svd(Jr, full_matrices=False)
        if S[0] <= 0:
            break
        rhs = U.T @ -r
        cap = 10.0 * max(1.0, float(np.abs(p).max()))
        accepted = False
        mu = 0.0
        for _attempt in range(6):
            if mu == 0.0:
                Sf = np.where(S > 1e-8 * S[0], S, np.inf)
                step = Vt.T @ (rhs / Sf)
            else:
                step = Vt.T @ ((S * rhs) / (S * S + mu))
            norm_step = float(np.abs(step).max())
            if norm_step > cap:
                step = step * (cap / norm_step)
            lamf = 1.0
            for _ in range(10):
                p_try = p + lamf * step
                cs, wl, lm = unpack(p_try)
                if admissible(cs, wl, lm):
                    r_try, sides_try = residual_vec(cs, wl, lm)
                    if np.linalg.norm(r_try, np.inf) < history[-1]:
                        p = p_try
                        corners, ws, lam = cs, wl, lm
                        r, sides_now = r_try, sides_try
                        accepted = True
                        break
                lamf /= 2
            if accepted:
                break
            mu = S[0] ** 2 * 1e-6 if mu == 0.0 else mu * 30.0
        iterations += 1
        if not accepted:
            break
        history.append(float(np.linalg.norm(r, np.inf)))
        if history[-1] < best[0]:
            best = (history[-1], p.copy(), r.copy(), sides_now.copy())
        if history[-1] < tol:
            converged = True
        elif history[-2] - history[-1] < 1e-3 * history[-1]:
            # progress stalled at a nonzero floor: the target side vector is
            # not attainable (e.g. it violates the closure constraint of the
            # interior structure); stop at the least-squares plateau
            stalls += 1
            if stalls >= 2:
                break
        else:
            stalls = 0

    _, p_best, r_best, sides_best = best
    corners, ws, lam = unpack(p_best)
    qfin = _double_q(corners, ws, orders, lam)
    return DoubleResult(
        differential=qfin,
        corners=tuple(float(c) for c in corners),
        interior=tuple(ws),
        side_lengths=tuple(float(s) for s in sides_best),
        residuals=r_best,
        residual_norm=float(np.linalg.norm(r_best, np.inf)),
        iterations=iterations,
        converged=converged,
        residual_history=tuple(history),
    )
