"""Collision clusters of singularities and their polynomial models.

A δ-cluster is a set of at least two singularities whose mutual distances are
at most δ times the distance to every singularity outside the set (complement
nonempty).  Every such set is a connected component of a distance-threshold
graph, so the single-linkage merge tree enumerates all candidates; maximal
valid ones are reported, and recursion inside each cluster produces the full
hierarchy.

The projection to a cluster differential replaces q near a cluster (centered
at the origin) by the monic model Π (z − τ z_j)^{e_j} dz² with
τ = t^{1/(m+2)}, t the product of the outside factors evaluated at the
center.  Scaling the roots by τ absorbs both the magnitude and the phase of
the outside factor, so the model's periods match the cluster's internal
periods to leading order in the cluster size.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import t as _t_dist

from .qdiff import ClusterDifferential, QDError, RationalQD
from .periods import (
    Contour,
    _prep,
    _route,
    _span,
    d_euclidean_chart,
    flat_length,
    period_detailed,
    spanning_tree_chart,
)
from .metric import pairwise_flat_distances, singular_diameter


# ============================================================
# delta clusters
# ============================================================

def _merge_candidates(dist: np.ndarray) -> list[tuple[int, ...]]:
    """All single-linkage merge components except singletons and the full
    set: every threshold-graph component appears here."""
    n = dist.shape[0]
    parent = list(range(n))
    members: dict[int, set[int]] = {i: {i} for i in range(n)}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    pairs = sorted((dist[i, j], i, j) for i in range(n) for j in range(i + 1, n))
    out = []
    for _, i, j in pairs:
        ri, rj = find(i), find(j)
        if ri == rj:
            continue
        merged = members[ri] | members[rj]
        parent[ri] = rj
        members[rj] = merged
        if 1 < len(merged) < n:
            out.append(tuple(sorted(merged)))
    return out


def delta_clusters(
    points: Sequence[complex],
    delta: float,
    metric: str = "c",
    q=None,
    tol: float = 1e-3,
) -> list[tuple[int, ...]]:
    """Maximal δ-clusters among the points, as sorted index tuples.

    metric "c": plane distance |z_i - z_j|.  metric "q": the flat metric of
    the differential q (required then).  δ must lie in (0, 1).
    """
    if not 0 < delta < 1:
        raise QDError(f"delta must lie in (0, 1), got {delta!r}")
    pts = [complex(p) for p in points]
    n = len(pts)
    if n < 3:
        return []  # a cluster needs two members plus a nonempty complement
    if metric == "c":
        dist = np.abs(np.subtract.outer(np.array(pts), np.array(pts)))
    elif metric == "q":
        if q is None:
            raise QDError("metric 'q' needs the differential")
        dist = pairwise_flat_distances(q, pts, tol)
    else:
        raise QDError(f"metric must be 'c' or 'q', got {metric!r}")

    valid = []
    for cand in _merge_candidates(dist):
        inside = list(cand)
        outside = [k for k in range(n) if k not in cand]
        max_in = max(dist[a, b] for a in inside for b in inside)
        min_out = min(dist[a, b] for a in inside for b in outside)
        if max_in <= delta * min_out:
            valid.append(cand)
    # maximal ones only; single-linkage candidates are nested or disjoint
    maximal = [c for c in valid if not any(set(c) < set(d) for d in valid)]
    maximal.sort()
    return maximal


# ============================================================
# cluster tree
# ============================================================

@dataclass
class ClusterNode:
    indices: tuple[int, ...]
    diam_c: float
    diam_q: float
    total_order: int
    marked_count: int
    center: complex | None
    children: list["ClusterNode"] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "indices": list(self.indices),
            "diam_c": self.diam_c,
            "diam_q": self.diam_q,
            "total_order": self.total_order,
            "marked_count": self.marked_count,
            "center": None if self.center is None else
            [self.center.real, self.center.imag],
            "children": [c.as_dict() for c in self.children],
        }


def cluster_center(q: RationalQD, indices: Sequence[int]) -> complex:
    """Order-weighted center Σ e_j z_j / Σ e_j of the chosen singularities."""
    idx = sorted(set(int(i) for i in indices))
    recs = [q.singularities[i] for i in idx]
    total = sum(r.order for r in recs)
    if total <= 0:
        raise QDError(f"cluster center undefined: total order {total} is not positive")
    return sum(r.order * r.location for r in recs) / total


def cluster_tree(q: RationalQD, delta: float, metric: str = "q", tol: float = 1e-3) -> ClusterNode:
    """Recursive δ-cluster hierarchy of all finite singularities of q.

    Each node records the plane and flat diameters, the total order, and the
    marked-point count of its members.  A proper cluster holding more than one
    marked point cannot be represented by any collision model, so the tree
    refuses to build it.
    """
    recs = q.singularities
    n = len(recs)
    if n < 2:
        raise QDError("cluster tree needs at least two finite singularities")
    pts = [r.location for r in recs]

    if metric == "q":
        rough = max(
            flat_length(q, a, b, 1e-4) for i, a in enumerate(pts) for b in pts[i + 1:]
        )
        dist = pairwise_flat_distances(q, pts, tol * max(rough, 1e-30))
    elif metric == "c":
        dist = np.abs(np.subtract.outer(np.array(pts), np.array(pts)))
    else:
        raise QDError(f"metric must be 'c' or 'q', got {metric!r}")
    dist_c = np.abs(np.subtract.outer(np.array(pts), np.array(pts)))
    if metric == "q":
        dist_q = dist
    else:
        rough = max(
            flat_length(q, a, b, 1e-4) for i, a in enumerate(pts) for b in pts[i + 1:]
        )
        dist_q = pairwise_flat_distances(q, pts, tol * max(rough, 1e-30))

    def node_for(idx: tuple[int, ...], is_root: bool) -> ClusterNode:
        marked = sum(1 for i in idx if recs[i].marked)
        if not is_root and marked > 1:
            raise QDError(
                f"cluster {idx} holds {marked} marked points; at most one is "
                "representable"
            )
        total = sum(recs[i].order for i in idx)
        center = None
        if total > 0:
            center = sum(recs[i].order * recs[i].location for i in idx) / total
        dc = max(dist_c[a, b] for a in idx for b in idx) if len(idx) > 1 else 0.0
        dq = max(dist_q[a, b] for a in idx for b in idx) if len(idx) > 1 else 0.0
        node = ClusterNode(idx, float(dc), float(dq), total, marked, center)
        if len(idx) >= 3:
            sub = _sub_clusters(idx)
            for child_idx in sub:
                node.children.append(node_for(child_idx, False))
        return node

    def _sub_clusters(idx: tuple[int, ...]) -> list[tuple[int, ...]]:
        local = list(idx)
        m = len(local)
        sub_dist = dist[np.ix_(local, local)]
        out = []
        for cand in _merge_candidates(sub_dist):
            inside = list(cand)
            outside = [k for k in range(m) if k not in cand]
            max_in = max(sub_dist[a, b] for a in inside for b in inside)
            min_out = min(sub_dist[a, b] for a in inside for b in outside)
            if max_in <= delta * min_out:
                out.append(cand)
        maximal = [c for c in out if not any(set(c) < set(d) for d in out)]
        return [tuple(local[k] for k in c) for c in sorted(maximal)]

    if not 0 < delta < 1:
        raise QDError(f"delta must lie in (0, 1), got {delta!r}")
    return node_for(tuple(range(n)), True)


# ============================================================
# symmetric configuration distance
# ============================================================

def d_sym(q1, q2) -> float:
    """Least total displacement over type-preserving bijections of the
    singularities, plus the scale difference.

    Singularities match only within the same (order, marked) class; a class
    size mismatch means the differentials live in different strata.
    """
    if isinstance(q1, ClusterDifferential):
        q1 = q1.to_rational()
    if isinstance(q2, ClusterDifferential):
        q2 = q2.to_rational()
    classes1: dict[tuple[int, bool], list[complex]] = {}
    classes2: dict[tuple[int, bool], list[complex]] = {}
    for r in q1.singularities:
        classes1.setdefault((r.order, r.marked), []).append(r.location)
    for r in q2.singularities:
        classes2.setdefault((r.order, r.marked), []).append(r.location)
    if set(classes1) != set(classes2) or any(
        len(classes1[k]) != len(classes2[k]) for k in classes1
    ):
        raise QDError("strata mismatch: the (order, marked) classes differ")
    total = abs(q1.scale - q2.scale)
    for key, pts1 in classes1.items():
        pts2 = classes2[key]
        cost = np.abs(np.subtract.outer(np.array(pts1), np.array(pts2)))
        rows, cols = linear_sum_assignment(cost)
        total += float(cost[rows, cols].sum())
    return total


# ============================================================
# projection to the polynomial collision model
# ============================================================

@dataclass(frozen=True)
class ClusterProjection:
    model: ClusterDifferential
    t: complex       # outside factor at the cluster center
    tau: complex     # chosen (m+2)-th root of t, scaling the model roots


def project_to_cluster_differential(
    q: RationalQD,
    node: Sequence[int],
    continue_from: complex | None = None,
) -> ClusterProjection:
    """Collision model of the cluster `node` of q, which must already have its
    weighted center at the origin.

    The model is Π_{j in node} (z − τ z_j)^{e_j} dz² with τ = t^{1/(m+2)} and
    t = λ Π_{j outside} (−z_j)^{e_j}.  τ is the principal root unless
    continue_from is given, in which case the nearest root branch is chosen so
    a family of projections varies continuously.
    """
    idx = sorted(set(int(i) for i in node))
    recs = q.singularities
    if any(not 0 <= i < len(recs) for i in idx):
        raise QDError("cluster indices out of range")
    span = _span([r.location for r in recs])

    inside = [recs[i] for i in idx]
    if any(r.order < 0 for r in inside):
        raise QDError("the cluster holds a pole: no polynomial model exists")
    marked_inside = [r for r in inside if r.marked]
    marked_at_zero = False
    for r in marked_inside:
        if abs(r.location) <= 1e-9 * span:
            marked_at_zero = True
        else:
            raise QDError(
                f"marked point at {r.location} is away from the cluster "
                "center; the model only represents a marked origin"
            )

    m = sum(r.order for r in inside)
    if m < 1:
        raise QDError("cluster total order must be at least 1")
    wc = sum(r.order * r.location for r in inside) / m
    if abs(wc) > 1e-9 * span:
        raise QDError(
            f"cluster center {wc} is not at the origin: translate first"
        )

    t = complex(q.scale)
    for k, r in enumerate(recs):
        if k in idx:
            continue
        t *= (-r.location) ** r.order
    if t == 0:
        raise QDError("outside factor vanishes at the cluster center")

    # scrub a signed zero so the principal branch puts arg(-1) at +pi
    if t.imag == 0:
        t = complex(t.real, 0.0)
    tau0 = t ** (1.0 / (m + 2))
    if continue_from is None:
        tau = tau0
    else:
        tau = min(
            (tau0 * cmath.exp(2j * math.pi * k / (m + 2)) for k in range(m + 2)),
            key=lambda c: abs(c - continue_from),
        )
    roots = tuple((tau * r.location, r.order) for r in inside if r.order >= 1)
    model = ClusterDifferential(roots, marked_at_zero=marked_at_zero)
    return ClusterProjection(model, t, tau)


def projection_defect(q: RationalQD, node: Sequence[int], tol: float = 1e-11):
    """Max-norm mismatch between the cluster's internal periods of q and the
    matching periods of its collision model, plus the flat cluster diameter.

    The model approximates the cluster to higher order than its size, so the
    returned (defect, diam_q) satisfies defect = o(diam_q) along a collision.
    """
    idx = sorted(set(int(i) for i in node))
    if len(idx) < 2:
        raise QDError("need at least two cluster members to compare periods")
    proj = project_to_cluster_differential(q, idx)
    scale, zs, es = _prep(q)
    eps = 1e-12 * _span(zs)

    # internal spanning tree among cluster members, shortest plane edges first
    pairs = sorted(
        (abs(zs[a] - zs[b]), a, b) for i, a in enumerate(idx) for b in idx[i + 1:]
    )
    parent = {i: i for i in idx}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for _, a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            edges.append((a, b))

    model_q = proj.model.to_rational()
    defects = []
    p_int, p_mod = [], []
    for a, b in edges:
        verts = _route(zs, a, b, eps)
        res_q = period_detailed(q, Contour(verts, (True, True)), tol)
        verts_m = tuple(proj.tau * v for v in verts)
        res_m = period_detailed(model_q, Contour(verts_m, (True, True)), tol)
        p_int.append(res_q.value)
        p_mod.append(res_m.value)
    p_int = np.array(p_int)
    p_mod = np.array(p_mod)
    defect = min(
        float(np.max(np.abs(p_int - s * p_mod))) for s in (1, -1)
    )
    diam_q, _ = singular_diameter(q, idx)
    return defect, diam_q


# ============================================================
# Hölder exponent probe
# ============================================================

def holder_exponent_probe(
    family: Callable[[float], tuple[RationalQD, RationalQD]],
    k: int,
    eps_values,
    tol: float = 1e-12,
) -> dict:
    """Regress the chart period distance against the symmetric configuration
    distance over a family of nearby pairs.

    family(eps) returns two same-stratum differentials approaching each other
    as eps shrinks.  Records (d_sym, d_chart) per eps and fits the log-log
    slope with a 95% confidence interval.  The label k names the collision
    order: colliding zeros of total order k ≥ 2 should give slope (2+k)/2,
    while a marked point moving in a fixed environment is Lipschitz (slope 1).
    """
    eps_values = [float(e) for e in eps_values]
    if len(eps_values) < 4:
        raise QDError("need at least four parameter values")
    if any(e2 >= e1 for e1, e2 in zip(eps_values, eps_values[1:])):
        raise QDError("parameter values must be strictly decreasing")

    xs, ys = [], []
    for eps in eps_values:
        qa, qb = family(eps)
        x = d_sym(qa, qb)
        chart = spanning_tree_chart(qa, tol=tol)
        y = d_euclidean_chart(qa, qb, chart, tol=tol)
        xs.append(x)
        ys.append(y)
    if any(x2 >= x1 for x1, x2 in zip(xs, xs[1:])) or any(
        y2 >= y1 for y1, y2 in zip(ys, ys[1:])
    ):
        raise QDError("distances must decrease monotonically along the family")

    lx, ly = np.log(xs), np.log(ys)
    n = len(lx)
    A = np.vstack([lx, np.ones(n)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = ly - A @ coef
    s2 = float(resid @ resid) / max(n - 2, 1)
    sxx = float(((lx - lx.mean()) ** 2).sum())
    se = math.sqrt(s2 / sxx) if sxx > 0 else float("inf")
    tq = float(_t_dist.ppf(0.975, max(n - 2, 1)))
    predicted = 1.0 if k <= 1 else (2 + k) / 2
    return {
        "k": k,
        "eps": eps_values,
        "d_sym": xs,
        "d_chart": ys,
        "slope": slope,
        "intercept": intercept,
        "ci95": (slope - tq * se, slope + tq * se),
        "predicted_slope": predicted,
    }
