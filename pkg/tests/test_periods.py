"""Period engine tests: quadrature oracles, branch transport, charts,
Jacobians, chart distances, and the collision-limit probe."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatqd.qdiff import ClusterDifferential, QDError, RationalQD, SingularityRecord
from flatqd.periods import (
    Contour,
    PeriodChart,
    _loglog_fit,
    _prep,
    _records_from_arrays,
    _route,
    _span,
    d_euclidean_chart,
    flat_length,
    jacobian_cluster_limit_probe,
    period,
    period_detailed,
    period_jacobian,
    solve_periods,
    spanning_tree_chart,
)


def _mk(scale, *recs):
    return RationalQD(scale, tuple(SingularityRecord(*r) for r in recs))


# ------------------------------------------------------------
# quadrature oracles
# ------------------------------------------------------------

def test_constant_differential_unit_segment():
    q = RationalQD(1.0)
    v = period(q, Contour((0, 1), (False, False)), 1e-12)
    assert abs(v - 1.0) <= 1e-12


def test_simple_zero_segment():
    # closed form: int_0^1 sqrt(z) dz = 2/3
    q = _mk(1.0, (0, 1, False))
    v = period(q, Contour((0, 1), (True, False)), 1e-12)
    assert abs(v - 2 / 3) <= 1e-10


def test_two_zero_segment():
    # int_{-1}^{1} sqrt(z^2-1) dz = i pi/2 on the branch that is +i at 0
    q = _mk(1.0, (-1, 1, False), (1, 1, False))
    r = period_detailed(q, Contour((-1, 1), (True, True)), 1e-12)
    assert abs(r.value - 1j * math.pi / 2) <= 1e-8
    assert abs(r.ref - 1j) <= 1e-12


def test_branch_flag_flips_sign():
    q = _mk(1.0, (-1, 1, False), (1, 1, False))
    c = Contour((-1, 1), (True, True))
    assert period(q, c, 1e-10, branch=-1) == pytest.approx(-period(q, c, 1e-10, branch=1))
    with pytest.raises(QDError):
        period(q, c, branch=0)


def test_pole_endpoint_integrable():
    # int_0^1 z^{-1/2} dz = 2
    q = _mk(1.0, (0, -1, True))
    v = period(q, Contour((0, 1), (True, False)), 1e-11)
    assert abs(v - 2.0) <= 1e-9


def test_homotopy_invariance_detour():
    q = _mk(1.0, (-1, 1, False), (1, 1, False))
    straight = period(q, Contour((-1, 1), (True, True)), 1e-12)
    bent = period(q, Contour((-1, -0.3 + 0.8j, 0.4 + 0.7j, 1), (True, True)), 1e-12)
    assert abs(straight - bent) <= 1e-10


@given(h=st.floats(min_value=-0.9, max_value=0.9))
@settings(max_examples=20, deadline=None)
def test_homotopy_invariance_property(h):
    q = _mk(1.0, (-1, 1, False), (1, 1, False))
    straight = period(q, Contour((-1, 1), (True, True)), 1e-11)
    mid = 1j * (1.0 + abs(h)) * (1 if h >= 0 else -1)
    bent = period(q, Contour((-1, mid, 1), (True, True)), 1e-11)
    # both halves of the plane are free of other singularities, so any
    # one-bend path gives the same value
    assert abs(straight - bent) <= 1e-9


def test_contour_through_singularity_rejected():
    q = _mk(1.0, (-1, 1, False), (0, 1, False), (1, 1, False))
    with pytest.raises(QDError, match="passes through"):
        period(q, Contour((-1, 1), (True, True)), 1e-10)


def test_unflagged_singular_endpoint_rejected():
    q = _mk(1.0, (0, 1, False), (1, 1, False))
    with pytest.raises(QDError, match="not flagged"):
        period(q, Contour((0, 1), (False, True)), 1e-10)


def test_flagged_regular_endpoint_rejected():
    q = _mk(1.0, (0, 1, False))
    with pytest.raises(QDError, match="no singularity there"):
        period(q, Contour((0.5, 1), (True, False)), 1e-10)


def test_flat_length_semicircle_law():
    # int_{-1}^1 sqrt|z^2-1| dx = pi/2
    q = _mk(1.0, (-1, 1, False), (1, 1, False))
    assert flat_length(q, -1, 1) == pytest.approx(math.pi / 2, rel=1e-5)


# ------------------------------------------------------------
# spanning tree charts
# ------------------------------------------------------------

def test_greedy_tree_prefers_short_edges():
    q = _mk(1.0, (0, 0, True), (1, 0, True), (10, 0, True))
    ch = spanning_tree_chart(q)
    assert set(ch.edges) == {(0, 1), (1, 2)}
    assert ch.values[0] == pytest.approx(1.0)
    assert ch.values[1] == pytest.approx(9.0)


def test_chart_needs_two_singularities():
    with pytest.raises(QDError, match="at least two"):
        spanning_tree_chart(_mk(1.0, (0, 1, False)))


def test_length_bound_refusal_names_length():
    q = _mk(1.0, (0, 0, True), (1, 0, True), (10, 0, True))
    with pytest.raises(QDError, match="flat length 9"):
        spanning_tree_chart(q, length_bound=5.0)


def test_route_detours_around_blocking_singularity():
    q = _mk(1.0, (-1, 1, False), (0, 1, False), (1, 1, False))
    ch = spanning_tree_chart(q)
    assert len(ch.contours) == 2
    for cont in ch.contours:
        period(q, cont, 1e-10)  # must all be integrable, i.e. routed clear


# ------------------------------------------------------------
# period Jacobian
# ------------------------------------------------------------

def test_jacobian_two_zero_oracle():
    # P(a, b) = i pi (b-a)^2 / 8 along the segment, so dP/da = -i pi (b-a)/4
    q = _mk(1.0, (-1, 1, False), (1, 1, False))
    ch = spanning_tree_chart(q, tol=1e-12)
    M = period_jacobian(q, ch, tol=1e-12)
    assert abs(M[0, 0] - (-1j * math.pi / 2)) <= 1e-8
    assert abs(M[0, 1] - (1j * math.pi / 2)) <= 1e-8


def test_jacobian_marked_endpoint_is_sqrt_value():
    # moving the far marked endpoint of int_0^x sqrt(z) dz gives sqrt(x)
    q = _mk(1.0, (0, 1, False), (1, 0, True))
    ch = spanning_tree_chart(q, tol=1e-12)
    M = period_jacobian(q, ch, tol=1e-12)
    assert abs(M[0, 1] - 1.0) <= 1e-8
    assert abs(M[0, 0] + 1.0) <= 1e-8


def _corpus_five():
    locs = [0.0, 1.0, 2.5 + 1.2j, -1.1 + 0.8j, 0.7 - 1.3j]
    orders = [1, 1, 2, -1, 0]
    marked = [False, False, False, True, True]
    return RationalQD(
        0.7 + 0.3j,
        tuple(SingularityRecord(l, o, m) for l, o, m in zip(locs, orders, marked)),
    )


def test_jacobian_matches_direct_fd_on_mixed_corpus():
    q = _corpus_five()
    ch = spanning_tree_chart(q, tol=1e-12)
    M = period_jacobian(q, ch, tol=1e-12)
    scale, zs, es = _prep(q)
    h = 1e-6
    Mfd = np.zeros_like(M)
    for j in range(len(zs)):
        vals = {}
        for sgn in (1, -1):
            z2 = zs.copy()
            z2[j] += sgn * h
            qh = RationalQD(scale, _records_from_arrays(z2, es))
            eps = 1e-12 * _span(z2)
            for i, ((ia, ib), anc) in enumerate(zip(ch.edges, ch.anchors)):
                verts = _route(z2, ia, ib, eps)
                res = period_detailed(qh, Contour(verts, (True, True)), 1e-12, anchor=anc)
                vals[(i, sgn)] = res.value
        for i in range(len(ch.edges)):
            Mfd[i, j] = (vals[(i, 1)] - vals[(i, -1)]) / (2 * h)
    rel = np.abs(M - Mfd) / np.maximum(np.abs(Mfd), 1e-12)
    assert rel.max() <= 1e-5


def test_jacobian_row_sums_vanish():
    q = _corpus_five()
    ch = spanning_tree_chart(q, tol=1e-12)
    M = period_jacobian(q, ch, tol=1e-12)
    rnorm = np.linalg.norm(M, axis=1)
    assert (np.abs(M.sum(axis=1)) <= 1e-8 * rnorm).all()


def test_jacobian_euler_identity():
    q = _corpus_five()
    ch = spanning_tree_chart(q, tol=1e-12)
    M = period_jacobian(q, ch, tol=1e-12)
    _, zs, es = _prep(q)
    P = np.asarray(ch.values)
    target = (es.sum() + 2) / 2 * P
    assert (np.abs(M @ zs - target) <= 1e-6 * np.abs(target)).all()


def test_jacobian_scaling_law():
    # scaling all roots by s > 0 multiplies every derivative by s^{m/2}
    q1 = _mk(1.0, (-1, 1, False), (1, 1, False))
    s = 1.7
    q2 = _mk(1.0, (-s, 1, False), (s, 1, False))
    ch1 = spanning_tree_chart(q1, tol=1e-12)
    ch2 = spanning_tree_chart(q2, tol=1e-12)
    M1 = period_jacobian(q1, ch1, tol=1e-12)
    M2 = period_jacobian(q2, ch2, tol=1e-12)
    m = 2
    ratio = M2 / M1
    assert np.allclose(ratio, s ** (m / 2), rtol=1e-6)


# ------------------------------------------------------------
# chart distance
# ------------------------------------------------------------

def _pure(eps):
    return _mk(1.0, (-eps, 1, False), (eps, 1, False))


def test_chart_distance_doubling_slope_two():
    ds, epss = [], [0.05, 0.02, 0.008, 0.003]
    for eps in epss:
        ch = spanning_tree_chart(_pure(eps), tol=1e-13)
        ds.append(d_euclidean_chart(_pure(eps), _pure(2 * eps), ch, tol=1e-13))
    slope, _ = _loglog_fit(epss, ds)
    assert slope == pytest.approx(2.0, abs=0.02)
    # and the values themselves are the closed form (3/2) pi eps^2
    for eps, d in zip(epss, ds):
        assert d == pytest.approx(1.5 * math.pi * eps**2, rel=1e-6)


def test_chart_distance_symmetric_enough():
    q1, q2 = _pure(0.05), _pure(0.08)
    d12 = d_euclidean_chart(q1, q2, tol=1e-13)
    d21 = d_euclidean_chart(q2, q1, tol=1e-13)
    # charts are built on the first argument, so only near-symmetry holds
    assert d12 == pytest.approx(d21, rel=1e-6)


def test_chart_distance_stratum_mismatch():
    q1 = _pure(0.1)
    q2 = _mk(1.0, (-0.1, 2, False), (0.1, 1, False))
    with pytest.raises(QDError, match="stratum mismatch"):
        d_euclidean_chart(q1, q2)


def test_chart_distance_pinch_detected():
    # moving the roots straight through each other collides them midway
    q1 = _pure(0.1)
    q2 = _mk(1.0, (0.1, 1, False), (-0.1, 1, False))
    with pytest.raises(QDError, match="pinched"):
        d_euclidean_chart(q1, q2)


# ------------------------------------------------------------
# Newton adjustment and chart persistence
# ------------------------------------------------------------

def test_solve_periods_small_log_move():
    q = _mk(1.0, (-0.5, 1, False), (0.5, 1, False), (5.0, 1, False))
    ch = spanning_tree_chart(q, tol=1e-13)
    targets = [v * np.exp(1e-3) for v in ch.values]
    q2, ch2, rnorm, iters = solve_periods(q, ch, targets, tol=1e-11)
    assert rnorm <= 1e-10
    assert iters <= 6
    assert ch2.edges == ch.edges  # chart combinatorics persisted
    vals = np.asarray(ch2.values)
    assert np.max(np.abs(vals - np.asarray(targets))) <= 1e-9


# ------------------------------------------------------------
# collision-limit probe
# ------------------------------------------------------------

def _fam_pair(eps):
    return _mk(1.0, (-eps, 1, False), (eps, 1, False), (5.0, 1, False))


def test_cluster_limit_probe():
    probe = jacobian_cluster_limit_probe(
        _fam_pair, [0.03, 0.01, 0.003, 0.001], cluster_indices=[0, 1], tol=1e-12
    )
    # total cluster order 2: internal derivative norms scale like diam^1
    assert probe["exponent"] == pytest.approx(1.0, abs=0.05)
    for rec in probe["records"]:
        # the outside factor evaluated at the cluster center
        assert rec["t"] == pytest.approx(-5.0, rel=0.05)
        assert rec["rowsum_ratio"] <= 1e-6
        assert rec["internal_row_norm"] > 0
    # proportionality defects of the colliding columns shrink with the cluster
    defects = [r["defect"] for r in probe["records"]]  # eps ascending
    assert all(a <= b for a, b in zip(defects, defects[1:]))


def test_probe_rejects_single_eps():
    with pytest.raises(QDError, match="at least two"):
        jacobian_cluster_limit_probe(_fam_pair, [0.01], cluster_indices=[0, 1])


def test_probe_autodetects_cluster():
    probe = jacobian_cluster_limit_probe(_fam_pair, [0.003, 0.001], tol=1e-12)
    assert probe["cluster"] == [0, 1]
