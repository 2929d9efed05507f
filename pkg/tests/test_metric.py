"""Flat metric tests: distance oracles, window handling, diameter scaling,
ball growth."""

import cmath
import math

import pytest

from flatqd.qdiff import QDError, RationalQD, SingularityRecord
from flatqd.metric import (
    ball_scaling_probe,
    flat_distance,
    pairwise_flat_distances,
    singular_diameter,
)
from flatqd.periods import _loglog_fit, _prep


def _mk(scale, *recs):
    return RationalQD(scale, tuple(SingularityRecord(*r) for r in recs))


Q_CONST = RationalQD(1.0)
Q_LIN = _mk(1.0, (0, 1, False))
Q_QUAD = _mk(1.0, (-1, 1, False), (1, 1, False))


# ------------------------------------------------------------
# distance oracles
# ------------------------------------------------------------

def test_euclidean_case():
    v, bound = flat_distance(Q_CONST, 0, 3 + 4j, tol=1e-6)
    assert abs(v - 5.0) <= 1e-6 + bound
    assert v >= 5.0 - 1e-9  # never an underestimate


def test_linear_zero_distance():
    # d(0, 1) = int_0^1 sqrt(x) dx = 2/3, radial path from the cone point
    v, _ = flat_distance(Q_LIN, 0, 1, tol=1e-6)
    assert v == pytest.approx(2 / 3, abs=1e-5)


def test_two_zero_saddle_length():
    # the segment between the zeros has length int sqrt(1-x^2) = pi/2
    v, _ = flat_distance(Q_QUAD, -1, 1, tol=1e-6)
    assert v == pytest.approx(math.pi / 2, abs=1e-5)


def test_zero_distance_is_zero():
    assert flat_distance(Q_QUAD, 0.3, 0.3) == (0.0, 0.0)


def test_value_and_bound_returned():
    v, bound = flat_distance(Q_QUAD, -1, 1)
    assert bound > 0 and v > 0


# ------------------------------------------------------------
# window and refinement errors
# ------------------------------------------------------------

def test_window_too_small_errors():
    with pytest.raises(QDError, match="window too small"):
        flat_distance(Q_CONST, 0, 3 + 4j, window_halfwidth=0.5, max_doublings=0)


def test_window_doubling_recovers():
    v, _ = flat_distance(Q_CONST, 0, 3 + 4j, tol=1e-6, window_halfwidth=0.9, max_doublings=3)
    assert v == pytest.approx(5.0, abs=1e-5)


def test_budget_error_mentions_improvement():
    # absurdly tight tolerance on a curved geodesic cannot be certified
    with pytest.raises(QDError, match="refinement budget"):
        flat_distance(Q_QUAD, -1 + 0.5j, 1 + 0.3j, tol=1e-12)


# ------------------------------------------------------------
# metric properties (with solver slack)
# ------------------------------------------------------------

def test_symmetry_within_factor_two():
    d1, _ = flat_distance(Q_QUAD, -1 + 0.5j, 1 + 0.3j)
    d2, _ = flat_distance(Q_QUAD, 1 + 0.3j, -1 + 0.5j)
    assert 0.5 <= d1 / d2 <= 2.0


def test_triangle_within_factor_two():
    dab, _ = flat_distance(Q_QUAD, -1 + 0.5j, 1 + 0.3j)
    dac, _ = flat_distance(Q_QUAD, -1 + 0.5j, 0.2j)
    dcb, _ = flat_distance(Q_QUAD, 0.2j, 1 + 0.3j)
    assert dab <= 2 * (dac + dcb)


def test_joint_continuity_three_term():
    d0, _ = flat_distance(Q_QUAD, -0.5, 0.5)
    d1, _ = flat_distance(Q_QUAD, -0.5 + 0.01j, 0.5)
    move, _ = flat_distance(Q_QUAD, -0.5, -0.5 + 0.01j)
    assert abs(d1 - d0) <= 10 * (move + 2e-3)


def test_monotone_refinement_convergence():
    # a tighter tolerance never reports a larger distance (refinement only
    # adds paths)
    loose, _ = flat_distance(Q_QUAD, -1, 1, tol=1e-2)
    tight, _ = flat_distance(Q_QUAD, -1, 1, tol=1e-6)
    assert tight <= loose + 1e-9


# ------------------------------------------------------------
# diameters
# ------------------------------------------------------------

def test_singular_diameter_two_points():
    d, pair = singular_diameter(Q_QUAD)
    assert d == pytest.approx(math.pi / 2, rel=1e-3)
    assert pair == (0, 1)


def test_singular_diameter_needs_two():
    with pytest.raises(QDError, match="at least two"):
        singular_diameter(Q_LIN)


def test_pairwise_matrix_symmetric():
    q = _mk(1.0, (0, 0, True), (1, 0, True), (1j, 0, True))
    M = pairwise_flat_distances(q, [0, 1, 1j])
    assert M[0, 1] == M[1, 0]
    assert M[0, 1] == pytest.approx(1.0, abs=1e-3)
    assert M[1, 2] == pytest.approx(math.sqrt(2), abs=4e-3)


def _cluster_family(m, eps):
    if m == 1:
        return _mk(1.0, (eps, 1, False), (-eps, 0, True))
    roots = [eps * cmath.exp(2j * math.pi * k / m) for k in range(m)]
    return _mk(1.0, *((r, 1, False) for r in roots))


@pytest.mark.parametrize("m", [1, 2, 3])
def test_diameter_scaling_law(m):
    # self-similar collisions: flat diameter scales like the (2+m)/2 power of
    # the plane diameter
    eps_list = [0.3, 0.1, 0.03, 0.01]
    dq, dc = [], []
    for eps in eps_list:
        q = _cluster_family(m, eps)
        d, _ = singular_diameter(q)
        _, zs, _ = _prep(q)
        dc.append(max(abs(a - b) for a in zs for b in zs))
        dq.append(d)
    slope, _ = _loglog_fit(dc, dq)
    assert slope == pytest.approx((2 + m) / 2, rel=0.05)


def test_quadratic_cluster_diameter_closed_form():
    # between the two zeros of z^2 - eps^2: pi eps^2 / 2
    for eps in (0.5, 0.1):
        d, _ = singular_diameter(_cluster_family(2, eps))
        assert d == pytest.approx(math.pi * eps**2 / 2, rel=1e-3)


# ------------------------------------------------------------
# ball growth
# ------------------------------------------------------------

def test_ball_probe_simple_zero():
    probe = ball_scaling_probe(Q_LIN, [0.1, 0.2, 0.4, 0.8])
    assert probe["slope"] == pytest.approx(1.5, abs=0.02)
    assert probe["prefactor"] == pytest.approx(2 / 3, rel=0.02)
    assert probe["predicted_slope"] == 1.5
    assert probe["predicted_prefactor"] == pytest.approx(2 / 3)


def test_ball_probe_double_zero():
    q = _mk(1.0, (0, 2, False))
    probe = ball_scaling_probe(q, [0.1, 0.2, 0.4, 0.8])
    assert probe["slope"] == pytest.approx(2.0, abs=0.02)


def test_ball_probe_regular_center():
    probe = ball_scaling_probe(Q_CONST, [0.1, 0.2, 0.4, 0.8])
    assert probe["slope"] == pytest.approx(1.0, abs=0.02)


def test_ball_probe_outside_factor_prefactor():
    # q = (z - 4) z dz^2 near 0: prefactor carries |g(0)|^{1/2} = 2
    q = _mk(1.0, (0, 1, False), (4, 1, False))
    probe = ball_scaling_probe(q, [0.05, 0.1, 0.2, 0.4])
    assert probe["predicted_prefactor"] == pytest.approx(2 * 2 / 3)
    assert probe["prefactor"] == pytest.approx(probe["predicted_prefactor"], rel=0.05)
    assert probe["slope"] == pytest.approx(1.5, abs=0.05)


def test_ball_probe_input_validation():
    with pytest.raises(QDError, match="at least four"):
        ball_scaling_probe(Q_LIN, [0.1, 0.2, 0.4])
    with pytest.raises(QDError, match="strictly increasing"):
        ball_scaling_probe(Q_LIN, [0.4, 0.2, 0.1, 0.05])


def test_ball_probe_monotone_distances():
    probe = ball_scaling_probe(Q_LIN, [0.1, 0.2, 0.4, 0.8])
    d = probe["distances"]
    assert all(a < b for a, b in zip(d, d[1:]))
    assert len(probe["running_slopes"]) == 3
