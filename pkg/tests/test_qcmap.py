"""Quasiconformal comparison tests: boundary maps, the half-plane extension,
dilatation measurement, marked-point shears, piecewise-affine comparisons,
and the assembled report."""

import math

import numpy as np
import pytest

from flatqd.qdiff import QDError, RationalQD, SingularityRecord as SR
from flatqd.surfaces import build_from_polygons, double_nrrp, nrrp_system
from flatqd.qcmap import (
    BoundaryMap,
    SamplePlan,
    assemble_qc_map,
    beurling_ahlfors,
    boundary_correspondence,
    dilatation_field,
    marked_point_shear,
    pl_map_dilatation,
    quasisymmetry_constant,
    uniformized_double,
    _coalesced_spec,
)

TORUS_GLUE = [((0, 0), (0, 2), 1), ((0, 1), (0, 3), 1)]


def torus(v1=1, v2=1j):
    return build_from_polygons([[0, v1, v1 + v2, v2]], TORUS_GLUE)


def near_collision_pair(eps, shift):
    """Two sphere differentials that differ only in the half-gap of a close
    zero pair; two far singularities keep the configuration rigid."""
    def build(e):
        return RationalQD(1.0, (
            SR(complex(e), 1),
            SR(complex(-e), 1),
            SR(3.0 + 0j, 1),
            SR(-1.5 + 2.0j, 1),
        ))
    return build(eps), build(eps + shift)


def uhp_grid(x0, x1, y0, y1, nx=31, ny=11):
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    return (xs[None, :] + 1j * ys[:, None]).ravel()


# ----------------------------------------------------------------
# boundary maps and quasisymmetry
# ----------------------------------------------------------------

def test_boundary_map_rejects_bad_samples():
    xs = np.linspace(0, 1, 10)
    with pytest.raises(QDError):
        BoundaryMap(xs[::-1], xs)            # decreasing x
    with pytest.raises(QDError):
        BoundaryMap(xs, -xs)                 # decreasing values
    with pytest.raises(QDError):
        BoundaryMap([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])   # too few samples
    ys = xs.copy()
    ys[3] = np.nan
    with pytest.raises(QDError):
        BoundaryMap(xs, ys)


def test_boundary_map_evaluation_window():
    h = BoundaryMap.identity(-2.0, 2.0)
    assert h.window == (-2.0, 2.0)
    assert h(0.5) == pytest.approx(0.5, abs=1e-14)
    with pytest.raises(QDError, match="outside the sampled boundary range"):
        h(2.5)


def test_quasisymmetry_of_affine_maps_is_one():
    h = BoundaryMap.identity()
    assert quasisymmetry_constant(h) == pytest.approx(1.0, abs=1e-9)
    xs = np.linspace(-4, 4, 257)
    g = BoundaryMap(xs, 2 * xs - 1)
    assert quasisymmetry_constant(g) == pytest.approx(1.0, abs=1e-9)


def test_quasisymmetry_of_cubic_at_unit_probe():
    # difference quotients of x^3 at x=1, t=1: (8-1)/(1-0) = 7, and the
    # samples sit on integers so the interpolant is evaluated at nodes
    xi = np.arange(-8.0, 9.0)
    h = BoundaryMap(xi, xi ** 3)
    rho = quasisymmetry_constant(h, SamplePlan((1.0,), (1.0,)))
    assert rho == 7.0


def test_quasisymmetry_rejects_nonpositive_offsets():
    h = BoundaryMap.identity()
    with pytest.raises(QDError):
        quasisymmetry_constant(h, SamplePlan((0.0,), (-1.0,)))


# ----------------------------------------------------------------
# half-plane extension
# ----------------------------------------------------------------

def test_extension_of_identity_is_vertical_scaling():
    h = BoundaryMap.identity(-6.0, 6.0, 1200)
    z = uhp_grid(-3, 3, 0.05, 2.5)
    for r in (2.0, 3.0):
        f = beurling_ahlfors(h, r)
        dev = np.abs(np.asarray(f(z)) - (z.real + 1j * r * z.imag / 2))
        assert dev.max() < 1e-10


def test_extension_of_doubling_map_is_complex_doubling():
    xs = np.linspace(-6, 6, 1200)
    h = BoundaryMap(xs, 2 * xs)
    f = beurling_ahlfors(h, 2.0)
    z = uhp_grid(-3, 3, 0.05, 2.5)
    assert np.abs(np.asarray(f(z)) - 2 * z).max() < 1e-10


def test_extension_of_affine_map_has_unit_dilatation():
    xs = np.linspace(-6, 6, 1200)
    h = BoundaryMap(xs, 1.5 * xs + 0.25)
    f = beurling_ahlfors(h, 2.0)
    step = 1e-4
    fld = dilatation_field(f, uhp_grid(-3, 3, 0.05, 2.5), step)
    assert fld.max_dilatation <= 1.0 + 5 * step


def test_extension_requires_upper_half_plane_and_window():
    h = BoundaryMap.identity(-2.0, 2.0)
    f = beurling_ahlfors(h, 2.0)
    with pytest.raises(QDError, match="upper half-plane"):
        f(0.5 - 0.1j)
    with pytest.raises(QDError, match="outside the sampled"):
        f(1.9 + 0.5j)        # window needed: [1.4, 2.4]
    with pytest.raises(QDError):
        beurling_ahlfors(h, 0.0)


def test_extension_near_fractional_linear_boundary_values():
    """Boundary values of a fractional linear map extend to something close
    to, but not equal to, the plane fractional linear map: the deviation
    decays quadratically in the height and is negligible near the axis."""
    def hm(x):
        return x / (1 - x / 10)

    def mob(z):
        return z / (1 - z / 10)

    xs = np.linspace(-2.5, 2.5, 4001)
    f = beurling_ahlfors(BoundaryMap(xs, hm(xs)), 2.0)
    xprobe = np.linspace(-1.8, 1.8, 41)
    dev_low = np.abs(np.asarray(f(xprobe + 1e-3j)) - mob(xprobe + 1e-3j)).max()
    dev_mid = np.abs(np.asarray(f(xprobe + 0.3j)) - mob(xprobe + 0.3j)).max()
    assert dev_low < 1e-6
    ratio = dev_mid / dev_low
    expected = (0.3 / 1e-3) ** 2
    assert 0.5 * expected < ratio < 1.5 * expected


# ----------------------------------------------------------------
# dilatation measurement
# ----------------------------------------------------------------

def test_dilatation_of_axis_stretches():
    z = uhp_grid(-3, 3, 0.05, 2.5)
    fld = dilatation_field(lambda w: 2 * w.real + 1j * w.imag / 2, z, 1e-4)
    assert fld.max_dilatation == pytest.approx(4.0, abs=1e-10)
    fld = dilatation_field(lambda w: w.real + 3j * w.imag, z, 1e-4)
    assert fld.max_dilatation == pytest.approx(3.0, abs=1e-10)
    assert fld.values.shape == fld.points.shape


def test_dilatation_orientation_failure_reports_location():
    z = uhp_grid(-1, 1, 0.1, 1.0)
    with pytest.raises(QDError, match="orientation failure"):
        dilatation_field(lambda w: np.conj(w), z, 1e-4)


def test_dilatation_argument_validation():
    with pytest.raises(QDError):
        dilatation_field(lambda w: w, np.array([]), 1e-4)
    with pytest.raises(QDError):
        dilatation_field(lambda w: w, np.array([1j]), 0.0)


def test_marked_point_shear_oracles():
    assert marked_point_shear(1.25j, 1j).dilatation == 1.25
    s = marked_point_shear(1j + 0.1, 1j)
    assert s.dilatation == pytest.approx(1.1051249219725041, abs=1e-12)
    assert s(1j) == pytest.approx(1j + 0.1, abs=1e-14)
    assert s(5.0) == pytest.approx(5.0, abs=1e-14)   # axis fixed pointwise
    with pytest.raises(QDError):
        marked_point_shear(1j, -1j)
    with pytest.raises(QDError):
        marked_point_shear(0.5, 1j)


# ----------------------------------------------------------------
# piecewise-affine comparison
# ----------------------------------------------------------------

def test_pl_identity_and_rotation_have_unit_dilatation():
    tris = [(0j, 1 + 0j, 1j), (1 + 0j, 1 + 1j, 1j)]
    Ks, kmax = pl_map_dilatation(tris, tris)
    assert kmax == 1.0
    w = np.exp(1j * np.pi / 6)
    rot = [tuple(w * v for v in t) for t in tris]
    _, kmax = pl_map_dilatation(tris, rot)
    assert kmax == pytest.approx(1.0, abs=1e-12)


def test_pl_axis_stretch_dilatation():
    tris = [(0j, 1 + 0j, 1j)]
    stretched = [(0j, 2 + 0j, 0.5j)]
    Ks, kmax = pl_map_dilatation(tris, stretched)
    assert kmax == 4.0


def test_pl_rejects_degenerate_and_mismatched_input():
    tris = [(0j, 1 + 0j, 1j)]
    with pytest.raises(QDError, match="degenerate"):
        pl_map_dilatation(tris, [(0j, 1 + 0j, 2 + 0j)])
    with pytest.raises(QDError, match="triangle counts differ"):
        pl_map_dilatation(tris, tris * 2)
    with pytest.raises(QDError, match="orientation"):
        pl_map_dilatation(tris, [(0j, 1j, 1 + 0j)])


# ----------------------------------------------------------------
# uniformized doubles and boundary correspondence
# ----------------------------------------------------------------

def test_self_correspondence_is_identity():
    q, _ = near_collision_pair(0.05, 0.0)
    poly = nrrp_system(q, 0.25)[1]          # hexagon around the zero at 3
    res = double_nrrp(_coalesced_spec(poly))
    assert res.converged
    d = uniformized_double(res)
    assert d.corners[0] == 0.0 and d.corners[1] == 1.0
    assert all(b > a for a, b in zip(d.corners, d.corners[1:]))
    assert all(w.imag > 0 for w in d.interior)
    h = boundary_correspondence(d, d, 384, coverage=8.0)
    assert np.abs(h.y - h.x).max() < 1e-12
    assert abs(h(0.0)) < 1e-12 and abs(h(1.0) - 1.0) < 1e-12


def test_near_identical_correspondence_stays_near_identity():
    q1, q2 = near_collision_pair(0.05, 0.05 ** 3)
    p1 = nrrp_system(q1, 0.25)[1]
    p2 = nrrp_system(q2, 0.25)[1]
    d1 = uniformized_double(double_nrrp(_coalesced_spec(p1)))
    d2 = uniformized_double(double_nrrp(_coalesced_spec(p2)))
    h = boundary_correspondence(d1, d2, 384, coverage=10.0)
    assert np.abs(h.y - h.x).max() < 1e-4
    rho = quasisymmetry_constant(h)
    assert rho < 1.001


def test_dilatation_bounded_by_squared_quasisymmetry():
    # modest slope break at the origin; the sampled constant hits the exact
    # value 1.3 because probes sit symmetrically around the break
    xs = np.linspace(-4, 4, 2001)
    h = BoundaryMap(xs, np.where(xs < 0, xs, 1.3 * xs))
    rho = quasisymmetry_constant(h, SamplePlan((0.0, -1.0, 1.0), (0.5, 1.0, 2.0)))
    assert rho == pytest.approx(1.3, abs=1e-9)
    f = beurling_ahlfors(h, 2.0)
    fld = dilatation_field(f, uhp_grid(-1.5, 1.5, 0.05, 1.5), 1e-4)
    assert fld.max_dilatation <= rho ** 2 * 1.05


# ----------------------------------------------------------------
# assembled comparison
# ----------------------------------------------------------------

def test_identical_differentials_give_unit_report():
    q, _ = near_collision_pair(0.05, 0.0)
    rep = assemble_qc_map(q, q, delta=0.25)
    assert rep.max_dilatation == 1.0
    assert rep.teich_bound == 0.0
    assert rep.meta["mode"] == "sphere"
    assert rep.regions[0].kind == "identity"


def test_identical_surfaces_give_unit_report():
    s = torus()
    rep = assemble_qc_map(s, torus())
    assert rep.max_dilatation == 1.0
    assert rep.teich_bound == 0.0
    assert rep.meta["mode"] == "surface"


def test_torus_stretch_matches_affine_distance():
    rep = assemble_qc_map(torus(1, 1j), torus(2, 0.5j))
    assert rep.max_dilatation == 4.0
    assert rep.teich_bound == math.log(2.0)
    assert all(r.kind == "pl" for r in rep.regions)


def test_report_max_equals_max_over_regions():
    q1, q2 = near_collision_pair(0.05, 0.05 ** 3)
    rep = assemble_qc_map(q1, q2, delta=0.25)
    assert rep.max_dilatation == max(r.dilatation for r in rep.regions)
    ids = {r.id for r in rep.regions}
    assert "nrrp:0" in ids and "nrrp:0:interior" in ids
    assert rep.meta["groups"] == [[0, 1], [2], [3]]
    assert math.isfinite(rep.teich_bound) and rep.teich_bound > 0


def test_internal_period_correction_tracks_gap_change():
    # half-gap eps vs eps + eps^3 changes the pair period by a factor
    # (1 + eps^2)^2 and the matching stretch by its square root
    eps = 0.05
    q1, q2 = near_collision_pair(eps, eps ** 3)
    rep = assemble_qc_map(q1, q2, delta=0.25)
    k_int = next(r for r in rep.regions if r.id == "nrrp:0:interior")
    assert k_int.dilatation - 1 == pytest.approx(eps ** 2, rel=0.25)


def test_assembled_bound_nearly_symmetric_under_swap():
    q1, q2 = near_collision_pair(0.1, 0.1 ** 3)
    t12 = assemble_qc_map(q1, q2, delta=0.25).teich_bound
    t21 = assemble_qc_map(q2, q1, delta=0.25).teich_bound
    assert abs(t12 - t21) <= 0.05 * max(t12, t21)


def test_assemble_rejects_mismatched_cluster_structure():
    q1, _ = near_collision_pair(0.05, 0.0)
    # same singularity count, but the close pair is spread out, so the
    # grouping is four singletons instead of a pair plus two singletons
    q3 = RationalQD(1.0, (
        SR(0.6 + 0j, 1),
        SR(-0.6 + 0j, 1),
        SR(3.0 + 0j, 1),
        SR(-1.5 + 2.0j, 1),
    ))
    with pytest.raises(QDError, match="combinatorics mismatch"):
        assemble_qc_map(q1, q3, delta=0.25)


def test_assemble_rejects_mixed_input_kinds():
    q, _ = near_collision_pair(0.05, 0.0)
    with pytest.raises(QDError):
        assemble_qc_map(q, torus())


def test_report_serialization_shape():
    q1, q2 = near_collision_pair(0.1, 0.1 ** 3)
    rep = assemble_qc_map(q1, q2, delta=0.25)
    d = rep.to_json_dict()
    assert d["K_total"] == rep.max_dilatation
    assert d["teich_bound"] == rep.teich_bound
    assert {"id", "kind", "K"} <= set(d["regions"][0])
    assert d["mode"] == "sphere" and d["delta"] == 0.25
