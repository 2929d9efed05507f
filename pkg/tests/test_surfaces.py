"""Glued-surface tests: construction, Delaunay flips (both metrics),
certificates, diameters, induced connectivity, right polygons, doubling."""

import json
import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import ellipk

from flatqd.qdiff import QDError, RationalQD, SingularityRecord as SR, evaluate
from flatqd.surfaces import (
    NRRP,
    RightPolygonSpec,
    build_from_polygons,
    cluster_subgraph_connected,
    delaunay,
    delaunay_certificate,
    double_nrrp,
    linf_delaunay,
    linf_delaunay_certificate,
    load_nrrp,
    load_polygon_file,
    nrrp_system,
    parse_polygon_spec,
    right_polygon,
    save_nrrp,
    surface_diameter,
    triangulate,
)

TORUS_GLUE = [((0, 0), (0, 2), 1), ((0, 1), (0, 3), 1)]


def torus(v1=1, v2=1j):
    return build_from_polygons([[0, v1, v1 + v2, v2]], TORUS_GLUE)


def pillowcase(w=1.0, h=1.0):
    poly = [[0, w, w + h * 1j, h * 1j]]
    glue = [((0, i), (0, i), -1) for i in range(4)]
    return build_from_polygons(poly, glue)


def l_shaped():
    pts = [0, 1, 2, 2 + 1j, 1 + 1j, 1 + 2j, 2j, 1j]
    glue = [
        ((0, 0), (0, 5), 1),   # lower-left bottom <-> upper top
        ((0, 1), (0, 3), 1),   # lower-right bottom <-> arm top
        ((0, 2), (0, 7), 1),   # arm right <-> left lower
        ((0, 4), (0, 6), 1),   # inner right <-> left upper
    ]
    return build_from_polygons([pts], glue)


def stacked_squares(n=2):
    polys = [[0, 1, 1 + 1j, 1j] for _ in range(n)]
    glue = []
    for p in range(n):
        glue.append(((p, 3), (p, 1), 1))                 # left <-> right
        glue.append(((p, 2), ((p + 1) % n, 0), 1))       # top <-> next bottom
    return build_from_polygons(polys, glue)


def folded_triangle():
    s3 = math.sqrt(3) / 2
    poly = [[0, 1, 0.5 + s3 * 1j]]
    glue = [((0, i), (0, i), -1) for i in range(3)]
    return build_from_polygons(poly, glue)


def corpus():
    return {
        "square": torus(),
        "rect2": torus(2, 1j),
        "rect3": torus(3, 1j),
        "hex": torus(1, np.exp(1j * np.pi / 3)),
        "sheared": torus(1, 0.5 + 0.15j),
        "pillow": pillowcase(),
        "thin_pillow": pillowcase(2.0, 0.1),
        "tri_fold": folded_triangle(),
        "l_shape": l_shaped(),
        "stacked": stacked_squares(2),
    }


# ----------------------------------------------------------------
# construction
# ----------------------------------------------------------------

def test_square_torus_structure():
    s = torus()
    assert len(s.vertices) == 1
    v = s.vertices[0]
    assert abs(v.angle - 2 * math.pi) < 1e-12
    assert v.order == 0 and v.marked
    assert s.euler_characteristic == 0
    assert s.genus == 1


def test_pillowcase_structure():
    s = pillowcase()
    assert s.euler_characteristic == 2
    orders = sorted(v.order for v in s.vertices)
    assert orders == [-1, -1, -1, -1, 0]
    angles = sorted(v.angle for v in s.vertices)
    assert np.allclose(angles, [math.pi] * 4 + [2 * math.pi])


def test_hexagonal_torus_structure():
    s = torus(1, np.exp(1j * np.pi / 3))
    assert len(s.vertices) == 1
    assert abs(s.vertices[0].angle - 2 * math.pi) < 1e-12


def test_l_shape_is_genus_two():
    s = l_shaped()
    assert s.euler_characteristic == -2
    assert s.genus == 2
    assert len(s.vertices) == 1
    v = s.vertices[0]
    assert abs(v.angle - 6 * math.pi) < 1e-9
    assert v.order == 4 and not v.marked


def test_stacked_squares_two_marked_points():
    s = stacked_squares(2)
    assert s.euler_characteristic == 0
    assert len(s.vertices) == 2
    assert all(v.order == 0 and v.marked for v in s.vertices)


def test_folded_triangle_is_four_pole_sphere():
    s = folded_triangle()
    assert s.euler_characteristic == 2
    assert sorted(v.order for v in s.vertices) == [-1, -1, -1, -1]


def test_gauss_bonnet_on_corpus():
    for name, s in corpus().items():
        defect = sum(2 * math.pi - v.angle for v in s.vertices)
        assert abs(defect - 2 * math.pi * s.euler_characteristic) < 1e-9, name


def test_unglued_edge_rejected():
    with pytest.raises(QDError, match="unglued edge"):
        build_from_polygons([[0, 1, 1 + 1j, 1j]], TORUS_GLUE[:1])


def test_double_gluing_rejected():
    glue = TORUS_GLUE + [((0, 0), (0, 2), 1)]
    with pytest.raises(QDError, match="glued twice"):
        build_from_polygons([[0, 1, 1 + 1j, 1j]], glue)


def test_incongruent_gluing_rejected():
    # length mismatch between the glued sides
    poly = [[0, 2, 2 + 1j, 1j]]
    glue = [((0, 0), (0, 1), 1), ((0, 2), (0, 3), 1)]
    with pytest.raises(QDError, match="incongruent gluing"):
        build_from_polygons(poly, glue)


def test_translation_self_gluing_rejected():
    glue = [((0, 0), (0, 0), 1)] + TORUS_GLUE[1:]
    with pytest.raises(QDError, match="translation"):
        build_from_polygons([[0, 1, 1 + 1j, 1j]], glue)


def test_clockwise_polygon_rejected():
    with pytest.raises(QDError, match="counterclockwise"):
        build_from_polygons([[0, 1j, 1 + 1j, 1]], TORUS_GLUE)


def test_cone_angle_tolerance_violation():
    # trapezoid tube: fold top and bottom, glue the slant sides by a
    # translation; a tiny slant keeps the gluing congruent under a loose
    # tolerance but leaves the corner orbits at π ∓ 2δ
    d = 1e-6
    poly = [[0, 1, (1 - d) + 1j, d + 1j]]
    glue = [((0, 0), (0, 0), -1), ((0, 2), (0, 2), -1), ((0, 1), (0, 3), 1)]
    with pytest.raises(QDError, match="cone angle"):
        build_from_polygons(poly, glue, tol=1e-4)


def test_parse_polygon_spec_round_trip():
    text = """
    # unit square torus
    polygon 0,0 1,0 1,1 0,1
    glue (0,0) <-> (0,2) +1
    glue (0,1) <-> (0,3) +1
    """
    polys, glue = parse_polygon_spec(text)
    s = build_from_polygons(polys, glue)
    assert len(s.vertices) == 1
    assert s.euler_characteristic == 0


def test_parse_polygon_spec_errors():
    with pytest.raises(QDError, match="line"):
        parse_polygon_spec("glue (0,0) <-> (0,2) *1")
    with pytest.raises(QDError, match="line"):
        parse_polygon_spec("frobnicate 1 2 3")


def test_load_polygon_file(tmp_path):
    p = tmp_path / "torus.txt"
    p.write_text(
        "polygon 0,0 2,0 2,1 0,1\n"
        "glue (0,0) <-> (0,2) +1\nglue (0,1) <-> (0,3) +1\n"
    )
    polys, glue = load_polygon_file(p)
    s = build_from_polygons(polys, glue)
    assert s.genus == 1


# ----------------------------------------------------------------
# triangulation and flips
# ----------------------------------------------------------------

def test_initial_triangulation_invariants():
    for name, s in corpus().items():
        tri = triangulate(s)
        tri.check_invariants()
        assert len(tri.faces()) * 3 == tri.n_halfedges, name


def test_square_torus_delaunay_edges():
    d = delaunay(torus())
    assert d.flips == 0
    vecs = sorted((round(abs(v.real), 9), round(abs(v.imag), 9))
                  for v in d.edge_vectors())
    assert vecs == [(0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
    assert d.delaunay and not d.linf_delaunay


def test_rect2_delaunay_keeps_tie_diagonal():
    # the four lifts are cocircular: the tie keeps the existing diagonal,
    # the scaled image of the square's (1,1)
    d = delaunay(torus(2, 1j))
    assert d.flips == 0
    vecs = sorted((round(abs(v.real), 9), round(abs(v.imag), 9))
                  for v in d.edge_vectors())
    assert vecs == [(0.0, 1.0), (2.0, 0.0), (2.0, 1.0)]


def test_hexagonal_torus_already_delaunay():
    d = delaunay(torus(1, np.exp(1j * np.pi / 3)))
    assert d.flips == 0
    assert all(abs(abs(v) - 1) < 1e-12 for v in d.edge_vectors())


def test_sheared_torus_flips_to_short_edge():
    d = delaunay(torus(1, 0.5 + 0.15j))
    assert d.flips >= 1
    lens = sorted(abs(v) for v in d.edge_vectors())
    assert abs(lens[0] - 0.3) < 1e-9          # 2*(0.5+0.15j) - 1
    assert all(abs(abs(v) - 1.0) > 1e-9 for v in d.edge_vectors())


def test_delaunay_certificates_on_corpus():
    for name, s in corpus().items():
        d = delaunay(s)
        cert = delaunay_certificate(d)
        assert cert["ok"], (name, cert["violations"][:3])


def test_delaunay_idempotent():
    for name, s in corpus().items():
        d = delaunay(s)
        d2 = delaunay(d)
        assert d2.flips == 0, name


def test_delaunay_from_linf_start_passes_certificate():
    # path independence: a different starting triangulation must reach a
    # triangulation passing the same brute-force certificate
    for name in ("square", "sheared", "l_shape", "thin_pillow"):
        s = corpus()[name]
        via = delaunay(linf_delaunay(s))
        assert delaunay_certificate(via)["ok"], name


def test_flip_guard_reports_runaway():
    from flatqd.surfaces import _flip_until

    tri = triangulate(torus())
    with pytest.raises(QDError, match="flip (cycle|budget)"):
        _flip_until(tri, lambda *a: False, 1e-12)


def test_delaunay_edges_bounded_by_diameter():
    for name in ("square", "rect2", "hex", "sheared", "stacked"):
        s = corpus()[name]
        d = delaunay(s)
        diam = surface_diameter(d)
        worst = max(abs(v) for v in d.edge_vectors())
        # the bound is tight on the square torus; allow the diameter
        # estimator its documented relative tolerance
        assert worst <= 2 * diam * (1 + 3e-3), (name, worst, diam)


# ----------------------------------------------------------------
# L-infinity flavor
# ----------------------------------------------------------------

def test_linf_square_torus():
    li = linf_delaunay(torus())
    assert li.linf_delaunay and not li.delaunay
    diam = math.sqrt(2) / 2
    assert all(abs(v) <= 2 * math.sqrt(2) * diam * (1 + 1e-9)
               for v in li.edge_vectors())
    assert set(li.slope_flags) == set(li.edge_reps())
    cert = linf_delaunay_certificate(li)
    assert cert["ok"]


def test_linf_certificates_on_corpus():
    for name, s in corpus().items():
        li = linf_delaunay(s)
        cert = linf_delaunay_certificate(li)
        assert cert["ok"], (name, cert["violations"][:3])


def test_linf_edge_bound_on_corpus():
    for name in ("square", "rect2", "hex", "sheared", "stacked"):
        s = corpus()[name]
        li = linf_delaunay(s)
        diam = surface_diameter(li)
        worst = max(abs(v) for v in li.edge_vectors())
        assert worst <= 2 * math.sqrt(2) * diam * (1 + 3e-3), (name, worst, diam)


def test_slope_flags_match_vectors():
    li = linf_delaunay(torus(1, 0.5 + 0.15j))
    for h, flag in li.slope_flags.items():
        v = complex(li.vec[h])
        s = v.real * v.imag
        if flag == "nonneg":
            assert s > 0
        elif flag == "nonpos":
            assert s < 0
        else:
            assert abs(s) < 1e-12


# ----------------------------------------------------------------
# diameter
# ----------------------------------------------------------------

def test_square_torus_diameter():
    d = surface_diameter(torus())
    assert abs(d - math.sqrt(2) / 2) < 1e-3 * math.sqrt(2) / 2


def test_rect2_torus_diameter():
    d = surface_diameter(torus(2, 1j))
    assert abs(d - math.sqrt(5) / 2) < 1e-3 * math.sqrt(5) / 2


# ----------------------------------------------------------------
# induced subgraph connectivity
# ----------------------------------------------------------------

def test_single_vertex_connected():
    d = delaunay(torus())
    ok, witness = cluster_subgraph_connected(d, [0])
    assert ok and witness == []


def test_close_pole_pair_connected_with_tree():
    d = delaunay(pillowcase(2.0, 0.1))
    # the two poles at the long-side midpoints are each other's nearest
    # neighbor; find them by their angle-π records and positions
    poles = [i for i, v in enumerate(d.vertices) if v.order == -1]
    # pick the pair joined by an edge of length ~0.1
    pair = None
    for h in d.edge_reps():
        u, w = int(d.origin[h]), int(d.origin[d.twin[h]])
        if u in poles and w in poles and u != w and abs(d.vec[h]) < 0.5:
            pair = (u, w)
            break
    assert pair is not None
    ok, witness = cluster_subgraph_connected(d, list(pair))
    assert ok
    assert sorted(witness[0]) == sorted(pair)


def test_separated_vertices_disconnected_with_cut():
    d = delaunay(stacked_squares(4))
    assert len(d.vertices) == 4
    # vertices two levels apart share no edge
    ok, witness = cluster_subgraph_connected(d, [0, 2])
    assert not ok
    comp, rest = witness
    assert sorted(comp + rest) == [0, 2]


def test_connectivity_validation():
    d = delaunay(torus())
    with pytest.raises(QDError, match="empty"):
        cluster_subgraph_connected(d, [])
    with pytest.raises(QDError, match="out of range"):
        cluster_subgraph_connected(d, [7])


# ----------------------------------------------------------------
# right polygons
# ----------------------------------------------------------------

Q4 = RationalQD(1.0, (SR(0, 1), SR(6, 1), SR(-6 + 3j, 1), SR(-6 - 3j, 1)))


def test_simple_zero_polygon_has_six_sides():
    p = right_polygon(Q4, [0], inradius=0.05)
    assert len(p.sides) == 6
    labels = [l for l, _ in p.sides]
    assert labels == ["v", "h", "v", "h", "v", "h"]
    assert all(abs(ln - 0.1) < 0.01 for _, ln in p.sides)
    assert abs(p.radius - 0.05) < 0.005
    assert [s.order for s in p.interior] == [1]
    assert len(p.corners) == 6


def test_pole_polygon_is_bigon():
    w0 = 0.3 + 0.8j
    q = RationalQD(1.0, (SR(0, -1, True), SR(1, -1, True),
                         SR(w0, -1, True), SR(w0.conjugate(), -1, True)))
    p = right_polygon(q, [2])
    assert len(p.sides) == 2
    assert [s.order for s in p.interior] == [-1]
    assert p.radius > 0


def test_marked_point_polygon_is_square():
    q = RationalQD(1.0, (SR(0, 0, True), SR(6, 1), SR(-6 + 3j, 1),
                         SR(-6 - 3j, 1), SR(2, 1)))
    p = right_polygon(q, [0], inradius=0.05)
    assert len(p.sides) == 4
    assert [s.order for s in p.interior] == [0]


def test_two_pole_group_rejected():
    q = RationalQD(1.0, (SR(0, -1, True), SR(1, -1, True),
                         SR(5 + 5j, 1), SR(5 - 5j, 1)))
    with pytest.raises(QDError, match="at most one pole"):
        right_polygon(q, [0, 1], inradius=0.01)


def test_nrrp_system_on_four_zeros():
    polys = nrrp_system(Q4, 0.05)
    assert len(polys) == 4
    for p in polys:
        assert len(p.sides) == 6
        assert p.radius > 0
        lens = [ln for _, ln in p.sides]
        assert max(lens) / min(lens) < 1.01


def test_nrrp_system_cluster_polygon():
    # close pair far from two guards: the pair forms a δ-cluster and gets a
    # single 8-sided polygon (total order 2)
    eps = 0.05
    q = RationalQD(1.0, (SR(eps, 1), SR(-eps, 1), SR(40, 1), SR(-40, 1)))
    polys = nrrp_system(q, 0.2)
    sides = sorted(len(p.sides) for p in polys)
    assert sides == [6, 6, 8]
    big = [p for p in polys if len(p.sides) == 8][0]
    assert sorted(s.order for s in big.interior) == [1, 1]
    assert big.radius > 0


def test_nrrp_system_blocked_cluster():
    # the cluster is wide relative to its separation: no polygon at this δ
    q = RationalQD(1.0, (SR(0, 1), SR(1.0, 1), SR(4.0, 1), SR(-3.0, 1)))
    with pytest.raises(QDError, match="blocking pair"):
        nrrp_system(q, 0.9)


def test_nrrp_system_rejects_surfaces():
    with pytest.raises(QDError, match="sphere differentials"):
        nrrp_system(torus(), 0.1)


def test_nrrp_validation():
    rec = (SR(0, 1),)
    with pytest.raises(QDError, match="alternate"):
        NRRP(sides=(("v", 1.0), ("v", 1.0)), interior=rec, radius=0.1)
    with pytest.raises(QDError, match="inconsistent"):
        NRRP(sides=(("v", 1.0), ("h", 1.0)), interior=rec, radius=0.1)
    with pytest.raises(QDError, match="at least one singularity"):
        NRRP(sides=(("v", 1.0), ("h", 1.0)), interior=(), radius=0.1)
    with pytest.raises(QDError, match="at most one pole"):
        NRRP(sides=(("v", 1.0), ("h", 1.0)) * 1,
             interior=(SR(0, -1, True), SR(1, -1, True)), radius=0.1)


def test_nrrp_save_load(tmp_path):
    p = right_polygon(Q4, [0], inradius=0.05)
    path = tmp_path / "poly.json"
    save_nrrp(p, path)
    spec = load_nrrp(path)
    assert spec.sides == p.sides
    assert spec.interior_orders == (1,)
    data = json.loads(path.read_text())
    assert data["radius"] == p.radius


# ----------------------------------------------------------------
# doubling
# ----------------------------------------------------------------

def test_double_square_cross_ratio():
    spec = RightPolygonSpec(sides=(("v", 1.0), ("h", 1.0), ("v", 1.0), ("h", 1.0)))
    res = double_nrrp(spec)
    assert res.converged
    assert res.residual_norm < 1e-8
    x0, x1, x2, x3 = res.corners
    xi = ((x2 - x0) * (x1 - x3)) / ((x2 - x3) * (x1 - x0))
    # square: the modulus equation K(k) = K(k') forces k^2 = 1/2
    assert abs(1 / xi - 0.5) < 1e-9


def test_double_rectangle_elliptic_oracle():
    spec = RightPolygonSpec(sides=(("v", 2.0), ("h", 1.0), ("v", 2.0), ("h", 1.0)))
    res = double_nrrp(spec)
    assert res.converged and res.residual_norm < 1e-8
    x0, x1, x2, x3 = res.corners
    xi = ((x2 - x0) * (x1 - x3)) / ((x2 - x3) * (x1 - x0))
    k2 = 1 / xi
    # independent modulus: K(k')/K(k) = 1/2 for side ratio h/v = 1/2
    m = brentq(lambda mm: ellipk(1 - mm) / ellipk(mm) - 0.5, 1e-12, 1 - 1e-12)
    assert abs(k2 - m) < 1e-7


def test_double_square_convergence_order():
    spec = RightPolygonSpec(sides=(("v", 1.0), ("h", 1.0), ("v", 1.0), ("h", 1.0)))
    res = double_nrrp(spec)
    h = [x for x in res.residual_history if x > 1e-14]
    assert len(h) >= 4
    orders = [
        math.log(h[i + 1] / h[i]) / math.log(h[i] / h[i - 1])
        for i in range(1, len(h) - 1)
        if h[i] < h[i - 1] and h[i + 1] < h[i]
    ]
    assert max(orders) > 1.5


def test_double_resolve_takes_no_steps():
    spec = RightPolygonSpec(sides=(("v", 1.0), ("h", 1.0), ("v", 1.0), ("h", 1.0)))
    res = double_nrrp(spec)
    res2 = double_nrrp(spec, initial=res.differential)
    assert res2.iterations == 0
    assert res2.residual_norm < 1e-8


def _bigon_side_integrals(y):
    """Closed-form setup for a sphere with simple poles at 0, 1, 1/2 ± iy
    and unit scale: length of the segment (0,1) and of the complementary
    boundary arc through ∞, by direct quadrature of 1/sqrt|Q|."""
    from scipy.integrate import quad

    a = 2 * quad(
        lambda th: 1.0 / math.sqrt(math.sin(th) ** 2 / 4 + y * y),
        0.0, math.pi / 2, epsabs=1e-13, epsrel=1e-13,
    )[0]
    b = 4 * quad(
        lambda u: 1.0 / math.sqrt(
            (1 + u * u) * ((u * u + 0.5) ** 2 + y * y)
        ),
        0.0, np.inf, epsabs=1e-13, epsrel=1e-13,
    )[0]
    return a, b


def test_double_bigon_against_one_parameter_oracle():
    w0 = 0.3 + 0.8j
    q = RationalQD(1.0, (SR(0, -1, True), SR(1, -1, True),
                         SR(w0, -1, True), SR(w0.conjugate(), -1, True)))
    big = right_polygon(q, [2])
    res = double_nrrp(big)
    assert res.converged and res.residual_norm < 1e-8
    w = res.interior[0]
    assert abs(w.real - 0.5) < 1e-9
    t0, t1 = (ln for _, ln in big.sides)

    # independent one-parameter solve: with Re w = 1/2 pinned by symmetry,
    # the ratio of the two boundary lengths is monotone in Im w
    def ratio(y):
        a, b = _bigon_side_integrals(y)
        return b / a

    y_star = brentq(lambda y: ratio(y) - t1 / t0, 0.05, 5.0, xtol=1e-12)
    assert abs(w.imag - y_star) < 1e-6

    # scale recovered from the absolute length of the first side
    a_star, _ = _bigon_side_integrals(y_star)
    lam = float(np.real(res.differential.scale))
    assert lam > 0        # vertical first side needs Q < 0 on (0,1)
    assert abs(lam - (t0 / a_star) ** 2) < 1e-6 * (t0 / a_star) ** 2


def test_double_bigon_resolve():
    w0 = 0.3 + 0.8j
    q = RationalQD(1.0, (SR(0, -1, True), SR(1, -1, True),
                         SR(w0, -1, True), SR(w0.conjugate(), -1, True)))
    big = right_polygon(q, [2])
    res = double_nrrp(big)
    res2 = double_nrrp(big.to_spec(), initial=res.differential)
    assert res2.iterations == 0


def test_double_zero_hexagon():
    p = right_polygon(Q4, [0], inradius=0.05)
    res = double_nrrp(p)
    assert res.converged and res.residual_norm < 1e-8
    assert len(res.corners) == 6
    assert res.interior[0].imag > 0
    # the solved differential is vertical on the first side
    q = res.differential
    mid = (res.corners[0] + res.corners[1]) / 2
    assert evaluate(q, mid).real < 0


def test_double_budget_returns_best_iterate():
    spec = RightPolygonSpec(sides=(("v", 1.0), ("h", 1.0), ("v", 1.0), ("h", 1.0)))
    res = double_nrrp(spec, max_iter=1)
    assert not res.converged
    assert res.iterations == 1
    assert np.isfinite(res.residual_norm)


def test_double_invalid_initial_rejected():
    spec = RightPolygonSpec(sides=(("v", 1.0), ("h", 1.0), ("v", 1.0), ("h", 1.0)))
    bad = RationalQD(1.0, (SR(0.0, -1, True), SR(2.0, -1, True),
                           SR(3.0, -1, True), SR(4.0, -1, True)))
    with pytest.raises(QDError, match="degenerate corner ordering"):
        double_nrrp(spec, initial=bad)


def test_double_rejects_underdetermined():
    with pytest.raises(QDError, match="underdetermine|not supported"):
        spec = RightPolygonSpec(
            sides=tuple(("v" if i % 2 == 0 else "h", 1.0) for i in range(12)),
            interior_orders=(2, 2),
        )
        double_nrrp(spec)


def test_double_rejects_interior_marked_point():
    spec = RightPolygonSpec(
        sides=tuple(("v" if i % 2 == 0 else "h", 1.0) for i in range(4)),
        interior_orders=(0,),
    )
    with pytest.raises(QDError, match="marked"):
        double_nrrp(spec)
