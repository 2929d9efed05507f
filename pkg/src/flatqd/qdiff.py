"""Quadratic differentials on the sphere and polynomial collision models.

A rational quadratic differential is stored by its finite singularity data
(location, order, marked flag) plus a nonzero complex scale λ, never by
expanded polynomial coefficients: collision geometry stays exact in root
coordinates.  The order at ∞ is always derived from the finite orders so the
total order over the sphere is −4.

A ClusterDifferential is the monic polynomial model of a collision zoomed to
scale one: p(z) dz² with weighted root sum 0, or p(z)/z dz² when the model
carries a simple pole at the origin.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field


INF = float("inf")  # sentinel for the point at infinity in fix-triples/targets


class QDError(ValueError):
    """Invalid differential data or an operation outside its domain."""


# ============================================================
# data model
# ============================================================

@dataclass(frozen=True)
class SingularityRecord:
    """One finite singularity: a zero (order ≥ 1), a marked regular point
    (order 0), or a simple pole (order −1, always marked)."""

    location: complex
    order: int
    marked: bool = False

    def __post_init__(self):
        if not isinstance(self.order, int):
            raise QDError(f"order must be an integer, got {self.order!r}")
        if self.order < -1:
            raise QDError(
                f"order {self.order} at {self.location}: orders below -1 "
                "are not representable at a finite point"
            )
        object.__setattr__(self, "location", complex(self.location))

    @property
    def cone_angle(self) -> float:
        return (self.order + 2) * math.pi


def _check_records(scale: complex, records: tuple[SingularityRecord, ...]) -> list[str]:
    problems = []
    if scale == 0:
        problems.append("scale must be nonzero")
    seen: dict[complex, int] = {}
    for k, rec in enumerate(records):
        if rec.location in seen:
            problems.append(
                f"duplicate location {rec.location} (records {seen[rec.location]} and {k})"
            )
        else:
            seen[rec.location] = k
        if rec.order == -1 and not rec.marked:
            problems.append(f"unmarked finite simple pole at {rec.location}")
        if rec.order == 0 and not rec.marked:
            problems.append(
                f"order-0 record at {rec.location} must be marked "
                "(an unmarked regular point is not a singularity)"
            )
    return problems


@dataclass(frozen=True)
class RationalQD:
    """λ·Π(z − z_j)^{e_j} dz² on the sphere; the order at ∞ is derived."""

    scale: complex
    singularities: tuple[SingularityRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "scale", complex(self.scale))
        object.__setattr__(self, "singularities", tuple(self.singularities))
        problems = _check_records(self.scale, self.singularities)
        if problems:
            raise QDError("; ".join(problems))

    @property
    def infinity_order(self) -> int:
        # total order over the sphere is -4
        return -4 - sum(r.order for r in self.singularities)

    @property
    def total_finite_order(self) -> int:
        return sum(r.order for r in self.singularities)

    def locations(self) -> list[complex]:
        return [r.location for r in self.singularities]

    def orders(self) -> list[int]:
        return [r.order for r in self.singularities]


@dataclass(frozen=True)
class ClusterDifferential:
    """Monic collision model p(z) dz², or p(z)/z dz² with a simple pole at 0.

    roots: tuple of (location, order) with every order ≥ 1.
    marked_at_zero: the origin is a marked point (forced when pole_at_zero).
    The rational function degree m = Σ orders − (1 if pole_at_zero) drives the
    period scaling law t^{(m+2)/2}.
    """

    roots: tuple[tuple[complex, int], ...]
    marked_at_zero: bool = False
    pole_at_zero: bool = False

    def __post_init__(self):
        roots = tuple((complex(z), int(e)) for z, e in self.roots)
        object.__setattr__(self, "roots", roots)
        problems = []
        seen = set()
        for z, e in roots:
            if e < 1:
                problems.append(f"root order {e} at {z}: cluster roots have order >= 1")
            if z in seen:
                problems.append(f"duplicate root location {z}")
            seen.add(z)
        if self.pole_at_zero:
            if not self.marked_at_zero:
                problems.append("a pole at 0 forces 0 to be the marked point")
            if 0 in seen:
                problems.append("root at 0 is not allowed together with the pole at 0")
        else:
            if not roots:
                problems.append("a poleless cluster model needs at least one root")
            else:
                weighted = sum(e * z for z, e in roots)
                span = max(abs(z) for z, _ in roots)
                if abs(weighted) > 1e-9 * max(1.0, span) * sum(e for _, e in roots):
                    problems.append(
                        f"weighted root sum {weighted} is not 0: the model must be centered"
                    )
        if problems:
            raise QDError("; ".join(problems))

    @property
    def degree(self) -> int:
        """Rational function degree m."""
        return sum(e for _, e in self.roots) - (1 if self.pole_at_zero else 0)

    def to_rational(self) -> RationalQD:
        """The same differential as a sphere object with scale 1."""
        recs = []
        zero_is_root = any(z == 0 for z, _ in self.roots)
        for z, e in self.roots:
            marked = self.marked_at_zero and z == 0
            recs.append(SingularityRecord(z, e, marked))
        if self.pole_at_zero:
            recs.append(SingularityRecord(0, -1, True))
        elif self.marked_at_zero and not zero_is_root:
            recs.append(SingularityRecord(0, 0, True))
        return RationalQD(1.0, tuple(recs))


# ============================================================
# evaluation and elementary transforms
# ============================================================

def _root_data(q) -> tuple[complex, list[tuple[complex, int]]]:
    if isinstance(q, ClusterDifferential):
        pairs = list(q.roots)
        if q.pole_at_zero:
            pairs.append((0j, -1))
        return 1.0 + 0j, pairs
    return q.scale, [(r.location, r.order) for r in q.singularities]


def evaluate(q, z: complex) -> complex:
    """Value of the coefficient λ·Π(z − z_j)^{e_j} at z."""
    scale, pairs = _root_data(q)
    val = scale
    for zj, e in pairs:
        val *= (z - zj) ** e
    return val


def validate(q: RationalQD) -> dict:
    """Summary report for a differential that already passed construction.

    Construction raises QDError on any invariant violation, so reaching this
    function means the data is valid; the report restates the derived facts.
    """
    return {
        "ok": True,
        "n_singularities": len(q.singularities),
        "total_finite_order": q.total_finite_order,
        "infinity_order": q.infinity_order,
        "n_marked": sum(1 for r in q.singularities if r.marked),
        "n_poles": sum(1 for r in q.singularities if r.order == -1),
    }


def translate(q: RationalQD, delta: complex) -> RationalQD:
    """Move every singularity by delta.  Translation has trivial cocycle."""
    recs = tuple(
        SingularityRecord(r.location + delta, r.order, r.marked) for r in q.singularities
    )
    return RationalQD(q.scale, recs)


def scale_singularities(q: ClusterDifferential, t: float) -> tuple[ClusterDifferential, float]:
    """Multiply all root locations by t > 0.

    Returns the scaled model and the factor t^{(m+2)/2} by which all its
    periods scale (change of variables z = t·w in ∫√q dz).
    """
    if not (isinstance(t, (int, float)) and t > 0):
        raise QDError(f"scaling parameter must be a positive real, got {t!r}")
    scaled = ClusterDifferential(
        tuple((z * t, e) for z, e in q.roots),
        marked_at_zero=q.marked_at_zero,
        pole_at_zero=q.pole_at_zero,
    )
    factor = float(t) ** ((q.degree + 2) / 2)
    return scaled, factor


def conjugation_invariant(q: RationalQD, tol: float = 1e-12) -> bool:
    """Whether the singularity data is closed under complex conjugation and
    the scale is real, both to tolerance tol."""
    if abs(q.scale.imag) > tol * max(1.0, abs(q.scale)):
        return False
    recs = list(q.singularities)
    used = [False] * len(recs)
    for i, r in enumerate(recs):
        if used[i]:
            continue
        target = r.location.conjugate()
        best, best_d = None, INF
        for j, s in enumerate(recs):
            if used[j] or j == i and abs(r.location.imag) > tol:
                continue
            if s.order == r.order and s.marked == r.marked:
                d = abs(s.location - target)
                if d < best_d:
                    best, best_d = j, d
        if best is None or best_d > tol * max(1.0, abs(r.location)):
            return False
        used[i] = True
        used[best] = True
    return True


# ---------- Möbius normalization ----------

def _as_point(value, q: RationalQD) -> complex | float:
    """Resolve a fix-triple entry: an index into q.singularities or INF."""
    if value is INF or (isinstance(value, float) and math.isinf(value)):
        return INF
    if isinstance(value, int):
        if not 0 <= value < len(q.singularities):
            raise QDError(f"singularity index {value} out of range")
        return q.singularities[value].location
    raise QDError(f"fix-triple entries must be singularity indices or INF, got {value!r}")


def _mobius_from_triples(src, dst):
    """Coefficients (a, b, c, d) of S(z) = (az+b)/(cz+d) with S(src_k) = dst_k.

    Entries may be INF.  Built as the composition of the two standard maps
    sending each triple to (0, 1, ∞).
    """

    def to_std(p0, p1, p2):
        # rows of the matrix of z ↦ (z−p0)(p1−p2) / ((z−p2)(p1−p0))
        if p0 is INF:
            return (0, p1 - p2, 1, -p2)
        if p1 is INF:
            return (1, -p0, 1, -p2)
        if p2 is INF:
            return (1, -p0, 0, p1 - p0)
        return (p1 - p2, -p0 * (p1 - p2), p1 - p0, -p2 * (p1 - p0))

    a1, b1, c1, d1 = to_std(*src)
    a2, b2, c2, d2 = to_std(*dst)
    # S = inv(M2) ∘ M1
    ia, ib, ic, id_ = d2, -b2, -c2, a2
    a = ia * a1 + ib * c1
    b = ia * b1 + ib * d1
    c = ic * a1 + id_ * c1
    d = ic * b1 + id_ * d1
    return complex(a), complex(b), complex(c), complex(d)


def mobius_normalize(
    q: RationalQD,
    fix_triple: tuple | None = None,
    targets: tuple = (0.0, 1.0, INF),
) -> RationalQD:
    """Apply the Möbius map sending three chosen distinguished points of q to
    the target locations (default 0, 1, ∞), updating the scale by the exact
    transformation cocycle.

    fix_triple entries are indices into q.singularities, or INF for the point
    at infinity.  Default: the first two finite singularities and ∞, which
    makes the operation the identity on already-normalized inputs.
    """
    if fix_triple is None:
        if len(q.singularities) < 2:
            raise QDError("need at least two finite singularities to normalize")
        fix_triple = (0, 1, INF)
    if len(set(map(repr, fix_triple))) != 3:
        raise QDError(f"fix-triple entries must be distinct, got {fix_triple}")
    src = tuple(_as_point(v, q) for v in fix_triple)
    if len({repr(p) for p in src}) != 3:
        raise QDError("fix-triple resolves to coincident points")
    dst = tuple(INF if (isinstance(t, float) and math.isinf(t)) else complex(t) for t in targets)

    a, b, c, d = _mobius_from_triples(src, dst)
    det = a * d - b * c
    if det == 0:
        raise QDError("degenerate Möbius data")

    e_inf = q.infinity_order
    pairs = [(r.location, r.order, r.marked) for r in q.singularities]
    total = q.total_finite_order

    new_recs: list[SingularityRecord] = []

    if c == 0:
        # affine map S(z) = (a z + b)/d: infinity is fixed, and the factor
        # (d/a)^{Σe+2} already carries the full derivative contribution
        new_scale = q.scale * (d / a) ** (total + 2)
        for z, e, mk in pairs:
            new_recs.append(SingularityRecord((a * z + b) / d, e, mk))
        return RationalQD(new_scale, tuple(new_recs))

    # general case: S(∞) = a/c is finite, and the point −d/c is sent to ∞
    new_scale = q.scale * det * det
    w_inf = a / c
    for z, e, mk in pairs:
        denom = c * z + d
        if denom == 0:
            # this singularity is sent to infinity; its factor contributes
            # (det/c)^e and shifts the exponent collected at S(∞)
            new_scale *= (det / c) ** e
        else:
            new_scale *= denom**e
            new_recs.append(SingularityRecord((a * z + b) / denom, e, mk))
    new_scale *= (-c) ** (-(total + 4))

    if e_inf != 0:
        if e_inf < -1:
            raise QDError(
                f"normalization moves infinity (order {e_inf}) to a finite "
                "point; orders below -1 are not representable"
            )
        # the old infinity lands at a/c; a simple pole there must be marked
        new_recs.append(SingularityRecord(w_inf, e_inf, e_inf == -1))

    return RationalQD(new_scale, tuple(new_recs))


# ---------- branched double cover ----------

def double_cover_pullback(q: RationalQD, tol: float = 1e-12) -> RationalQD:
    """Pull q back under the degree-2 cover h(w) = (w² − 1)/(2w).

    h is branched exactly over ±i (h(±i) = ±i), so q must have simple poles
    there and be conjugation-invariant; the branch points become marked
    regular points upstairs, every other finite singularity acquires the two
    preimages w = z ± √(z² + 1), and the old ∞ splits into w = 0 and w = ∞.
    """
    if not conjugation_invariant(q, tol):
        raise QDError("pullback input must be conjugation-invariant with real scale")
    by_loc = {r.location: r for r in q.singularities}

    def pole_at(p):
        for r in q.singularities:
            if abs(r.location - p) <= tol and r.order == -1:
                return r
        return None

    if pole_at(1j) is None or pole_at(-1j) is None:
        raise QDError("pullback requires simple poles at +i and -i")

    e_inf = q.infinity_order
    rest = [r for r in q.singularities if abs(r.location - 1j) > tol and abs(r.location + 1j) > tol]
    rest_total = sum(r.order for r in rest)

    new_recs = [
        SingularityRecord(1j, 0, True),
        SingularityRecord(-1j, 0, True),
    ]
    for r in rest:
        z = r.location
        s = cmath.sqrt(z * z + 1)
        for w in (z + s, z - s):
            new_recs.append(SingularityRecord(w, r.order, r.marked))
    if e_inf != 0:
        if e_inf < -1:
            raise QDError(
                f"infinity has order {e_inf}; its preimage w = 0 cannot carry "
                "an order below -1"
            )
        new_recs.append(SingularityRecord(0, e_inf, e_inf == -1))

    new_scale = q.scale * 2.0 ** (-rest_total)
    return RationalQD(new_scale, tuple(new_recs))


# ============================================================
# file format
# ============================================================

def save_differential(q: RationalQD, path: str) -> None:
    """Write the differential spec file: header `scale re im`, then one line
    `re im order marked(0/1)` per finite singularity."""
    lines = [f"scale {q.scale.real!r} {q.scale.imag!r}"]
    for r in q.singularities:
        lines.append(
            f"{r.location.real!r} {r.location.imag!r} {r.order} {1 if r.marked else 0}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_differential(path: str) -> RationalQD:
    """Parse the differential spec file written by save_differential.

    Blank lines and lines starting with '#' are ignored.  Raises QDError with
    the offending line number on malformed input.
    """
    scale = None
    records = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if parts[0] == "scale":
                    if scale is not None:
                        raise ValueError("duplicate scale header")
                    if len(parts) != 3:
                        raise ValueError("scale header needs two numbers")
                    scale = complex(float(parts[1]), float(parts[2]))
                else:
                    if len(parts) != 4:
                        raise ValueError("expected: re im order marked(0/1)")
                    loc = complex(float(parts[0]), float(parts[1]))
                    order = int(parts[2])
                    marked_field = parts[3]
                    if marked_field not in ("0", "1"):
                        raise ValueError("marked flag must be 0 or 1")
                    records.append(SingularityRecord(loc, order, marked_field == "1"))
            except (ValueError, QDError) as exc:
                raise QDError(f"{path}:{lineno}: {exc}") from None
    if scale is None:
        raise QDError(f"{path}: missing `scale re im` header line")
    return RationalQD(scale, tuple(records))
