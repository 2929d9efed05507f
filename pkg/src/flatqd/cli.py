"""Command-line front end: file parsing, probe orchestration, experiment
artifacts (CSV + JSON summaries, optional SVG sketches), and power-law
fitting.

Exit codes: 0 on success, 1 on any error (bad input, parse failure,
numerical failure), 2 when an experiment runs to completion but its fitted
exponent misses the expected value (an acceptance failure, not an error).
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass
from typing import Callable, NamedTuple

import click
import numpy as np
from scipy.stats import t as _t_dist

from .qdiff import (
    QDError,
    RationalQD,
    SingularityRecord,
    load_differential,
    validate,
)
from .periods import (
    Contour,
    d_euclidean_chart,
    period_detailed,
    period_jacobian,
    spanning_tree_chart,
)
from .metric import ball_scaling_probe, flat_distance
from .clusters import cluster_tree, d_sym, holder_exponent_probe
from .surfaces import (
    build_from_polygons,
    delaunay,
    delaunay_certificate,
    double_nrrp,
    linf_delaunay,
    linf_delaunay_certificate,
    load_nrrp,
    load_polygon_file,
    nrrp_system,
    save_nrrp,
    surface_diameter,
    triangulate,
)
from .qcmap import assemble_qc_map

__all__ = [
    "AcceptanceFailure",
    "ExperimentConfig",
    "Family",
    "PowerLawFit",
    "fit_power_law",
    "load_family",
    "main",
    "run_experiment",
]

OUTPUT_DIR_ENV = "FLATQD_OUTPUT_DIR"
SCHEMA_VERSION = 1


class AcceptanceFailure(Exception):
    """An experiment completed but its result misses the expected value."""


# ============================================================
# power-law fitting
# ============================================================

class PowerLawFit(NamedTuple):
    slope: float
    intercept: float
    ci95: tuple[float, float]
    residuals: tuple[float, ...]


def fit_power_law(pairs, min_points: int = 4) -> PowerLawFit:
    """Least-squares fit of log y against log x.

    The confidence interval comes from the residual variance through the
    t-distribution with n-2 degrees of freedom; residuals are reported in
    log space.  Data must be strictly positive and at least `min_points`
    pairs long."""
    pts = [(float(x), float(y)) for x, y in pairs]
    if len(pts) < int(min_points):
        raise QDError(
            f"power-law fit needs at least {int(min_points)} points, "
            f"got {len(pts)}"
        )
    if any(x <= 0 or y <= 0 for x, y in pts):
        raise QDError("power-law fit needs strictly positive data")
    lx = np.log([x for x, _ in pts])
    ly = np.log([y for _, y in pts])
    n = len(pts)
    A = np.vstack([lx, np.ones(n)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = ly - A @ coef
    s2 = float(resid @ resid) / max(n - 2, 1)
    sxx = float(((lx - lx.mean()) ** 2).sum())
    if sxx <= 0:
        raise QDError("power-law fit needs at least two distinct x values")
    se = math.sqrt(s2 / sxx)
    tq = float(_t_dist.ppf(0.975, max(n - 2, 1)))
    return PowerLawFit(
        slope,
        intercept,
        (slope - tq * se, slope + tq * se),
        tuple(float(v) for v in resid),
    )


# ============================================================
# family files
# ============================================================

class Family(NamedTuple):
    """A one-parameter collision family: the listed configuration is the
    parameter-1 snapshot, and the designated records shrink linearly toward
    their plain centroid as the parameter drops to 0.  The second member of
    each probed pair is the same family at `pair_factor` times the
    parameter."""

    base: RationalQD
    collide: tuple[int, ...]
    pair_factor: float

    @property
    def k(self) -> int:
        """Collision label: total order of the shrinking set (at least 1)."""
        total = sum(self.base.singularities[i].order for i in self.collide)
        return max(1, total)


def load_family(path) -> Family:
    """Parse a family file: the differential format plus a `collide i j ...`
    header naming the shrinking records and an optional `pairfactor x`
    header (default 1.5)."""
    scale = None
    records: list[SingularityRecord] = []
    collide: tuple[int, ...] | None = None
    pair_factor = 1.5
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
                elif parts[0] == "collide":
                    if collide is not None:
                        raise ValueError("duplicate collide header")
                    collide = tuple(int(v) for v in parts[1:])
                    if not collide:
                        raise ValueError("collide header needs indices")
                elif parts[0] == "pairfactor":
                    if len(parts) != 2:
                        raise ValueError("pairfactor header needs one number")
                    pair_factor = float(parts[1])
                else:
                    if len(parts) != 4:
                        raise ValueError("expected: re im order marked(0/1)")
                    loc = complex(float(parts[0]), float(parts[1]))
                    if parts[3] not in ("0", "1"):
                        raise ValueError("marked flag must be 0 or 1")
                    records.append(
                        SingularityRecord(loc, int(parts[2]), parts[3] == "1")
                    )
            except (ValueError, QDError) as exc:
                raise QDError(f"{path}:{lineno}: {exc}") from None
    if scale is None:
        raise QDError(f"{path}: missing `scale re im` header line")
    if collide is None:
        raise QDError(f"{path}: missing `collide i j ...` header line")
    if not (pair_factor > 0 and pair_factor != 1.0):
        raise QDError(f"{path}: pairfactor must be positive and not 1")
    base = RationalQD(scale, tuple(records))
    bad = [i for i in collide if not 0 <= i < len(records)]
    if bad:
        raise QDError(f"{path}: collide indices {bad} out of range")
    if len(set(collide)) < 2 and records[collide[0]].order != 0:
        raise QDError(f"{path}: a single shrinking record must be marked "
                      "(order 0); collisions need at least two records")
    return Family(base, tuple(sorted(set(collide))), pair_factor)


def family_member(fam: Family, eps: float) -> RationalQD:
    """The configuration at parameter eps: colliding records sit at
    centroid + eps * (listed offset), everything else fixed."""
    recs = fam.base.singularities
    c = sum(recs[i].location for i in fam.collide) / len(fam.collide)
    out = []
    for i, r in enumerate(recs):
        if i in fam.collide:
            out.append(SingularityRecord(
                c + eps * (r.location - c), r.order, r.marked))
        else:
            out.append(r)
    return RationalQD(fam.base.scale, tuple(out))


def family_pair(fam: Family) -> Callable[[float], tuple[RationalQD, RationalQD]]:
    def pair(eps: float) -> tuple[RationalQD, RationalQD]:
        return family_member(fam, eps), family_member(fam, fam.pair_factor * eps)
    return pair


# ============================================================
# experiments
# ============================================================

EXPERIMENT_KINDS = ("ball-scaling", "holder", "qcmap-holder")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment run: which probe, on what input, over what schedule.

    The seed does not drive any randomness in the probes themselves (they
    are deterministic); it is recorded in every artifact so downstream
    tooling can treat reruns as replicas."""

    kind: str
    input_path: str
    eps: tuple[float, ...] = ()
    radii: tuple[float, ...] = ()
    delta: float = 0.25
    tol: float = 1e-3
    seed: int = 0
    out_dir: str | None = None
    svg: bool = False
    slope_tolerance: float | None = None

    def validated(self) -> "ExperimentConfig":
        if self.kind not in EXPERIMENT_KINDS:
            raise QDError(
                f"config error: unknown experiment kind {self.kind!r}; "
                f"expected one of {', '.join(EXPERIMENT_KINDS)}"
            )
        if not self.input_path:
            raise QDError("config error: input path is required")
        if self.kind == "ball-scaling":
            if len(self.radii) < 4:
                raise QDError("config error: ball-scaling needs at least "
                              "four radii")
            if any(r2 <= r1 for r1, r2 in zip(self.radii, self.radii[1:])) \
                    or self.radii[0] <= 0:
                raise QDError("config error: radii must be positive and "
                              "strictly increasing")
        else:
            if len(self.eps) < 4:
                raise QDError("config error: the parameter schedule needs "
                              "at least four values")
            if any(e <= 0 for e in self.eps) or any(
                e2 >= e1 for e1, e2 in zip(self.eps, self.eps[1:])
            ):
                raise QDError("config error: the parameter schedule must be "
                              "positive and strictly decreasing")
        if not self.delta > 0:
            raise QDError("config error: delta must be positive")
        return self

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise QDError(f"{path}: invalid JSON ({exc})") from None
        known = {
            "kind", "input", "eps", "radii", "delta", "tol", "seed", "out",
            "svg", "slope_tolerance",
        }
        extra = set(data) - known
        if extra:
            raise QDError(f"{path}: unknown config keys {sorted(extra)}")
        return cls(
            kind=data.get("kind", ""),
            input_path=data.get("input", ""),
            eps=tuple(float(v) for v in data.get("eps", ())),
            radii=tuple(float(v) for v in data.get("radii", ())),
            delta=float(data.get("delta", 0.25)),
            tol=float(data.get("tol", 1e-3)),
            seed=int(data.get("seed", 0)),
            out_dir=data.get("out"),
            svg=bool(data.get("svg", False)),
            slope_tolerance=(
                None if data.get("slope_tolerance") is None
                else float(data["slope_tolerance"])
            ),
        )


def _resolve_out_dir(out_dir: str | None) -> str:
    d = out_dir or os.environ.get(OUTPUT_DIR_ENV) or "."
    os.makedirs(d, exist_ok=True)
    return d


def _write_csv(path, header: str, rows, seed: int) -> None:
    # repr keeps the shortest round-trip form, so identical inputs give
    # byte-identical files
    lines = [f"# seed={seed}", header]
    for row in rows:
        lines.append(",".join(
            "" if v is None else (repr(float(v)) if isinstance(v, float) else str(v))
            for v in row
        ))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _svg_loglog(path, xs, ys, fit: PowerLawFit, xlabel: str, ylabel: str) -> None:
    W, H, pad = 480, 360, 48
    lx, ly = np.log10(xs), np.log10(ys)
    x0, x1 = float(lx.min()), float(lx.max())
    y0, y1 = float(ly.min()), float(ly.max())
    x1 += (x1 - x0 or 1.0) * 0.05
    x0 -= (x1 - x0) * 0.05
    y1 += (y1 - y0 or 1.0) * 0.05
    y0 -= (y1 - y0) * 0.05

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (W - 2 * pad)

    def sy(v):
        return H - pad - (v - y0) / (y1 - y0) * (H - 2 * pad)

    ln10 = math.log(10.0)
    fy0 = (fit.intercept + fit.slope * x0 * ln10) / ln10
    fy1 = (fit.intercept + fit.slope * x1 * ln10) / ln10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{pad}" y1="{H-pad}" x2="{W-pad}" y2="{H-pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H-pad}" stroke="black"/>',
        f'<line x1="{sx(x0):.1f}" y1="{sy(fy0):.1f}" x2="{sx(x1):.1f}" '
        f'y2="{sy(fy1):.1f}" stroke="steelblue"/>',
    ]
    for vx, vy in zip(lx, ly):
        parts.append(f'<circle cx="{sx(vx):.1f}" cy="{sy(vy):.1f}" r="3" '
                     'fill="crimson"/>')
    parts.append(f'<text x="{W/2:.0f}" y="{H-10}" text-anchor="middle" '
                 f'font-size="12">log10 {xlabel}</text>')
    parts.append(f'<text x="14" y="{H/2:.0f}" font-size="12" '
                 f'transform="rotate(-90 14 {H/2:.0f})" '
                 f'text-anchor="middle">log10 {ylabel}</text>')
    parts.append(f'<text x="{W-pad}" y="{pad-8}" text-anchor="end" '
                 f'font-size="12">slope {fit.slope:.4f}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def run_experiment(config: ExperimentConfig) -> dict:
    """Run one experiment, write its artifacts, and return their paths plus
    the summary dict.  The summary never carries a bare point estimate: the
    fitted slope comes with its confidence interval and the expected value
    with the acceptance tolerance."""
    config = config.validated()
    out = _resolve_out_dir(config.out_dir)
    stem = os.path.join(out, config.kind)
    csv_path, json_path = stem + ".csv", stem + ".json"
    svg_path = stem + ".svg" if config.svg else None

    if config.kind == "ball-scaling":
        q = load_differential(config.input_path)
        probe = ball_scaling_probe(q, config.radii, rel_tol=config.tol)
        fit = fit_power_law(zip(probe["radii"], probe["distances"]))
        expected = float(probe["predicted_slope"])
        tol = config.slope_tolerance if config.slope_tolerance is not None else 0.05
        rows = [
            (r, d, s)
            for r, d, s in zip(
                probe["radii"], probe["distances"],
                [None] + list(probe["running_slopes"]),
            )
        ]
        _write_csv(csv_path, "r,distance,slope_running", rows, config.seed)
        xs, ys = probe["radii"], probe["distances"]
        xlabel, ylabel = "radius", "distance"
        detail = {
            "prefactor": {
                "value": probe["prefactor"],
                "expected": probe["predicted_prefactor"],
            },
        }
    elif config.kind == "holder":
        fam = load_family(config.input_path)
        probe = holder_exponent_probe(family_pair(fam), fam.k, config.eps)
        fit = fit_power_law(zip(probe["d_sym"], probe["d_chart"]))
        expected = float(probe["predicted_slope"])
        tol = config.slope_tolerance if config.slope_tolerance is not None else 0.05
        rows = list(zip(config.eps, probe["d_sym"], probe["d_chart"]))
        _write_csv(csv_path, "eps,d_sym,d_chart", rows, config.seed)
        xs, ys = probe["d_sym"], probe["d_chart"]
        xlabel, ylabel = "d_sym", "d_chart"
        detail = {"k": fam.k}
    else:  # qcmap-holder
        fam = load_family(config.input_path)
        xs, ys = [], []
        for eps in config.eps:
            # a fixed-ratio pair is scale-equivalent near collision, so the
            # assembled bound between its members never decays; compare
            # moduli-convergent members instead
            qa = family_member(fam, eps)
            qb = family_member(fam, eps + eps**3)
            rep = assemble_qc_map(qa, qb, delta=config.delta)
            xs.append(d_euclidean_chart(qa, qb))
            ys.append(rep.teich_bound)
        fit = fit_power_law(zip(xs, ys))
        expected = 2.0 / (2.0 + fam.k)
        tol = config.slope_tolerance if config.slope_tolerance is not None else 0.1
        rows = list(zip(config.eps, xs, ys))
        _write_csv(csv_path, "eps,d_chart,teich_bound", rows, config.seed)
        xlabel, ylabel = "d_chart", "teich_bound"
        detail = {"k": fam.k, "delta": config.delta}

    ok = abs(fit.slope - expected) <= tol
    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": config.kind,
        "input": config.input_path,
        "seed": config.seed,
        "n_points": len(xs),
        "slope": {"value": fit.slope, "ci95": list(fit.ci95)},
        "expected_slope": {"value": expected, "tolerance": tol},
        "max_abs_log_residual": max(abs(v) for v in fit.residuals),
        "pass": bool(ok),
        **detail,
    }
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    artifacts = {"csv": csv_path, "json": json_path, "summary": summary}
    if svg_path:
        _svg_loglog(svg_path, np.asarray(xs), np.asarray(ys), fit,
                    xlabel, ylabel)
        artifacts["svg"] = svg_path
    return artifacts


# ============================================================
# small shared helpers for commands
# ============================================================

def _parse_complex(text: str) -> complex:
    try:
        return complex(text.replace(" ", ""))
    except ValueError:
        raise QDError(f"cannot parse {text!r} as a complex number "
                      "(use forms like 1.5, -2j, 0.3+0.1j)") from None


def _parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise QDError(f"cannot parse {text!r} as a comma-separated list "
                      "of numbers") from None


def load_contour(path) -> Contour:
    """Parse a contour file: one `re im` vertex per line in order, plus an
    optional `endpoints 0|1 0|1` header saying whether the first and last
    vertices sit on singularities (default: both do)."""
    verts: list[complex] = []
    endpoints = (True, True)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if parts[0] == "endpoints":
                    if len(parts) != 3 or {parts[1], parts[2]} - {"0", "1"}:
                        raise ValueError("endpoints header needs two 0/1 flags")
                    endpoints = (parts[1] == "1", parts[2] == "1")
                else:
                    if len(parts) != 2:
                        raise ValueError("expected: re im")
                    verts.append(complex(float(parts[0]), float(parts[1])))
            except (ValueError, QDError) as exc:
                raise QDError(f"{path}:{lineno}: {exc}") from None
    if len(verts) < 2:
        raise QDError(f"{path}: a contour needs at least two vertices")
    return Contour(tuple(verts), endpoint_singular=endpoints)


def _sniff_kind(path) -> str:
    """'differential' if the first content line is a scale header,
    'polygons' if it opens a polygon gluing table."""
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head = line.split()[0]
            if head == "scale":
                return "differential"
            if head in ("polygon", "glue"):
                return "polygons"
            raise QDError(f"{path}: unrecognized first directive {head!r}")
    raise QDError(f"{path}: empty input file")


def _echo_json(data) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


def _surface_svg(path, tri) -> None:
    """Exploded per-face sketch: each triangle drawn in its own chart,
    packed on a grid."""
    faces = tri.faces()
    cols = max(1, math.ceil(math.sqrt(len(faces))))
    cell = 90.0
    scale = 0.0
    tris = []
    for (a, b, c) in faces:
        p = [0j, complex(tri.vec[a]), complex(tri.vec[a]) + complex(tri.vec[b])]
        w = max(abs(u - v) for u in p for v in p)
        scale = max(scale, w)
        tris.append(p)
    k = (cell * 0.8) / max(scale, 1e-300)
    W = int(cell * cols) + 20
    H = int(cell * math.ceil(len(tris) / cols)) + 20
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
             f'<rect width="{W}" height="{H}" fill="white"/>']
    for i, p in enumerate(tris):
        ox = 10 + cell * (i % cols) + cell / 2
        oy = 10 + cell * (i // cols) + cell / 2
        ctr = sum(p) / 3
        pts = " ".join(
            f"{ox + (v - ctr).real * k:.1f},{oy - (v - ctr).imag * k:.1f}"
            for v in p
        )
        parts.append(f'<polygon points="{pts}" fill="none" stroke="black"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


# ============================================================
# command tree
# ============================================================

@click.group()
@click.option("--tol", type=float, default=None,
              help="Default tolerance for subcommands that take one.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed recorded in experiment artifacts.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help=f"Default output directory (else ${OUTPUT_DIR_ENV} or '.').")
@click.pass_context
def cli(ctx, tol, seed, out_dir):
    """Flat geometry of quadratic differentials: periods, metrics, clusters,
    Delaunay surfaces, and quasiconformal comparison maps."""
    ctx.obj = {"tol": tol, "seed": seed, "out": out_dir}


def _tol(ctx, local, fallback):
    if local is not None:
        return local
    if ctx.obj and ctx.obj.get("tol") is not None:
        return ctx.obj["tol"]
    return fallback


# ---------------- qdiff ----------------

@cli.group("qdiff")
def qdiff_group():
    """Differential spec files."""


@qdiff_group.command("validate")
@click.argument("qfile", type=click.Path(exists=True))
def qdiff_validate(qfile):
    """Parse and validate a differential file, print its summary."""
    _echo_json(validate(load_differential(qfile)))


# ---------------- periods ----------------

@cli.group("periods")
def periods_group():
    """Period integrals and period Jacobians."""


@periods_group.command("eval")
@click.argument("qfile", type=click.Path(exists=True))
@click.argument("contourfile", type=click.Path(exists=True))
@click.option("--tol", type=float, default=None, help="Quadrature tolerance.")
@click.pass_context
def periods_eval(ctx, qfile, contourfile, tol):
    """Integrate the square root of the differential along a contour."""
    q = load_differential(qfile)
    contour = load_contour(contourfile)
    res = period_detailed(q, contour, tol=_tol(ctx, tol, 1e-10))
    _echo_json({
        "value": [res.value.real, res.value.imag],
        "abs_error_estimate": res.error,
    })


@periods_group.command("jacobian")
@click.argument("qfile", type=click.Path(exists=True))
@click.option("--chart", default="auto", show_default=True,
              help="Chart choice; only the spanning-tree chart is built.")
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Write the matrix as CSV instead of printing it.")
@click.option("--tol", type=float, default=None, help="Quadrature tolerance.")
@click.pass_context
def periods_jacobian(ctx, qfile, chart, csv_path, tol):
    """Jacobian of the chart periods in the singularity positions."""
    if chart != "auto":
        raise QDError(f"unknown chart {chart!r}; only 'auto' is available")
    q = load_differential(qfile)
    t = _tol(ctx, tol, 1e-11)
    J = period_jacobian(q, spanning_tree_chart(q, tol=max(t, 1e-12)), tol=t)
    lines = ["i,j,re,im"]
    for i in range(J.shape[0]):
        for j in range(J.shape[1]):
            lines.append(f"{i},{j},{float(J[i, j].real)!r},"
                         f"{float(J[i, j].imag)!r}")
    text = "\n".join(lines) + "\n"
    if csv_path:
        with open(csv_path, "w") as fh:
            fh.write(text)
        click.echo(f"wrote {csv_path} ({J.shape[0]}x{J.shape[1]})")
    else:
        click.echo(text, nl=False)


# ---------------- metric ----------------

@cli.group("metric")
def metric_group():
    """Flat-metric distances and ball growth."""


@metric_group.command("dist")
@click.argument("qfile", type=click.Path(exists=True))
@click.argument("a")
@click.argument("b")
@click.option("--tol", type=float, default=None, help="Distance tolerance.")
@click.pass_context
def metric_dist(ctx, qfile, a, b, tol):
    """Flat distance between two points, given as complex literals."""
    q = load_differential(qfile)
    d, err = flat_distance(q, _parse_complex(a), _parse_complex(b),
                           tol=_tol(ctx, tol, 1e-3))
    _echo_json({"distance": d, "abs_error_estimate": err})


@metric_group.command("probe-balls")
@click.argument("familyfile", type=click.Path(exists=True))
@click.option("--radii", required=True,
              help="Comma-separated increasing radii, e.g. 0.01,0.02,0.04,0.08.")
@click.option("--center", default=None,
              help="Ball center (complex literal; default: the collision "
                   "centroid for a family file, else 0).")
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Write r,distance,slope_running to this file.")
@click.option("--tol", type=float, default=None, help="Distance tolerance.")
@click.pass_context
def metric_probe_balls(ctx, familyfile, radii, center, csv_path, tol):
    """Growth exponent of small-ball boundary distance around a center."""
    kind = _sniff_kind(familyfile)
    if kind != "differential":
        raise QDError("probe-balls expects a differential or family file")
    try:
        fam = load_family(familyfile)
        q = fam.base
        ctr = sum(q.singularities[i].location for i in fam.collide) / len(fam.collide)
    except QDError:
        q = load_differential(familyfile)
        ctr = 0j
    if center is not None:
        ctr = _parse_complex(center)
    probe = ball_scaling_probe(q, _parse_float_list(radii), center=ctr,
                               rel_tol=_tol(ctx, tol, 1e-3))
    rows = list(zip(probe["radii"], probe["distances"],
                    [None] + list(probe["running_slopes"])))
    if csv_path:
        _write_csv(csv_path, "r,distance,slope_running", rows,
                   ctx.obj["seed"] if ctx.obj else 0)
        click.echo(f"wrote {csv_path}")
    else:
        click.echo("r,distance,slope_running")
        for r, d, s in rows:
            click.echo(f"{float(r)!r},{float(d)!r},"
                       f"{'' if s is None else repr(float(s))}")
    _echo_json({
        "slope": probe["slope"],
        "predicted_slope": probe["predicted_slope"],
        "prefactor": probe["prefactor"],
        "predicted_prefactor": probe["predicted_prefactor"],
    })


# ---------------- clusters ----------------

@cli.group("clusters")
def clusters_group():
    """Cluster hierarchies and collision exponents."""


@clusters_group.command("tree")
@click.argument("qfile", type=click.Path(exists=True))
@click.option("--delta", type=float, default=0.1, show_default=True)
@click.option("--metric", "metric_name", type=click.Choice(["q", "c"]),
              default="q", show_default=True,
              help="Cluster in the flat metric (q) or the plane metric (c).")
@click.option("--json", "json_path", type=click.Path(), default=None,
              help="Write the tree as JSON instead of printing it.")
@click.option("--tol", type=float, default=None, help="Distance tolerance.")
@click.pass_context
def clusters_tree_cmd(ctx, qfile, delta, metric_name, json_path, tol):
    """Recursive cluster hierarchy of the finite singularities."""
    q = load_differential(qfile)
    tree = cluster_tree(q, delta, metric=metric_name,
                        tol=_tol(ctx, tol, 1e-3)).as_dict()
    if json_path:
        with open(json_path, "w") as fh:
            json.dump(tree, fh, indent=2, sort_keys=True)
            fh.write("\n")
        click.echo(f"wrote {json_path}")
    else:
        _echo_json(tree)


@clusters_group.command("dsym")
@click.argument("q1", type=click.Path(exists=True))
@click.argument("q2", type=click.Path(exists=True))
def clusters_dsym(q1, q2):
    """Symmetric configuration distance between two differentials."""
    _echo_json({"d_sym": d_sym(load_differential(q1), load_differential(q2))})


@clusters_group.command("holder")
@click.argument("familyfile", type=click.Path(exists=True))
@click.option("--eps", required=True,
              help="Comma-separated strictly decreasing parameters.")
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Write eps,d_sym,d_chart to this file.")
@click.pass_context
def clusters_holder(ctx, familyfile, eps, csv_path):
    """Fitted distance-comparison exponent along a collision family."""
    fam = load_family(familyfile)
    eps_values = _parse_float_list(eps)
    probe = holder_exponent_probe(family_pair(fam), fam.k, eps_values)
    if csv_path:
        rows = list(zip(eps_values, probe["d_sym"], probe["d_chart"]))
        _write_csv(csv_path, "eps,d_sym,d_chart", rows,
                   ctx.obj["seed"] if ctx.obj else 0)
        click.echo(f"wrote {csv_path}")
    _echo_json({
        "k": probe["k"],
        "slope": probe["slope"],
        "ci95": list(probe["ci95"]),
        "predicted_slope": probe["predicted_slope"],
    })


# ---------------- surfaces ----------------

@cli.group("surfaces")
def surfaces_group():
    """Polygon gluings, Delaunay retriangulation, right polygons."""


@surfaces_group.command("delaunay")
@click.argument("specfile", type=click.Path(exists=True))
@click.option("--linf", is_flag=True,
              help="Use the max-norm square criterion instead of circumdisks.")
@click.option("--svg", "svg_path", type=click.Path(), default=None,
              help="Write an exploded per-face sketch.")
@click.option("--tol", type=float, default=None, help="Flip predicate tolerance.")
@click.pass_context
def surfaces_delaunay(ctx, specfile, linf, svg_path, tol):
    """Flip a glued surface to its Delaunay triangulation and certify it."""
    polys, glues = load_polygon_file(specfile)
    surf = build_from_polygons(polys, glues)
    t = _tol(ctx, tol, 1e-12)
    tri = linf_delaunay(triangulate(surf), tol=t) if linf \
        else delaunay(triangulate(surf), tol=t)
    cert = linf_delaunay_certificate(tri) if linf else delaunay_certificate(tri)
    out = {
        "faces": len(tri.faces()),
        "flips": tri.flips,
        "certificate_ok": cert["ok"],
        "violations": len(cert["violations"]),
        "diameter": surface_diameter(tri),
        "genus": (2 - tri.euler_characteristic) // 2,
    }
    if svg_path:
        _surface_svg(svg_path, tri)
        out["svg"] = svg_path
    _echo_json(out)


@surfaces_group.command("nrrp")
@click.argument("qfile", type=click.Path(exists=True))
@click.option("--delta", type=float, default=0.1, show_default=True)
@click.option("--out", "out_prefix", type=click.Path(), default=None,
              help="Write each polygon to PREFIX-<i>.json.")
def surfaces_nrrp(qfile, delta, out_prefix):
    """Right polygons enclosing each cluster of a sphere differential."""
    q = load_differential(qfile)
    polys = nrrp_system(q, delta)
    summary = []
    for i, p in enumerate(polys):
        entry = {
            "sides": [[lab, ln] for lab, ln in p.sides],
            "interior_orders": [s.order for s in p.interior],
            "radius": p.radius,
        }
        if out_prefix:
            path = f"{out_prefix}-{i}.json"
            save_nrrp(p, path)
            entry["file"] = path
        summary.append(entry)
    _echo_json({"count": len(polys), "polygons": summary})


@surfaces_group.command("double")
@click.argument("nrrpfile", type=click.Path(exists=True))
@click.option("--tol", type=float, default=None, help="Side-length tolerance.")
@click.pass_context
def surfaces_double(ctx, nrrpfile, tol):
    """Solve for the doubled differential realizing a right polygon."""
    spec = load_nrrp(nrrpfile)
    res = double_nrrp(spec, tol=_tol(ctx, tol, 1e-10))
    _echo_json({
        "converged": res.converged,
        "iterations": res.iterations,
        "residual_norm": res.residual_norm,
        "corners": list(res.corners),
        "interior": [[w.real, w.imag] for w in res.interior],
        "side_lengths": list(res.side_lengths),
    })


# ---------------- qcmap ----------------

@cli.group("qcmap")
def qcmap_group():
    """Assembled quasiconformal comparison of two flat structures."""


@qcmap_group.command("assemble")
@click.argument("spec1", type=click.Path(exists=True))
@click.argument("spec2", type=click.Path(exists=True))
@click.option("--delta", type=float, default=0.1, show_default=True,
              help="Cluster scale for sphere differentials.")
@click.option("--r", "r_value", type=float, default=2.0, show_default=True,
              help="Extension parameter.")
@click.option("--sweep-r", default=None,
              help="Comma-separated r values; keeps the best total bound.")
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="Write the full region report as JSON.")
def qcmap_assemble(spec1, spec2, delta, r_value, sweep_r, report_path):
    """Build the region-by-region dilatation report for two inputs."""
    kinds = (_sniff_kind(spec1), _sniff_kind(spec2))
    if kinds[0] != kinds[1]:
        raise QDError(f"inputs disagree: {kinds[0]} vs {kinds[1]}")
    if kinds[0] == "differential":
        a, b = load_differential(spec1), load_differential(spec2)
    else:
        p1, g1 = load_polygon_file(spec1)
        p2, g2 = load_polygon_file(spec2)
        a, b = build_from_polygons(p1, g1), build_from_polygons(p2, g2)
    rs = _parse_float_list(sweep_r) if sweep_r else (r_value,)
    if not rs:
        raise QDError("empty r sweep")
    best = None
    for rv in rs:
        rep = assemble_qc_map(a, b, delta=delta, r=rv)
        if best is None or rep.max_dilatation < best.max_dilatation:
            best = rep
    data = best.to_json_dict()
    if report_path:
        with open(report_path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        click.echo(f"wrote {report_path}")
    _echo_json({
        "K_total": data["K_total"],
        "teich_bound": data["teich_bound"],
        "regions": len(data["regions"]),
        "r": data["r"],
    })


# ---------------- experiment ----------------

@cli.group("experiment")
def experiment_group():
    """Orchestrated probes with CSV + JSON artifacts."""


@experiment_group.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="JSON config file (overrides inline flags).")
@click.option("--kind", type=click.Choice(EXPERIMENT_KINDS), default=None)
@click.option("--input", "input_path", type=click.Path(exists=True), default=None)
@click.option("--eps", default=None,
              help="Comma-separated strictly decreasing parameters.")
@click.option("--radii", default=None,
              help="Comma-separated strictly increasing radii.")
@click.option("--delta", type=float, default=0.25, show_default=True)
@click.option("--svg", is_flag=True, help="Also write a log-log sketch.")
@click.option("--slope-tol", type=float, default=None,
              help="Acceptance half-width around the expected slope.")
@click.option("--tol", type=float, default=None)
@click.pass_context
def experiment_run(ctx, config_path, kind, input_path, eps, radii, delta,
                   svg, slope_tol, tol):
    """Run an experiment and write artifacts; exits 2 if the fitted slope
    misses the expected exponent."""
    if config_path:
        config = ExperimentConfig.from_json_file(config_path)
        if config.out_dir is None and ctx.obj.get("out"):
            config = dataclasses.replace(config, out_dir=ctx.obj["out"])
    else:
        if not kind or not input_path:
            raise QDError("either --config or both --kind and --input "
                          "are required")
        config = ExperimentConfig(
            kind=kind,
            input_path=input_path,
            eps=_parse_float_list(eps) if eps else (),
            radii=_parse_float_list(radii) if radii else (),
            delta=delta,
            tol=_tol(ctx, tol, 1e-3),
            seed=ctx.obj["seed"] if ctx.obj else 0,
            out_dir=ctx.obj.get("out") if ctx.obj else None,
            svg=svg,
            slope_tolerance=slope_tol,
        )
    artifacts = run_experiment(config)
    s = artifacts["summary"]
    click.echo(f"wrote {artifacts['csv']}")
    click.echo(f"wrote {artifacts['json']}")
    if "svg" in artifacts:
        click.echo(f"wrote {artifacts['svg']}")
    verdict = "PASS" if s["pass"] else "FAIL"
    click.echo(
        f"{verdict}: slope {s['slope']['value']:.4f} "
        f"(ci95 {s['slope']['ci95'][0]:.4f}..{s['slope']['ci95'][1]:.4f}) "
        f"vs expected {s['expected_slope']['value']:.4f} "
        f"+- {s['expected_slope']['tolerance']:.4f}"
    )
    if not s["pass"]:
        raise AcceptanceFailure(
            f"slope {s['slope']['value']:.4f} outside "
            f"{s['expected_slope']['value']:.4f} "
            f"+- {s['expected_slope']['tolerance']:.4f}"
        )


# ============================================================
# entry point
# ============================================================

def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False, prog_name="flatqd")
    except AcceptanceFailure as exc:
        click.echo(f"acceptance failure: {exc}", err=True)
        return 2
    except click.exceptions.Exit as exc:        # --help and friends
        return int(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (QDError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
