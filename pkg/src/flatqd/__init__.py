"""Flat geometry of quadratic differentials.

Core objects are rational quadratic differentials q = λ·Π(z − z_j)^{e_j} dz²
on the sphere and polynomial collision models on ℂ, together with the
machinery built on them: branch-tracked periods and period charts, the
singular flat metric, δ-cluster trees, polygon-glued half-translation
surfaces with (L∞-)Delaunay triangulations, right-polygon neighborhoods and
their doubles, and quasiconformal extension with dilatation reports.
"""

from .qdiff import (
    SingularityRecord,
    RationalQD,
    ClusterDifferential,
    QDError,
    validate,
    evaluate,
    scale_singularities,
    mobius_normalize,
    double_cover_pullback,
    translate,
    load_differential,
    save_differential,
    INF,
)
from .periods import (
    Contour,
    PeriodChart,
    PeriodResult,
    period,
    period_detailed,
    flat_length,
    contour_flat_length,
    spanning_tree_chart,
    reevaluate_chart,
    period_jacobian,
    d_euclidean_chart,
    solve_periods,
)
from .metric import (
    flat_distance,
    pairwise_flat_distances,
    singular_diameter,
    ball_scaling_probe,
)
from .clusters import (
    ClusterNode,
    delta_clusters,
    cluster_center,
    cluster_tree,
    d_sym,
    ClusterProjection,
    project_to_cluster_differential,
    projection_defect,
    holder_exponent_probe,
)
from .surfaces import (
    parse_polygon_spec,
    load_polygon_file,
    HalfTranslationSurface,
    build_from_polygons,
    Triangulation,
    triangulate,
    delaunay,
    linf_delaunay,
    delaunay_certificate,
    linf_delaunay_certificate,
    surface_diameter,
    NRRP,
    RightPolygonSpec,
    save_nrrp,
    load_nrrp,
    right_polygon,
    nrrp_system,
    DoubleResult,
    double_nrrp,
)
from .qcmap import (
    BoundaryMap,
    BAExtension,
    DilatationField,
    DilatationReport,
    Region,
    SamplePlan,
    ShearMap,
    UniformizedDisk,
    assemble_qc_map,
    beurling_ahlfors,
    boundary_correspondence,
    default_sample_plan,
    dilatation_field,
    marked_point_shear,
    pl_map_dilatation,
    quasisymmetry_constant,
    uniformized_double,
)
from .cli import (
    AcceptanceFailure,
    ExperimentConfig,
    Family,
    PowerLawFit,
    fit_power_law,
    load_family,
    run_experiment,
    main,
)

__all__ = [
    # qdiff
    "SingularityRecord",
    "RationalQD",
    "ClusterDifferential",
    "QDError",
    "validate",
    "evaluate",
    "scale_singularities",
    "mobius_normalize",
    "double_cover_pullback",
    "translate",
    "load_differential",
    "save_differential",
    "INF",
    # periods
    "Contour",
    "PeriodChart",
    "PeriodResult",
    "period",
    "period_detailed",
    "flat_length",
    "contour_flat_length",
    "spanning_tree_chart",
    "reevaluate_chart",
    "period_jacobian",
    "d_euclidean_chart",
    "solve_periods",
    # metric
    "flat_distance",
    "pairwise_flat_distances",
    "singular_diameter",
    "ball_scaling_probe",
    # clusters
    "ClusterNode",
    "delta_clusters",
    "cluster_center",
    "cluster_tree",
    "d_sym",
    "ClusterProjection",
    "project_to_cluster_differential",
    "projection_defect",
    "holder_exponent_probe",
    # surfaces
    "parse_polygon_spec",
    "load_polygon_file",
    "HalfTranslationSurface",
    "build_from_polygons",
    "Triangulation",
    "triangulate",
    "delaunay",
    "linf_delaunay",
    "delaunay_certificate",
    "linf_delaunay_certificate",
    "surface_diameter",
    "NRRP",
    "RightPolygonSpec",
    "save_nrrp",
    "load_nrrp",
    "right_polygon",
    "nrrp_system",
    "DoubleResult",
    "double_nrrp",
    # qcmap
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
    # cli
    "AcceptanceFailure",
    "ExperimentConfig",
    "Family",
    "PowerLawFit",
    "fit_power_law",
    "load_family",
    "run_experiment",
    "main",
]

__version__ = "0.1.0"
