"""Gaussian random fields on metric graphs with point and line observations."""
from .errors import (
    AmbiguousChain,
    BrokenChain,
    DegenerateEdge,
    DisconnectedGraph,
    GraphFieldError,
    NonConvergence,
    NotPositiveDefinite,
    PointOffGraph,
)
from .fem import HyperParams, assemble_mass, assemble_stiffness, factorize, marginal_variances, precision, sample_field
from .graph import GraphLocation, MetricGraph, build_graph, canonicalize, pte_to_xy, xy_to_pte
from .inference import (
    Dataset,
    FitResult,
    ModelSpec,
    Priors,
    average_speed_estimand,
    fit,
    fit_linear,
    fit_nonlinear,
    log_marginal,
    posterior_sample,
    predict,
)
from .kernels import BACKEND
from .mesh import Mesh, build_mesh, evaluate_basis, evaluate_field, locate
from .observe import LineObs, NoiseModel, PointObs, average_covariate, line_matrix, point_matrix, simulate_observations
from .paths import GraphPath, InterEdgeInterval, midpoint, path_from_polyline, path_from_waypoints, simpson_scheme
from .scoring import coverage, crps_gaussian, rmse

__version__ = "0.1.0"

__all__ = [
    "AmbiguousChain",
    "BrokenChain",
    "DegenerateEdge",
    "DisconnectedGraph",
    "GraphFieldError",
    "NonConvergence",
    "NotPositiveDefinite",
    "PointOffGraph",
    "HyperParams",
    "assemble_mass",
    "assemble_stiffness",
    "factorize",
    "marginal_variances",
    "precision",
    "sample_field",
    "GraphLocation",
    "MetricGraph",
    "build_graph",
    "canonicalize",
    "pte_to_xy",
    "xy_to_pte",
    "Dataset",
    "FitResult",
    "ModelSpec",
    "Priors",
    "average_speed_estimand",
    "fit",
    "fit_linear",
    "fit_nonlinear",
    "log_marginal",
    "posterior_sample",
    "predict",
    "BACKEND",
    "Mesh",
    "build_mesh",
    "evaluate_basis",
    "evaluate_field",
    "locate",
    "LineObs",
    "NoiseModel",
    "PointObs",
    "average_covariate",
    "line_matrix",
    "point_matrix",
    "simulate_observations",
    "GraphPath",
    "InterEdgeInterval",
    "midpoint",
    "path_from_polyline",
    "path_from_waypoints",
    "simpson_scheme",
    "coverage",
    "crps_gaussian",
    "rmse",
    "__version__",
]
