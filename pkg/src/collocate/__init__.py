"""Meshfree collocation: moment-based stencils on point clouds."""

from .assembly import BoundarySpec, GlobalOperator, assemble, solve_linear, solve_poisson
from .basis import AbfFamily, RadialWindow
from .cloud import (Neighborhood, PointCloud, build_neighborhoods, check_unisolvency,
                    jittered_grid, random_cloud, regular_grid)
from .engines import (StencilWeights, aom_weights, direct_derivative_weights, gl2p_weights,
                      l2e_solve, l2e_weights, l2p_weights, moment_matrix, moment_residuals)
from .errors import (CollocationError, InvalidCloud, InvalidParams, LinearSolveFailure,
                     NonContractive, OrderOutOfRange, SingularBordered, SingularMoment,
                     UnknownMethod, UnsupportedCombination, UnsupportedOrder, ZeroDenominator)
from .estimator import CollocationOperator
from .indexing import MultiIndexSet, mapping_vector, multi_index_set
from .methods import METHOD_NAMES, MethodConfig, method_weights, preset

__version__ = "0.1.0"

__all__ = [
    "AbfFamily",
    "BoundarySpec",
    "CollocationError",
    "CollocationOperator",
    "GlobalOperator",
    "InvalidCloud",
    "InvalidParams",
    "LinearSolveFailure",
    "METHOD_NAMES",
    "MethodConfig",
    "MultiIndexSet",
    "Neighborhood",
    "NonContractive",
    "OrderOutOfRange",
    "PointCloud",
    "RadialWindow",
    "SingularBordered",
    "SingularMoment",
    "StencilWeights",
    "UnknownMethod",
    "UnsupportedCombination",
    "UnsupportedOrder",
    "ZeroDenominator",
    "aom_weights",
    "assemble",
    "build_neighborhoods",
    "check_unisolvency",
    "direct_derivative_weights",
    "gl2p_weights",
    "jittered_grid",
    "l2e_solve",
    "l2e_weights",
    "l2p_weights",
    "mapping_vector",
    "method_weights",
    "moment_matrix",
    "moment_residuals",
    "multi_index_set",
    "preset",
    "random_cloud",
    "regular_grid",
    "solve_linear",
    "solve_poisson",
]
