"""Empirical-Bayes mixtures of linear dynamic Bayesian networks."""

from dbnmix.errors import (
    BoundsError,
    DimensionError,
    DomainError,
    NoSolutionError,
    ParseError,
    StructureError,
    SupportError,
)
from dbnmix.lsem import (
    ParamSet,
    StructureMask,
    SupportMap,
    TrajectoryDataset,
    build_support_map,
    embed_params,
    extract_params,
    is_dag,
    loss,
    loss_gradient,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "BoundsError",
    "DimensionError",
    "DomainError",
    "NoSolutionError",
    "ParseError",
    "StructureError",
    "SupportError",
    "ParamSet",
    "StructureMask",
    "SupportMap",
    "TrajectoryDataset",
    "build_support_map",
    "embed_params",
    "extract_params",
    "is_dag",
    "loss",
    "loss_gradient",
    "simulate",
]
