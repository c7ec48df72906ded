"""Causal-effect estimation and policy learning under network interference."""

from .exceptions import (
    ConfigError,
    ConstraintInfeasibleError,
    InvalidInputError,
    NetCausalError,
    NumericError,
    ParseError,
    TrainingError,
)
from .graph import Graph, build_knn_graph, load_edge_list, normalized_adjacency, two_hop

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConstraintInfeasibleError", "Graph", "InvalidInputError", "NetCausalError",
    "NumericError", "ParseError", "TrainingError", "build_knn_graph", "load_edge_list",
    "normalized_adjacency", "two_hop",
]
