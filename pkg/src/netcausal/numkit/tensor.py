"""dtype policy, finiteness checks and graph operators as torch sparse tensors."""

import numpy as np
import scipy.sparse as sp
import torch

from ..exceptions import NumericError
from ..graph import Graph, NormAdjacency, mean_adjacency, normalized_adjacency

DTYPE = torch.float64


def as_tensor(x, requires_grad=False):
    if isinstance(x, torch.Tensor):
        t = x.to(DTYPE)
    else:
        t = torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)
    if requires_grad:
        t = t.detach().clone().requires_grad_(True)
    return t


def check_finite(t, where):
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite values in {where}")
    return t


def sparse_to_torch(m):
    coo = sp.coo_matrix(m)
    idx = torch.as_tensor(np.vstack([coo.row, coo.col]), dtype=torch.int64)
    vals = torch.as_tensor(coo.data, dtype=DTYPE)
    return torch.sparse_coo_tensor(idx, vals, coo.shape, check_invariants=False).coalesce()


def graph_operator(g, kind):
    """Cached torch operator for a graph.

    kind: ``"gcn"`` (D^-1/2 (A+I) D^-1/2), ``"mean_self"`` (mean over N(i)+{i}),
    ``"mean_nbr"`` (mean over N(i), zero rows for isolated nodes).
    """
    key = ("torch_op", kind)
    op = g._cache.get(key)
    if op is None:
        if kind == "gcn":
            m = normalized_adjacency(g).matrix
        elif kind == "mean_self":
            m = mean_adjacency(g, include_self=True)
        elif kind == "mean_nbr":
            m = mean_adjacency(g, include_self=False)
        else:
            raise ValueError(f"unknown operator kind {kind!r}")
        op = sparse_to_torch(m)
        g._cache[key] = op
    return op


def resolve_norm(norm):
    """Accept a Graph, NormAdjacency or torch sparse tensor for the GCN operator."""
    if isinstance(norm, Graph):
        return graph_operator(norm, "gcn")
    if isinstance(norm, NormAdjacency):
        return sparse_to_torch(norm.matrix)
    return norm
