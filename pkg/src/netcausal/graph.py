"""Undirected graphs, kNN construction and neighbourhood queries.

Graphs are stored in CSR form (``indptr``/``indices``) with sorted, duplicate-free,
symmetric adjacency lists and no self-loops. Every other module consumes this type.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .exceptions import InvalidInputError, ParseError

logger = logging.getLogger(__name__)

_KNN_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable sparse undirected graph.

    Build instances with :meth:`from_edges`, :func:`build_knn_graph` or
    :func:`load_edge_list`; the constructor trusts its arguments.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_edges(cls, n, edges):
        """Canonicalise an iterable of ``(i, j)`` pairs into a symmetric graph."""
        n = int(n)
        if n < 1:
            raise InvalidInputError(f"graph needs at least one node, got n={n}")
        arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise InvalidInputError(f"edge endpoint out of range for n={n}")
        if np.any(arr[:, 0] == arr[:, 1]):
            raise InvalidInputError("self-loops are not allowed")
        rows = np.concatenate([arr[:, 0], arr[:, 1]])
        cols = np.concatenate([arr[:, 1], arr[:, 0]])
        m = sp.coo_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n)).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(n, m.indptr.astype(np.int64), m.indices.astype(np.int64))

    @classmethod
    def empty(cls, n):
        return cls.from_edges(n, [])

    @cached_property
    def degrees(self):
        return np.diff(self.indptr)

    @property
    def d_max(self):
        return int(self.degrees.max()) if self.n else 0

    @property
    def n_edges(self):
        return int(self.indices.size // 2)

    def neighbors(self, i):
        self._check_node(i)
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def edges(self):
        """Undirected edge list with ``i < j``, lexicographically sorted."""
        rows = np.repeat(np.arange(self.n), self.degrees)
        keep = rows < self.indices
        return np.column_stack([rows[keep], self.indices[keep]])

    def adjacency(self):
        """Binary adjacency as a scipy CSR matrix (float64)."""
        data = np.ones(self.indices.size)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def _check_node(self, i):
        if not 0 <= int(i) < self.n:
            raise InvalidInputError(f"node {i} out of range [0, {self.n})")

    def __repr__(self):
        return f"Graph(n={self.n}, edges={self.n_edges}, d_max={self.d_max})"


@dataclass(frozen=True, eq=False)
class NormAdjacency:
    """Symmetric-normalised adjacency ``D^-1/2 (A + I) D^-1/2`` in CSR form."""

    matrix: sp.csr_matrix

    def to_dense(self):
        return self.matrix.toarray()


def build_knn_graph(X, k, metric="cosine"):
    """Symmetrised k-nearest-neighbour graph over the rows of ``X``.

    Each row links to its ``k`` closest other rows; ties go to the lower index.
    The edge set is the union of both directions, so every degree is >= k.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidInputError("X must be a 2-D array")
    n = X.shape[0]
    if n < 2:
        raise InvalidInputError(f"kNN graph needs n >= 2 rows, got {n}")
    k = int(k)
    if not 1 <= k < n:
        raise InvalidInputError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("X contains non-finite values")
    if metric == "cosine":
        zero = np.flatnonzero(np.linalg.norm(X, axis=1) == 0)
        if zero.size:
            raise InvalidInputError(f"cosine metric undefined for all-zero row {zero[0]}")
    elif metric != "euclidean":
        raise InvalidInputError(f"unknown metric {metric!r}; use 'cosine' or 'euclidean'")

    src, dst = [], []
    for start in range(0, n, _KNN_CHUNK):
        stop = min(start + _KNN_CHUNK, n)
        dist = cdist(X[start:stop], X, metric=metric)
        dist[np.arange(stop - start), np.arange(start, stop)] = np.inf
        # stable sort keeps lower column index first among equal distances
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        src.append(np.repeat(np.arange(start, stop), k))
        dst.append(order.ravel())
    edges = np.column_stack([np.concatenate(src), np.concatenate(dst)])
    return Graph.from_edges(n, edges)


def two_hop(g, i):
    """Nodes at distance exactly two from ``i``."""
    g._check_node(i)
    i = int(i)
    cached = g._cache.get(("two_hop", i))
    if cached is not None:
        return set(cached)
    first = g.neighbors(i)
    reach = set()
    for j in first:
        reach.update(g.neighbors(j).tolist())
    reach.difference_update(first.tolist())
    reach.discard(i)
    g._cache[("two_hop", i)] = frozenset(reach)
    return reach


def two_hop_matrix(g):
    """Binary CSR matrix whose row ``i`` marks :func:`two_hop` (i)."""
    a = g.adjacency()
    reach = (a @ a).tocsr()
    reach.data[:] = 1.0
    near = a + sp.identity(g.n, format="csr")
    near.data[:] = 1.0
    two = reach - reach.multiply(near)
    two.eliminate_zeros()
    two.data[:] = 1.0
    return two.tocsr()


def normalized_adjacency(g):
    a_hat = g.adjacency() + sp.identity(g.n, format="csr")
    inv_sqrt = 1.0 / np.sqrt(g.degrees + 1.0)
    d = sp.diags(inv_sqrt)
    m = (d @ a_hat @ d).tocsr()
    m.sort_indices()
    return NormAdjacency(m)


def mean_adjacency(g, include_self):
    """Row-stochastic averaging operator over ``N(i)`` (or ``N(i) + {i}``).

    Rows of isolated nodes are all-zero when ``include_self`` is false.
    """
    a = g.adjacency()
    if include_self:
        a = a + sp.identity(g.n, format="csr")
    counts = np.asarray(a.sum(axis=1)).ravel()
    scale = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    m = (sp.diags(scale) @ a).tocsr()
    m.sort_indices()
    return m


def parse_edge_list(lines, n):
    """Parse ``"i j"`` lines. Returns ``(Graph, n_self_loops_dropped)``."""
    edges = []
    loops = 0
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 2:
            raise ParseError(f"expected two integers, got {text!r}", line=lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"non-integer node id in {text!r}", line=lineno) from None
        for v in (i, j):
            if not 0 <= v < n:
                raise ParseError(f"node id {v} out of range [0, {n})", line=lineno)
        if i == j:
            loops += 1
            continue
        edges.append((i, j))
    return Graph.from_edges(n, edges), loops


def load_edge_list(path, n):
    with open(path, encoding="utf-8") as fh:
        g, loops = parse_edge_list(fh, n)
    if loops:
        logger.warning("%s: dropped %d self-loop(s)", path, loops)
    return g


def save_edge_list(g, path):
    lines = [f"{i} {j}\n" for i, j in g.edges()]
    Path(path).write_text("".join(lines), encoding="utf-8")
