"""Graph container and the sparse-matrix helpers the pooling operator is built on.

Adjacency matrices are held as ``scipy.sparse.csr_array`` with float64
entries, canonical format (sorted indices, no duplicates, no stored zeros).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp


def as_sparse(matrix) -> sp.csr_array:
    """Return a canonical float64 CSR copy of ``matrix`` without explicit zeros."""
    out = sp.csr_array(matrix, dtype=np.float64, copy=True)
    out.sum_duplicates()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def _check_square(matrix) -> None:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected weighted graph with dense node features.

    Use :meth:`from_edges` or :meth:`from_adjacency` rather than the raw
    constructor; both enforce symmetry and strip self-loops.
    """

    adjacency: sp.csr_array
    features: np.ndarray
    label: Optional[int] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    @classmethod
    def from_adjacency(cls, adjacency, features, label: Optional[int] = None,
                       check_symmetric: bool = True) -> "Graph":
        adjacency = as_sparse(adjacency)
        _check_square(adjacency)
        adjacency = strip_diagonal(adjacency)
        if adjacency.nnz and (not np.all(np.isfinite(adjacency.data)) or adjacency.data.min() < 0):
            raise ValueError("adjacency weights must be finite and nonnegative")
        if check_symmetric and abs(adjacency - adjacency.T).sum() > 0:
            raise ValueError("adjacency must be symmetric")
        features = np.array(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        if features.ndim != 2 or features.shape[0] != adjacency.shape[0]:
            raise ValueError(
                f"features must have one row per node ({adjacency.shape[0]}), "
                f"got shape {features.shape}")
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        features.setflags(write=False)
        return cls(adjacency, features, None if label is None else int(label))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable, features=None, weights=None,
                   label: Optional[int] = None, one_indexed: bool = False) -> "Graph":
        """Build a graph from an edge list.

        Each edge is ``(i, j)``; listing both directions is allowed and merged.
        Self-loops are dropped. When an edge is listed twice its weight is
        taken from the last occurrence instead of being summed.
        """
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if one_indexed:
            edges = edges - 1
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError(f"edge endpoint out of range for a graph with {n} nodes")
        if weights is None:
            weights = np.ones(len(edges))
        weights = np.asarray(weights, dtype=np.float64)
        keep = edges[:, 0] != edges[:, 1]
        edges, weights = edges[keep], weights[keep]
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        table = {}
        for a, b, w in zip(lo.tolist(), hi.tolist(), weights.tolist()):
            table[(a, b)] = w
        table = {key: w for key, w in table.items() if w != 0}
        rows = [a for a, _ in table] + [b for _, b in table]
        cols = [b for _, b in table] + [a for a, _ in table]
        vals = list(table.values()) * 2
        adjacency = sp.csr_array((vals, (rows, cols)), shape=(n, n), dtype=np.float64)
        if features is None:
            features = np.ones((n, 1))
        return cls.from_adjacency(adjacency, features, label=label, check_symmetric=False)

    def dense_adjacency(self) -> np.ndarray:
        """Dense copy of the adjacency, cached on first use."""
        if "dense" not in self._cache:
            dense = self.adjacency.toarray()
            dense.setflags(write=False)
            self._cache["dense"] = dense
        return self._cache["dense"]

    def with_features(self, features) -> "Graph":
        return Graph.from_adjacency(self.adjacency, features, self.label, check_symmetric=False)

    def edge_list(self) -> list[tuple[int, int, float]]:
        """Sorted ``(i, j, w)`` triples with ``i < j``."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        return sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))


def degree_vector(adjacency) -> np.ndarray:
    _check_square(adjacency)
    return np.asarray(adjacency.sum(axis=1), dtype=np.float64).ravel()


def _row_normalize(matrix: sp.csr_array) -> sp.csr_array:
    deg = degree_vector(matrix)
    inv = np.zeros_like(deg)
    np.divide(1.0, deg, out=inv, where=deg > 0)
    return as_sparse(sp.diags_array(inv) @ matrix)


def transition_matrix(adjacency) -> sp.csr_array:
    """Random-walk matrix ``D^-1 A``. Rows of isolated nodes are left empty."""
    adjacency = as_sparse(adjacency)
    _check_square(adjacency)
    return _row_normalize(adjacency)


def matrix_power(adjacency, h: int) -> sp.csr_array:
    """Exact sparse power ``A^h`` by repeated right-multiplication."""
    if int(h) != h or h < 1:
        raise ValueError(f"power must be a positive integer, got {h}")
    base = as_sparse(adjacency)
    _check_square(base)
    out = base.copy()
    for _ in range(int(h) - 1):
        out = as_sparse(out @ base)
    return out


def strip_diagonal(matrix) -> sp.csr_array:
    coo = sp.coo_array(matrix)
    keep = coo.row != coo.col
    return as_sparse(sp.coo_array((coo.data[keep], (coo.row[keep], coo.col[keep])),
                                  shape=coo.shape))


def off_diagonal_transition(adjacency, h: int) -> sp.csr_array:
    """Row-normalized ``A^h`` with the h-hop cycles on the diagonal removed."""
    return _row_normalize(strip_diagonal(matrix_power(adjacency, h)))
