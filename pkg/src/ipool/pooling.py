"""Parameter-free graph pooling by neighborhood information gain.

A node is kept when its features are poorly predicted by a random-walk
weighted average of its 1..k hop neighbors. The kept nodes form a coarse
graph whose edges come from the s-th power of the adjacency.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin

from .graph import (Graph, as_sparse, matrix_power, off_diagonal_transition,
                    strip_diagonal, transition_matrix)

EPS = 1e-12


class PoolingMode(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"


@dataclass(frozen=True)
class PoolingConfig:
    k: int = 1
    s: int = 1
    ratio: float = 0.25
    mode: PoolingMode = PoolingMode.GLOBAL
    weighted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", PoolingMode(self.mode))
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if self.s not in (1, 2):
            raise ValueError(f"s must be 1 or 2, got {self.s}")
        if not 0 < self.ratio <= 1:
            raise ValueError(f"ratio must lie in (0, 1], got {self.ratio}")


@dataclass(frozen=True)
class PoolingResult:
    gains: np.ndarray
    selected: np.ndarray
    coarsening: sp.csr_array
    coarse: Graph


def prediction_operator(adjacency, k: int) -> sp.csr_array:
    """Average of the off-diagonal transition matrices for hops 1..k."""
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    total = off_diagonal_transition(adjacency, 1)
    for h in range(2, int(k) + 1):
        total = total + off_diagonal_transition(adjacency, h)
    return as_sparse(total / k)


def predict(graph: Graph, k: int) -> np.ndarray:
    return prediction_operator(graph.adjacency, k) @ graph.features


def information_gain(graph: Graph, k: int) -> np.ndarray:
    """Row-wise l1 distance between each node's features and their prediction."""
    residual = graph.features - predict(graph, k)
    return np.abs(residual).sum(axis=1)


def normalized_gain(graph: Graph, gains) -> np.ndarray:
    """Gain divided by the transition-weighted average gain of the neighbors.

    A zero denominator gives 0 when the node's own gain is zero and ``inf``
    otherwise, so isolated informative nodes rank first.
    """
    gains = np.asarray(gains, dtype=np.float64)
    if gains.shape != (graph.n,):
        raise ValueError(f"expected {graph.n} gains, got shape {gains.shape}")
    return _normalize(transition_matrix(graph.adjacency) @ gains, gains)


def _normalize(denominator: np.ndarray, gains: np.ndarray) -> np.ndarray:
    out = np.zeros_like(gains)
    ok = denominator > EPS
    out[ok] = gains[ok] / denominator[ok]
    out[~ok & (gains > EPS)] = np.inf
    return out


def n_selected(n: int, ratio: float) -> int:
    # the tolerance keeps ratio * n that lands on an integer from rounding up
    return max(1, math.ceil(ratio * n - 1e-9))


def select_nodes(scores, ratio: float) -> np.ndarray:
    """Indices of the top ``max(1, ceil(ratio * n))`` scores, in ascending order.

    Ties go to the smaller index.
    """
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:n_selected(len(scores), ratio)])


def expand_adjacency(graph: Graph, s: int, weighted: bool = False) -> sp.csr_array:
    """Connect nodes joined by a walk of exactly ``s`` edges."""
    if s not in (1, 2):
        raise ValueError(f"s must be 1 or 2, got {s}")
    if s == 1:
        return graph.adjacency.copy()
    expanded = strip_diagonal(matrix_power(graph.adjacency, s))
    if not weighted:
        expanded.data[:] = 1.0
    return expanded


def coarsening_matrix(selected, n: int) -> sp.csr_array:
    selected = np.asarray(selected, dtype=np.int64)
    m = len(selected)
    return sp.csr_array((np.ones(m), (np.arange(m), selected)), shape=(m, n))


def coarsen(graph: Graph, config: PoolingConfig) -> PoolingResult:
    if graph.n == 0:
        raise ValueError("cannot pool an empty graph")
    gains = information_gain(graph, config.k)
    scores = gains if config.mode is PoolingMode.GLOBAL else normalized_gain(graph, gains)
    selected = select_nodes(scores, config.ratio)
    C = coarsening_matrix(selected, graph.n)
    adjacency = strip_diagonal(C @ expand_adjacency(graph, config.s, config.weighted) @ C.T)
    coarse = Graph.from_adjacency(adjacency, C @ graph.features, graph.label, check_symmetric=False)
    return PoolingResult(gains=gains, selected=selected, coarsening=C, coarse=coarse)


@dataclass
class PoolingOperators:
    """Structure-only matrices for one graph, reusable across feature updates.

    Held dense: graphs fed through the network are small and dense products
    beat sparse ones by a wide margin at that size.
    """

    prediction: np.ndarray
    transition: np.ndarray
    expanded: np.ndarray

    @classmethod
    def build(cls, adjacency, config: PoolingConfig) -> "PoolingOperators":
        graph = Graph.from_adjacency(adjacency, np.zeros((adjacency.shape[0], 1)),
                                     check_symmetric=False)
        return cls(prediction_operator(adjacency, config.k).toarray(),
                   transition_matrix(adjacency).toarray(),
                   expand_adjacency(graph, config.s, config.weighted).toarray())

    def scores(self, features: np.ndarray, mode: PoolingMode) -> np.ndarray:
        gains = np.abs(features - self.prediction @ features).sum(axis=1)
        if PoolingMode(mode) is PoolingMode.LOCAL:
            return _normalize(self.transition @ gains, gains)
        return gains

    def coarse_adjacency(self, selected) -> np.ndarray:
        sub = self.expanded[np.ix_(selected, selected)].copy()
        np.fill_diagonal(sub, 0.0)
        return sub


class IPool(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping a list of graphs to their coarsened graphs.

    Parameters
    ----------
    k : int
        Number of hops averaged in the neighborhood prediction.
    s : int
        Walk length (1 or 2) used to connect the kept nodes.
    ratio : float
        Fraction of nodes kept, in (0, 1].
    mode : {"global", "local"}
        Rank by raw gain or by gain relative to the neighborhood.
    weighted : bool
        Keep walk counts as edge weights instead of binarizing them.
    """

    def __init__(self, k=1, s=1, ratio=0.25, mode="global", weighted=False):
        self.k = k
        self.s = s
        self.ratio = ratio
        self.mode = mode
        self.weighted = weighted

    def _config(self) -> PoolingConfig:
        return PoolingConfig(k=self.k, s=self.s, ratio=self.ratio, mode=self.mode,
                             weighted=self.weighted)

    def fit(self, graphs, y=None):
        self.config_ = self._config()
        return self

    def pool(self, graphs) -> list[PoolingResult]:
        config = self._config()
        return [coarsen(_check_graph(g), config) for g in graphs]

    def transform(self, graphs) -> list[Graph]:
        return [result.coarse for result in self.pool(graphs)]


def _check_graph(graph) -> Graph:
    if not isinstance(graph, Graph):
        raise TypeError(f"expected a Graph, got {type(graph).__name__}")
    if graph.n == 0:
        raise ValueError("cannot pool an empty graph")
    return graph
