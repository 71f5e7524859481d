"""Reader for the TU graph-classification benchmark layout.

A dataset ``NAME`` lives in a directory holding comma-separated text files::

    NAME_A.txt                 one "row, col" edge per line, 1-indexed global node ids
    NAME_graph_indicator.txt   graph id (1-indexed) of node i on line i
    NAME_graph_labels.txt      class label of graph i on line i
    NAME_node_labels.txt       optional, categorical label of node i
    NAME_node_attributes.txt   optional, comma-separated real attributes of node i
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import Graph


class FeatureKind(str, Enum):
    ONE_HOT_NODE_LABELS = "one-hot-node-labels"
    CONSTANT_ONE = "constant-one"
    CONTINUOUS_ATTRIBUTES = "continuous-attributes"


class DatasetFormatError(ValueError):
    """Malformed dataset file; carries the file and 1-based line number."""

    def __init__(self, path, line: Optional[int], message: str):
        self.path = Path(path)
        self.line = line
        where = f"{self.path}" if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")


@dataclass
class Dataset:
    name: str
    graphs: list[Graph]
    num_classes: int
    feature_kind: FeatureKind
    class_values: tuple = ()

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    @property
    def n_features(self) -> int:
        return self.graphs[0].n_features

    def __len__(self) -> int:
        return len(self.graphs)

    def summary(self) -> dict:
        sizes = np.array([g.n for g in self.graphs])
        edges = np.array([g.n_edges for g in self.graphs])
        return {"name": self.name, "graphs": len(self.graphs), "classes": self.num_classes,
                "class_counts": np.bincount(self.labels, minlength=self.num_classes).tolist(),
                "avg_nodes": float(sizes.mean()), "avg_edges": float(edges.mean()),
                "features": self.n_features, "feature_kind": self.feature_kind.value}


def _read_rows(path: Path, width: Optional[int] = None, kind=int) -> list[list]:
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                raise DatasetFormatError(path, lineno, "empty line")
            parts = [p.strip() for p in text.split(",")]
            if width is not None and len(parts) != width:
                raise DatasetFormatError(path, lineno,
                                         f"expected {width} comma-separated values, got {len(parts)}")
            try:
                rows.append([kind(p) for p in parts])
            except ValueError:
                raise DatasetFormatError(path, lineno, f"cannot parse {text!r}") from None
    return rows


def load_tu_dataset(directory, name: Optional[str] = None) -> Dataset:
    directory = Path(directory)
    name = name or directory.name
    files = {key: directory / f"{name}_{key}.txt"
             for key in ("A", "graph_indicator", "graph_labels", "node_labels", "node_attributes")}
    for key in ("A", "graph_indicator", "graph_labels"):
        if not files[key].is_file():
            raise DatasetFormatError(files[key], None, "required file is missing")

    indicator = np.array([r[0] for r in _read_rows(files["graph_indicator"], 1)], dtype=np.int64)
    graph_labels = [r[0] for r in _read_rows(files["graph_labels"], 1)]
    n_graphs = len(graph_labels)
    n_nodes = len(indicator)
    for lineno, gid in enumerate(indicator, start=1):
        if not 1 <= gid <= n_graphs:
            raise DatasetFormatError(files["graph_indicator"], lineno,
                                     f"graph id {gid} outside 1..{n_graphs}")
    if np.any(np.diff(indicator) < 0):
        bad = int(np.argmax(np.diff(indicator) < 0)) + 2
        raise DatasetFormatError(files["graph_indicator"], bad,
                                 "graph ids must be non-decreasing (nodes grouped by graph)")

    edges = np.array(_read_rows(files["A"], 2), dtype=np.int64).reshape(-1, 2)
    for lineno, (a, b) in enumerate(edges, start=1):
        if not (1 <= a <= n_nodes and 1 <= b <= n_nodes):
            raise DatasetFormatError(files["A"], lineno, f"node id out of range 1..{n_nodes}")
        if indicator[a - 1] != indicator[b - 1]:
            raise DatasetFormatError(files["A"], lineno,
                                     f"edge joins graphs {indicator[a - 1]} and {indicator[b - 1]}")

    blocks = []
    kind = FeatureKind.CONSTANT_ONE
    if files["node_labels"].is_file():
        node_labels = np.array([r[0] for r in _read_rows(files["node_labels"], 1)])
        if len(node_labels) != n_nodes:
            raise DatasetFormatError(files["node_labels"], None,
                                     f"{len(node_labels)} lines for {n_nodes} nodes")
        values, codes = np.unique(node_labels, return_inverse=True)
        blocks.append(np.eye(len(values))[codes])
        kind = FeatureKind.ONE_HOT_NODE_LABELS
    if files["node_attributes"].is_file():
        attrs = np.array(_read_rows(files["node_attributes"], kind=float), dtype=np.float64)
        if len(attrs) != n_nodes:
            raise DatasetFormatError(files["node_attributes"], None,
                                     f"{len(attrs)} lines for {n_nodes} nodes")
        blocks.append(attrs)
        if kind is FeatureKind.CONSTANT_ONE:
            kind = FeatureKind.CONTINUOUS_ATTRIBUTES
    features = np.hstack(blocks) if blocks else np.ones((n_nodes, 1))

    class_values, label_codes = np.unique(graph_labels, return_inverse=True)
    starts = np.searchsorted(indicator, np.arange(1, n_graphs + 2))
    edge_graph = indicator[edges[:, 0] - 1] if len(edges) else np.empty(0, dtype=np.int64)
    order = np.argsort(edge_graph, kind="stable")
    edge_starts = np.searchsorted(edge_graph[order], np.arange(1, n_graphs + 2))
    graphs = []
    for gid in range(n_graphs):
        lo, hi = starts[gid], starts[gid + 1]
        if hi == lo:
            raise DatasetFormatError(files["graph_indicator"], None, f"graph {gid + 1} has no nodes")
        local = edges[order[edge_starts[gid]:edge_starts[gid + 1]]] - 1 - lo
        graphs.append(Graph.from_edges(hi - lo, local, features=features[lo:hi],
                                       label=int(label_codes[gid])))
    return Dataset(name, graphs, len(class_values), kind, tuple(class_values.tolist()))
