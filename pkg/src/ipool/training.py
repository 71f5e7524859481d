"""Mini-batch Adam training, a scikit-learn style classifier and stratified CV."""
from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import gnn
from .config import TrainConfig
from .datasets import Dataset
from .graph import Graph

log = logging.getLogger(__name__)


class Adam:
    """Adam over a dict of named arrays, updated in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr_t * m / (np.sqrt(v) + self.eps)


def _check_graphs(graphs) -> list[Graph]:
    graphs = list(graphs)
    if not graphs:
        raise ValueError("need at least one graph")
    for g in graphs:
        if not isinstance(g, Graph):
            raise TypeError(f"expected Graph instances, got {type(g).__name__}")
        if g.n == 0:
            raise ValueError("empty graphs cannot be classified")
    widths = {g.n_features for g in graphs}
    if len(widths) != 1:
        raise ValueError(f"graphs disagree on feature width: {sorted(widths)}")
    return graphs


def _labels(graphs: Sequence[Graph], y) -> np.ndarray:
    if y is None:
        y = [g.label for g in graphs]
        if any(v is None for v in y):
            raise ValueError("labels missing: pass y or give every graph a label")
    y = np.asarray(y)
    if len(y) != len(graphs):
        raise ValueError(f"{len(graphs)} graphs but {len(y)} labels")
    return y


class IPoolClassifier(ClassifierMixin, BaseEstimator):
    """Graph classifier: convolution modules, iPool layers, readout and MLP head.

    ``X`` is a sequence of :class:`~ipool.graph.Graph`; ``y`` defaults to the
    graphs' own labels. Constructor arguments mirror :class:`TrainConfig`.
    """

    def __init__(self, learning_rate=1e-2, weight_decay=0.0, dropout=0.0, batch_size=20,
                 epochs=100, ratio=0.25, s=1, k=1, mode="local", depth="ipool-1", hidden=30,
                 readout="sum", weighted=False, seed=0):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.dropout = dropout
        self.batch_size = batch_size
        self.epochs = epochs
        self.ratio = ratio
        self.s = s
        self.k = k
        self.mode = mode
        self.depth = depth
        self.hidden = hidden
        self.readout = readout
        self.weighted = weighted
        self.seed = seed

    @classmethod
    def from_config(cls, config: TrainConfig) -> "IPoolClassifier":
        values = config.to_dict()
        values.pop("folds")
        return cls(**values)

    @property
    def config(self) -> TrainConfig:
        return TrainConfig(**self.get_params(), folds=10)

    def fit(self, X, y=None, eval_set=None):
        """Train from scratch. ``eval_set=(graphs, y)`` records per-epoch test accuracy."""
        graphs = _check_graphs(X)
        y = _labels(graphs, y)
        config = self.config.validate(allow_any_hyper=True)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = graphs[0].n_features
        rng = np.random.default_rng(config.seed)
        self.params_ = gnn.ModelParams.initialize(
            graphs[0].n_features, len(self.classes_), config.hidden, config.depth.n_modules,
            seed=int(rng.integers(2**31)))
        optimizer = Adam(lr=config.learning_rate)
        self.history_ = []
        start = time.perf_counter()
        for epoch in range(config.epochs):
            order = rng.permutation(len(graphs))
            total, correct = 0.0, 0
            for lo in range(0, len(order), config.batch_size):
                idx = order[lo:lo + config.batch_size]
                loss, grads, caches = gnn.loss_and_gradients(
                    [graphs[i] for i in idx], self.params_, config, labels=codes[idx],
                    training=True, rng=rng)
                optimizer.step(self.params_.arrays, grads)
                total += loss * len(idx)
                correct += sum(int(np.argmax(c.probs) == codes[i]) for c, i in zip(caches, idx))
            record = {"epoch": epoch + 1, "train_loss": total / len(graphs),
                      "train_acc": correct / len(graphs), "test_acc": float("nan")}
            if eval_set is not None:
                record["test_acc"] = self.score(*eval_set)
            record["wall_seconds"] = time.perf_counter() - start
            self.history_.append(record)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        graphs = _check_graphs(X)
        if graphs[0].n_features != self.n_features_in_:
            raise ValueError(f"graphs have {graphs[0].n_features} features, "
                             f"model was fit with {self.n_features_in_}")
        return gnn.predict_proba(graphs, self.params_, self.config)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "classes_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def score(self, X, y=None, sample_weight=None) -> float:
        graphs = list(X)
        return super().score(graphs, _labels(graphs, y), sample_weight=sample_weight)


# -- cross-validation ---------------------------------------------------------


def stratified_folds(labels, folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded stratified split as ``(train_index, test_index)`` pairs.

    Each class is shuffled and dealt round-robin across folds, the deal
    continuing from class to class, so fold sizes differ by at most one and
    every fold holds ``floor`` or ``ceil`` of ``count / folds`` of each class.
    Unlike scikit-learn's splitter this allows more folds than members of a
    class (e.g. leave-one-out on a balanced 10-graph set).
    """
    labels = np.asarray(labels)
    if folds < 2 or len(labels) < folds:
        raise ValueError(f"cannot stratify {len(labels)} graphs into {folds} folds")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(labels), dtype=np.int64)
    dealt = 0
    for value in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == value))
        assignment[members] = (dealt + np.arange(len(members))) % folds
        dealt += len(members)
    assignment = rng.permutation(folds)[assignment]
    everything = np.arange(len(labels))
    return [(everything[assignment != f], everything[assignment == f]) for f in range(folds)]


@dataclass
class FoldResult:
    fold: int
    test_accuracy: float
    history: list[dict]
    train_index: np.ndarray
    test_index: np.ndarray
    model: Optional[IPoolClassifier] = None


@dataclass
class CVResult:
    folds: list[FoldResult] = field(default_factory=list)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([f.test_accuracy for f in self.folds])

    @property
    def mean(self) -> float:
        return float(self.accuracies.mean()) if self.folds else float("nan")

    @property
    def std(self) -> float:
        return float(self.accuracies.std()) if self.folds else float("nan")


def cross_validate(dataset: Dataset, config: TrainConfig, checkpoint_dir=None,
                   keep_models: bool = False, track_test: bool = True) -> CVResult:
    """Stratified k-fold CV; the model after the final epoch is tested on each fold."""
    labels = dataset.labels
    splits = stratified_folds(labels, config.folds, config.seed)
    result = CVResult()
    for fold, (train, test) in enumerate(splits):
        model = IPoolClassifier.from_config(config.replace(seed=config.seed * 1000 + fold))
        train_graphs = [dataset.graphs[i] for i in train]
        test_graphs = [dataset.graphs[i] for i in test]
        model.fit(train_graphs, labels[train],
                  eval_set=(test_graphs, labels[test]) if track_test else None)
        accuracy = model.score(test_graphs, labels[test])
        if checkpoint_dir is not None:
            gnn.save_checkpoint(model.params_, Path(checkpoint_dir) / f"fold{fold:02d}.npz",
                                config=model.config.replace(folds=config.folds))
        log.info("fold %d: test accuracy %.4f", fold, accuracy)
        result.folds.append(FoldResult(fold, accuracy, model.history_, train, test,
                                       model if keep_models else None))
    return result


METRIC_COLUMNS = ("fold", "epoch", "train_loss", "train_acc", "test_acc", "wall_seconds")


def emit_metrics(result: CVResult, path) -> Path:
    """Write per-epoch metrics plus a trailing summary row as CSV, replacing ``path``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for fold in result.folds:
        for rec in fold.history:
            writer.writerow([fold.fold, rec["epoch"], _fmt(rec["train_loss"]),
                             _fmt(rec["train_acc"]), _fmt(rec["test_acc"]),
                             _fmt(rec["wall_seconds"])])
    train_loss = [f.history[-1]["train_loss"] for f in result.folds if f.history]
    train_acc = [f.history[-1]["train_acc"] for f in result.folds if f.history]
    wall = sum(f.history[-1]["wall_seconds"] for f in result.folds if f.history)
    writer.writerow(["summary", "", _fmt(np.mean(train_loss) if train_loss else float("nan")),
                     _fmt(np.mean(train_acc) if train_acc else float("nan")),
                     f"{_fmt(result.mean)}+-{_fmt(result.std)}", _fmt(wall)])
    return atomic_write_text(path, buf.getvalue())


def _fmt(value: float) -> str:
    return "nan" if value != value else f"{value:.6f}"


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path
