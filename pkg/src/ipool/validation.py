"""Executable checks of the pooling operator's theoretical properties.

Includes a Monte-Carlo check that, under a product-Laplace neighborhood model,
``gain / b + d * log(2b)`` estimates the conditional entropy in expectation;
a permutation generator for isomorphism-invariance tests; a dense per-node
oracle for the information gain; and the named suites run by ``ipool verify``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import gnn
from .config import TrainConfig
from .graph import Graph
from .pooling import PoolingConfig, PoolingMode, coarsen, information_gain, normalized_gain


@dataclass(frozen=True)
class LaplaceNeighborhoodModel:
    d: int
    b: float
    mu: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError(f"scale b must be positive, got {self.b}")
        if self.d < 1:
            raise ValueError(f"dimension d must be at least 1, got {self.d}")
        if self.mu is not None and np.shape(self.mu) != (self.d,):
            raise ValueError(f"mu must have length {self.d}")

    @property
    def mean(self) -> np.ndarray:
        return np.zeros(self.d) if self.mu is None else np.asarray(self.mu, dtype=np.float64)

    @property
    def entropy(self) -> float:
        """Differential entropy of the product-Laplace distribution, in nats."""
        return self.d * (1.0 + math.log(2.0 * self.b))


def entropy_estimate_from_gain(gain: float, b: float, d: int) -> float:
    if b <= 0:
        raise ValueError(f"scale b must be positive, got {b}")
    return gain / b + d * math.log(2.0 * b)


def monte_carlo_entropy_check(model: LaplaceNeighborhoodModel, samples: int = 100_000,
                              seed: int = 0) -> tuple[float, float, float]:
    """Return ``(empirical mean estimate, analytic entropy, relative error)``."""
    if samples < 1000:
        raise ValueError(f"need at least 1000 samples, got {samples}")
    rng = np.random.default_rng(seed)
    mu = model.mean
    x = rng.laplace(loc=mu, scale=model.b, size=(samples, model.d))
    gains = np.abs(x - mu).sum(axis=1)
    estimate = float(np.mean(gains / model.b + model.d * math.log(2.0 * model.b)))
    analytic = model.entropy
    return estimate, analytic, abs(estimate - analytic) / abs(analytic)


def permute_graph(graph: Graph, permutation) -> Graph:
    """Relabel so that node ``i`` of ``graph`` becomes node ``permutation[i]``."""
    permutation = np.asarray(permutation, dtype=np.int64)
    if sorted(permutation.tolist()) != list(range(graph.n)):
        raise ValueError("not a permutation of the node indices")
    inverse = np.argsort(permutation)
    adjacency = graph.adjacency[inverse][:, inverse]
    return Graph.from_adjacency(adjacency, graph.features[inverse], graph.label,
                                check_symmetric=False)


def generate_isomorphic_pair(graph: Graph, seed=None) -> tuple[Graph, np.ndarray]:
    """Randomly relabel ``graph``; ``seed=None`` gives the identity permutation."""
    if graph.n == 0:
        raise ValueError("cannot permute an empty graph")
    if seed is None:
        permutation = np.arange(graph.n)
    else:
        permutation = np.random.default_rng(seed).permutation(graph.n)
    return permute_graph(graph, permutation), permutation


def information_gain_loop(graph: Graph, k: int) -> np.ndarray:
    """Per-node reference computation with dense matrices and explicit loops."""
    A = graph.adjacency.toarray()
    X = np.asarray(graph.features)
    n = A.shape[0]
    powers = [A.copy()]
    for _ in range(1, k):
        powers.append(powers[-1] @ A)
    gains = np.zeros(n)
    for i in range(n):
        prediction = np.zeros(X.shape[1])
        for Ah in powers:
            weights = Ah[i].copy()
            weights[i] = 0.0
            total = weights.sum()
            if total <= 0:
                continue
            for j in range(n):
                if weights[j] > 0:
                    prediction += weights[j] / total * X[j]
        gains[i] = np.sum(np.abs(X[i] - prediction / k))
    return gains


def random_graph(rng: np.random.Generator, n_max: int = 30, d_max: int = 8,
                 n_min: int = 1, weighted: bool = False) -> Graph:
    n = int(rng.integers(n_min, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    p = rng.uniform(0.05, 0.6)
    iu = np.triu_indices(n, k=1)
    mask = rng.random(len(iu[0])) < p
    edges = np.column_stack([iu[0][mask], iu[1][mask]])
    weights = rng.uniform(0.5, 2.0, size=len(edges)) if weighted else None
    return Graph.from_edges(n, edges, features=rng.normal(size=(n, d)), weights=weights)


def selection_scores(graph: Graph, config: PoolingConfig) -> np.ndarray:
    gains = information_gain(graph, config.k)
    if config.mode is PoolingMode.LOCAL:
        return normalized_gain(graph, gains)
    return gains


def has_distinct_scores(graph: Graph, config: PoolingConfig, gap: float = 1e-6) -> bool:
    scores = np.sort(selection_scores(graph, config))
    if np.isinf(scores).sum() > 1:
        return False
    finite = scores[np.isfinite(scores)]
    return len(finite) < 2 or np.min(np.diff(finite)) > gap


def distinct_gain_graph(rng: np.random.Generator, config: PoolingConfig, n_max: int = 20,
                        d_max: int = 8, feature_tries: int = 20, max_tries: int = 1000) -> Graph:
    """Random graph whose selection scores are pairwise distinct.

    Features are redrawn until the smallest gap between scores exceeds 1e-6.
    Some structures tie for every feature draw (an isolated edge gives both
    endpoints the same gain), so the structure is redrawn after
    ``feature_tries`` failed attempts.
    """
    for attempt in range(max_tries):
        if attempt % feature_tries == 0:
            graph = random_graph(rng, n_max=n_max, d_max=d_max, n_min=2)
        else:
            graph = graph.with_features(rng.normal(size=graph.features.shape))
        if has_distinct_scores(graph, config):
            return graph
    raise RuntimeError("could not draw features with distinct gains")


def coarsening_structure_ok(C) -> bool:
    """Every row holds a single 1 and no column holds more than one entry."""
    C = C.tocsr()
    rows = np.diff(C.indptr)
    cols = np.bincount(C.indices, minlength=C.shape[1])
    return bool(np.all(rows == 1) and np.all(cols <= 1) and np.all(C.data == 1.0))


def canonical_edges(graph: Graph, relabel=None) -> list[tuple[int, int, float]]:
    out = []
    for i, j, w in graph.edge_list():
        if relabel is not None:
            i, j = relabel[i], relabel[j]
        out.append((min(i, j), max(i, j), w))
    return sorted(out)


def isomorphism_check(graph: Graph, config: PoolingConfig, seed: int) -> tuple[bool, str]:
    """Pool ``graph`` and a random relabelling of it and compare the outcomes."""
    permuted, perm = generate_isomorphic_pair(graph, seed)
    gains = information_gain(graph, config.k)
    gains_p = information_gain(permuted, config.k)
    if np.max(np.abs(gains_p[perm] - gains)) > 1e-12:
        return False, "gain vector is not permutation-equivariant"
    ref = coarsen(graph, config)
    got = coarsen(permuted, config)
    if sorted(perm[ref.selected].tolist()) != got.selected.tolist():
        return False, "selected node sets do not correspond"
    # coarse node a of graph holds original node ref.selected[a]; find it in the other graph
    position = {node: b for b, node in enumerate(got.selected.tolist())}
    relabel = [position[int(perm[node])] for node in ref.selected]
    want, have = canonical_edges(ref.coarse, relabel), canonical_edges(got.coarse)
    if [e[:2] for e in want] != [e[:2] for e in have] or not np.allclose(
            [e[2] for e in want], [e[2] for e in have], rtol=1e-12, atol=0):
        return False, "coarse edge sets differ after relabelling"
    if not np.array_equal(got.coarse.features[relabel], ref.coarse.features):
        return False, "coarse features differ after relabelling"
    return True, ""


def gradient_check(config: TrainConfig, seed: int = 0, n: int = 8, d: int = 4,
                   n_classes: int = 3, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Pooling selections are frozen from a reference forward pass.
    """
    rng = np.random.default_rng(seed)
    while True:
        graph = random_graph(rng, n_max=n, d_max=d, n_min=n)
        if graph.n_edges >= n:
            break
    graph = graph.with_features(rng.uniform(0.0, 1.0, size=(n, d)))
    params = gnn.ModelParams.initialize(graph.n_features, n_classes, config.hidden,
                                        config.depth.n_modules, seed=seed)
    labels = [int(rng.integers(n_classes))]
    _, grads, caches = gnn.loss_and_gradients([graph], params, config, labels=labels)
    frozen = [caches[0].selections]

    def loss() -> float:
        return gnn.loss_and_gradients([graph], params, config, labels=labels,
                                      selections=frozen)[0]

    worst = 0.0
    for name, array in params.arrays.items():
        for idx in np.ndindex(array.shape):
            old = array[idx]
            array[idx] = old + step
            up = loss()
            array[idx] = old - step
            down = loss()
            array[idx] = old
            numeric = (up - down) / (2 * step)
            analytic = grads[name][idx]
            worst = max(worst, abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8))
    return worst


# -- suites ------------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    measured: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.measured} ({self.seconds:.2f}s)"


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> Check:
    start = time.perf_counter()
    passed, measured = fn()
    return Check(name, passed, measured, time.perf_counter() - start)


def oracle_suite(n_graphs: int = 500, seed: int = 0) -> list[Check]:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for i in range(n_graphs):
            graph = random_graph(rng, n_max=30, d_max=8, weighted=bool(i % 2))
            k = 1 + i % 2
            diff = np.max(np.abs(information_gain(graph, k) - information_gain_loop(graph, k)))
            worst = max(worst, float(diff))
        return worst < 1e-9, f"max |matrix - loop| = {worst:.3e} over {n_graphs} graphs"
    return [_timed("gain matrix form equals per-node loop", run)]


def entropy_suite(samples: int = 100_000, seed: int = 0) -> list[Check]:
    checks = []
    grid = [(d, b) for d in (1, 4, 16) for b in (0.25, 0.5, 2.0)]
    streams = np.random.SeedSequence(seed).spawn(len(grid))
    for (d, b), stream in zip(grid, streams):
        def run(d=d, b=b, stream=stream):
            model = LaplaceNeighborhoodModel(d=d, b=b)
            est, analytic, err = monte_carlo_entropy_check(model, samples, stream)
            return err < 0.02, f"estimate {est:.5f} vs {analytic:.5f}, rel err {err:.2e}"
        checks.append(_timed(f"entropy d={d} b={b}", run))
    return checks


def gradient_suite(seed: int = 0) -> list[Check]:
    checks = []
    for depth in ("base-0", "ipool-1"):
        config = TrainConfig(depth=depth, hidden=5, k=2, s=2, ratio=0.5, mode="local",
                             weight_decay=1e-4)

        def run(config=config):
            err = gradient_check(config, seed=seed)
            return err < 1e-4, f"max relative error {err:.2e}"
        checks.append(_timed(f"gradients {depth}", run))
    return checks


def props_suite(n_pairs: int = 200, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    configs = [PoolingConfig(k=k, s=s, ratio=ratio, mode=mode)
               for k in (1, 2) for s in (1, 2) for ratio in (0.25, 0.5)
               for mode in (PoolingMode.GLOBAL, PoolingMode.LOCAL)]

    def invariance():
        failures = []
        for i in range(n_pairs):
            config = configs[i % len(configs)]
            graph = distinct_gain_graph(rng, config)
            ok, why = isomorphism_check(graph, config, seed=seed + i)
            if not ok:
                failures.append(f"pair {i}: {why}")
        return not failures, f"{len(failures)} failures / {n_pairs} pairs" + (
            f"; first: {failures[0]}" if failures else "")

    def structure():
        bad = 0
        total = 0
        for i in range(n_pairs):
            graph = random_graph(rng, n_max=30)
            for config in configs[:: max(1, len(configs) // 4)]:
                result = coarsen(graph, config)
                total += 1
                A = result.coarse.adjacency
                if not coarsening_structure_ok(result.coarsening) or abs(A - A.T).sum() > 0 \
                        or np.any(A.diagonal() != 0):
                    bad += 1
        return bad == 0, f"{bad} malformed / {total} poolings"

    def scaling():
        bad = 0
        for i in range(100):
            graph = random_graph(rng, n_max=30)
            for mode in (PoolingMode.GLOBAL, PoolingMode.LOCAL):
                config = PoolingConfig(k=1 + i % 2, ratio=0.5, mode=mode)
                base = coarsen(graph, config).selected
                for c in (0.1, 3.0, 1000.0):
                    scaled = coarsen(graph.with_features(c * graph.features), config).selected
                    bad += not np.array_equal(base, scaled)
        return bad == 0, f"{bad} selection changes under positive scaling"

    return [_timed("isomorphism invariance", invariance),
            _timed("coarsening matrix structure", structure),
            _timed("selection invariant to feature scaling", scaling)]


SUITES = {"oracle": oracle_suite, "entropy": entropy_suite, "gradients": gradient_suite,
          "props": props_suite}


def run_suite(name: str) -> list[Check]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name]()
