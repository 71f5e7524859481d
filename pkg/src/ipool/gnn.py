"""Hierarchical message-passing classifier with analytic gradients.

Each convolution module runs three layers ``ReLU(rownorm(A H W))`` and
concatenates their outputs. Modules are separated by pooling layers (for the
``ipool-*`` depths), every module output is read out by a sum or mean over
nodes, and the concatenated readouts feed a two-layer softmax head.

Gradients treat the node selection made by pooling as a constant.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ReadoutMode, TrainConfig
from .graph import Graph
from .pooling import PoolingOperators, select_nodes

LAYERS_PER_MODULE = 3
NORM_EPS = 1e-12
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    """Named weight arrays plus the shape metadata needed to rebuild them."""

    arrays: dict[str, np.ndarray]
    in_dim: int
    hidden: int
    n_classes: int
    n_modules: int
    seed: int

    @classmethod
    def initialize(cls, in_dim: int, n_classes: int, hidden: int = 30, n_modules: int = 1,
                   seed: int = 0) -> "ModelParams":
        if min(in_dim, n_classes, hidden, n_modules) < 1:
            raise ValueError("all model dimensions must be positive")
        rng = np.random.default_rng(seed)
        arrays = {}
        for m in range(n_modules):
            fan_in = in_dim if m == 0 else LAYERS_PER_MODULE * hidden
            for layer in range(LAYERS_PER_MODULE):
                arrays[f"conv{m}.{layer}"] = _glorot(rng, fan_in, hidden)
                fan_in = hidden
        embed = n_modules * LAYERS_PER_MODULE * hidden
        arrays["fc1.W"] = _glorot(rng, embed, hidden)
        arrays["fc1.b"] = np.zeros(hidden)
        arrays["fc2.W"] = _glorot(rng, hidden, n_classes)
        arrays["fc2.b"] = np.zeros(n_classes)
        return cls(arrays, in_dim, hidden, n_classes, n_modules, seed)

    @property
    def embed_dim(self) -> int:
        return self.n_modules * LAYERS_PER_MODULE * self.hidden

    def conv(self, module: int, layer: int) -> np.ndarray:
        return self.arrays[f"conv{module}.{layer}"]

    def weight_names(self) -> list[str]:
        """Names subject to weight decay (biases excluded)."""
        return [name for name in self.arrays if not name.endswith(".b")]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, self.in_dim,
                           self.hidden, self.n_classes, self.n_modules, self.seed)

    def meta(self) -> dict:
        return {"format": "ipool-checkpoint", "version": CHECKPOINT_VERSION,
                "in_dim": self.in_dim, "hidden": self.hidden, "n_classes": self.n_classes,
                "n_modules": self.n_modules, "seed": self.seed,
                "arrays": {k: list(v.shape) for k, v in self.arrays.items()}}


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def save_checkpoint(params: ModelParams, path, config: Optional[TrainConfig] = None) -> Path:
    """Write ``params`` as an ``.npz`` archive (float64, bit-exact), atomically.

    ``config``, when given, is stored alongside so the architecture can be
    rebuilt by :func:`checkpoint_config`.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {f"param/{k}": v for k, v in params.arrays.items()}
    meta = params.meta()
    if config is not None:
        meta["config"] = config.to_dict()
    payload["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def read_checkpoint_meta(path) -> dict:
    with np.load(path, allow_pickle=False) as archive:
        return json.loads(archive["meta"].tobytes().decode("utf-8"))


def checkpoint_config(path) -> Optional[TrainConfig]:
    stored = read_checkpoint_meta(path).get("config")
    return None if stored is None else TrainConfig(**stored)


def load_checkpoint(path) -> ModelParams:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(archive["meta"].tobytes().decode("utf-8"))
        if meta.get("format") != "ipool-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r} "
                             f"version {meta.get('version')!r}")
        arrays = {name: archive[f"param/{name}"].copy() for name in meta["arrays"]}
    for name, shape in meta["arrays"].items():
        if list(arrays[name].shape) != shape:
            raise ValueError(f"{path}: array {name} has shape {arrays[name].shape}, "
                             f"declared {shape}")
    return ModelParams(arrays, meta["in_dim"], meta["hidden"], meta["n_classes"],
                       meta["n_modules"], meta["seed"])


def check_compatible(params: ModelParams, config: TrainConfig) -> None:
    if params.n_modules != config.depth.n_modules:
        raise ValueError(f"parameters have {params.n_modules} modules but depth "
                         f"{config.depth.value} needs {config.depth.n_modules}")


# -- forward -----------------------------------------------------------------


def conv_layer_forward(adjacency, X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``ReLU(rownorm(A X W))`` with rows scaled to unit l2 norm."""
    if X.shape[1] != W.shape[0]:
        raise ValueError(f"feature width {X.shape[1]} does not match weight rows {W.shape[0]}")
    Z = (adjacency @ X) @ W
    return np.maximum(Z / _row_norms(Z)[:, None], 0.0)


def _row_norms(Z: np.ndarray) -> np.ndarray:
    return np.maximum(np.sqrt(np.einsum("ij,ij->i", Z, Z)), NORM_EPS)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _operators(adjacency: np.ndarray, graph: Optional[Graph], config: TrainConfig):
    pooling = config.pooling
    key = ("pool-ops", pooling.k, pooling.s, pooling.weighted)
    if graph is not None and key in graph._cache:
        return graph._cache[key]
    ops = PoolingOperators.build(adjacency, pooling)
    if graph is not None:
        graph._cache[key] = ops
    return ops


@dataclass
class ForwardCache:
    probs: np.ndarray
    logits: np.ndarray
    selections: list[np.ndarray]
    modules: list[dict] = field(default_factory=list)
    head: dict = field(default_factory=dict)


def forward(graph: Graph, params: ModelParams, config: TrainConfig, *,
            training: bool = False, rng: Optional[np.random.Generator] = None,
            selections: Optional[Sequence[np.ndarray]] = None) -> tuple[np.ndarray, ForwardCache]:
    """Class probabilities for one graph plus everything backward needs.

    ``selections`` pins the kept nodes of each pooling layer (frozen-selection
    mode); otherwise they are recomputed from the current features.
    """
    if graph.n == 0:
        raise ValueError("cannot classify an empty graph")
    if graph.n_features != params.in_dim:
        raise ValueError(f"graph has {graph.n_features} features, model expects {params.in_dim}")
    check_compatible(params, config)
    depth = config.depth
    A = graph.dense_adjacency()
    X = graph.features
    chosen: list[np.ndarray] = []
    modules = []
    readouts = []
    for m in range(depth.n_modules):
        sel = None
        if m > 0 and depth.pooled:
            ops = _operators(A, graph if m == 1 else None, config)
            if selections is not None:
                sel = np.asarray(selections[m - 1])
            else:
                sel = select_nodes(ops.scores(X, config.mode), config.ratio)
            chosen.append(sel)
            A = ops.coarse_adjacency(sel)
            X = X[sel]
        layers = []
        H = X
        for layer in range(LAYERS_PER_MODULE):
            AH = A @ H
            Z = AH @ params.conv(m, layer)
            norms = _row_norms(Z)
            U = Z / norms[:, None]
            Y = np.maximum(U, 0.0)
            layers.append({"AH": AH, "U": U, "norms": norms})
            H = Y
        out = np.concatenate([np.maximum(c["U"], 0.0) for c in layers], axis=1)
        modules.append({"A": A, "layers": layers, "sel": sel, "n": out.shape[0]})
        readouts.append(out.sum(axis=0) if config.readout is ReadoutMode.SUM
                        else out.mean(axis=0))
        X = out
    h = np.concatenate(readouts)
    z1 = h @ params.arrays["fc1.W"] + params.arrays["fc1.b"]
    a1 = np.maximum(z1, 0.0)
    mask = None
    if training and config.dropout > 0:
        if rng is None:
            raise ValueError("training with dropout needs a random generator")
        keep = 1.0 - config.dropout
        mask = (rng.random(a1.shape) < keep) / keep
        a1 = a1 * mask
    logits = a1 @ params.arrays["fc2.W"] + params.arrays["fc2.b"]
    probs = _softmax(logits)
    cache = ForwardCache(probs, logits, chosen, modules,
                         {"h": h, "z1": z1, "a1": a1, "mask": mask})
    return probs, cache


# -- backward ----------------------------------------------------------------


def backward(cache: ForwardCache, params: ModelParams, config: TrainConfig,
             dlogits: np.ndarray, grads: dict[str, np.ndarray]) -> None:
    """Accumulate ``d loss / d params`` into ``grads`` given ``d loss / d logits``."""
    head = cache.head
    grads["fc2.W"] += np.outer(head["a1"], dlogits)
    grads["fc2.b"] += dlogits
    da1 = params.arrays["fc2.W"] @ dlogits
    if head["mask"] is not None:
        da1 = da1 * head["mask"]
    dz1 = da1 * (head["z1"] > 0)
    grads["fc1.W"] += np.outer(head["h"], dz1)
    grads["fc1.b"] += dz1
    dh = params.arrays["fc1.W"] @ dz1

    width = LAYERS_PER_MODULE * params.hidden
    carry = None  # gradient w.r.t. the output of the module after the current one's pool
    for m in range(len(cache.modules) - 1, -1, -1):
        mod = cache.modules[m]
        dr = dh[m * width:(m + 1) * width]
        if config.readout is ReadoutMode.MEAN:
            dr = dr / mod["n"]
        dout = np.broadcast_to(dr, (mod["n"], width)).copy()
        if carry is not None:
            nxt = cache.modules[m + 1]
            if nxt["sel"] is not None:
                dout[nxt["sel"]] += carry
            else:
                dout += carry
        A = mod["A"]
        dY_next = None
        for layer in range(LAYERS_PER_MODULE - 1, -1, -1):
            c = mod["layers"][layer]
            dY = dout[:, layer * params.hidden:(layer + 1) * params.hidden]
            if dY_next is not None:
                dY = dY + dY_next
            U = c["U"]
            dU = dY * (U > 0)
            dZ = (dU - U * np.einsum("ij,ij->i", dU, U)[:, None]) / c["norms"][:, None]
            dZ[c["norms"] <= NORM_EPS] = 0.0
            W = params.conv(m, layer)
            grads[f"conv{m}.{layer}"] += c["AH"].T @ dZ
            # A is symmetric, so A^T (dZ W^T) == A (dZ W^T)
            dY_next = A @ (dZ @ W.T)
        carry = dY_next


def loss_and_gradients(batch: Sequence[Graph], params: ModelParams, config: TrainConfig, *,
                       labels: Optional[Sequence[int]] = None, training: bool = False,
                       rng: Optional[np.random.Generator] = None,
                       selections: Optional[Sequence[Sequence[np.ndarray]]] = None):
    """Mean cross-entropy over ``batch`` plus ``weight_decay / 2 * sum ||W||^2``.

    Returns ``(loss, grads, caches)``; ``grads`` maps parameter names to arrays
    of the same shape.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if labels is None:
        labels = [g.label for g in batch]
    if any(y is None for y in labels):
        raise ValueError("every graph in the batch needs a label")
    grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    total = 0.0
    caches = []
    scale = 1.0 / len(batch)
    for i, (graph, y) in enumerate(zip(batch, labels)):
        y = int(y)
        if not 0 <= y < params.n_classes:
            raise ValueError(f"label {y} outside [0, {params.n_classes})")
        probs, cache = forward(graph, params, config, training=training, rng=rng,
                               selections=None if selections is None else selections[i])
        total += -np.log(max(probs[y], 1e-300))
        dlogits = probs.copy()
        dlogits[y] -= 1.0
        backward(cache, params, config, dlogits * scale, grads)
        caches.append(cache)
    loss = total * scale
    lam = config.weight_decay
    if lam:
        for name in params.weight_names():
            W = params.arrays[name]
            loss += 0.5 * lam * float(np.sum(W * W))
            grads[name] += lam * W
    return loss, grads, caches


def predict_proba(graphs: Sequence[Graph], params: ModelParams, config: TrainConfig) -> np.ndarray:
    return np.array([forward(g, params, config)[0] for g in graphs])
