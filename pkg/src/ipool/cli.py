"""Command-line entry point: ``ipool {pool,train,eval,verify,inspect}``.

Exit codes: 0 success, 1 failed check or invalid configuration, 2 I/O or
parse failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import gnn, validation
from .config import Depth, ReadoutMode, TrainConfig, coerce, load_config
from .datasets import DatasetFormatError, load_tu_dataset
from .graph import Graph
from .pooling import PoolingConfig, PoolingMode, coarsen
from .training import atomic_write_text, cross_validate, emit_metrics

EXIT_OK, EXIT_FAILED, EXIT_IO = 0, 1, 2
SEED_ENV = "IPOOL_SEED"

log = logging.getLogger("ipool")


class InputError(Exception):
    """Unreadable or malformed input; maps to exit code 2."""


def read_edge_list(path, one_indexed: bool = True) -> tuple[list[tuple[int, int]], list[float]]:
    """Parse ``i, j`` or ``i, j, w`` lines (the TU ``_A.txt`` convention)."""
    path = Path(path)
    edges, weights = [], []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (2, 3):
            raise InputError(f"{path}:{lineno}: expected 'i, j' or 'i, j, w', got {line!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
            w = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise InputError(f"{path}:{lineno}: cannot parse {line!r}") from None
        base = 1 if one_indexed else 0
        if i < base or j < base:
            raise InputError(f"{path}:{lineno}: node index below {base}")
        edges.append((i - base, j - base))
        weights.append(w)
    return edges, weights


def read_matrix(path) -> np.ndarray:
    """Whitespace-separated rows of reals, one row per node."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = [float(v) for v in line.split()]
        except ValueError:
            raise InputError(f"{path}:{lineno}: cannot parse {line!r}") from None
        if rows and len(row) != len(rows[0]):
            raise InputError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(row)}")
        rows.append(row)
    if not rows:
        raise InputError(f"{path}: no rows")
    return np.array(rows)


def _format_edges(graph: Graph) -> str:
    weighted = any(w != 1.0 for _, _, w in graph.edge_list())
    lines = []
    coo = graph.adjacency.tocoo()
    for i, j, w in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
        lines.append(f"{i + 1}, {j + 1}, {w!r}" if weighted else f"{i + 1}, {j + 1}")
    return "".join(line + "\n" for line in lines)


def _format_matrix(matrix: np.ndarray) -> str:
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in matrix)


def cmd_pool(args) -> int:
    features = read_matrix(args.features)
    edges, weights = read_edge_list(args.input, one_indexed=not args.zero_indexed)
    n = len(features)
    if edges and max(max(e) for e in edges) >= n:
        raise InputError(f"{args.input}: edge refers to node beyond the {n} rows of {args.features}")
    graph = Graph.from_edges(n, edges, features=features, weights=weights)
    config = PoolingConfig(k=args.k, s=args.s, ratio=args.ratio, mode=args.mode,
                           weighted=args.weighted)
    result = coarsen(graph, config)
    out = Path(args.out)
    atomic_write_text(out / "edges.txt", _format_edges(result.coarse))
    atomic_write_text(out / "features.txt", _format_matrix(result.coarse.features))
    atomic_write_text(out / "selected.txt", "".join(f"{i}\n" for i in result.selected))
    atomic_write_text(out / "gains.txt", "".join(f"{g!r}\n" for g in result.gains.tolist()))
    print(f"kept {len(result.selected)} of {graph.n} nodes, "
          f"{result.coarse.n_edges} edges -> {out}")
    return EXIT_OK


CONFIG_FLAGS = {f.name: f.name.replace("_", "-") for f in dataclasses.fields(TrainConfig)}


def _train_config(args) -> TrainConfig:
    overrides = {name: getattr(args, name) for name in CONFIG_FLAGS}
    env_seed = os.environ.get(SEED_ENV)
    if overrides["seed"] is None and env_seed is not None:
        overrides["seed"] = int(env_seed)
    if args.config:
        try:
            return load_config(args.config, **overrides)
        except OSError as exc:
            raise InputError(f"{args.config}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise InputError(f"{args.config}: {exc}") from None
    values = {k: coerce(k, v) for k, v in overrides.items() if v is not None}
    return TrainConfig().replace(**values)


def _load_dataset(args):
    try:
        return load_tu_dataset(args.dataset, args.name)
    except OSError as exc:
        raise InputError(f"{args.dataset}: {exc}") from None


def cmd_train(args) -> int:
    config = _train_config(args)
    problems = config.problems(args.allow_any_hyper)
    if problems:
        for problem in problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_FAILED
    dataset = _load_dataset(args)
    print(f"{dataset.name}: {len(dataset)} graphs, {dataset.num_classes} classes; "
          f"{config.depth.value}, {config.folds}-fold CV, seed {config.seed}")
    result = cross_validate(dataset, config, checkpoint_dir=args.checkpoint_dir,
                            track_test=not args.no_epoch_eval)
    for fold in result.folds:
        print(f"fold {fold.fold}: {fold.test_accuracy:.4f}")
    emit_metrics(result, args.out)
    print(f"accuracy {result.mean:.4f} +- {result.std:.4f}  (metrics: {args.out})")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        params = gnn.load_checkpoint(args.checkpoint)
        config = gnn.checkpoint_config(args.checkpoint)
    except OSError as exc:
        raise InputError(f"{args.checkpoint}: {exc}") from None
    if args.config:
        config = load_config(args.config)
    if config is None:
        print("checkpoint stores no config; pass --config", file=sys.stderr)
        return EXIT_FAILED
    dataset = _load_dataset(args)
    probs = gnn.predict_proba(dataset.graphs, params, config)
    accuracy = float(np.mean(np.argmax(probs, axis=1) == dataset.labels))
    print(f"{dataset.name}: accuracy {accuracy:.4f} on {len(dataset)} graphs")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = sorted(validation.SUITES) if args.suite == "all" else [args.suite]
    failed = 0
    for name in names:
        for check in validation.run_suite(name):
            print(check.line())
            failed += not check.passed
    print(f"{failed} failed check(s)")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_inspect(args) -> int:
    if args.checkpoint:
        try:
            meta = gnn.read_checkpoint_meta(args.checkpoint)
        except OSError as exc:
            raise InputError(f"{args.checkpoint}: {exc}") from None
        print(json.dumps(meta, indent=2))
    if args.dataset:
        print(json.dumps(_load_dataset(args).summary(), indent=2))
    if not (args.checkpoint or args.dataset):
        print("nothing to inspect: pass --dataset and/or --checkpoint", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipool", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pool", help="coarsen a single graph")
    p.add_argument("--input", required=True, help="edge list, 'i, j[, w]' per line")
    p.add_argument("--features", required=True, help="node feature matrix, whitespace separated")
    p.add_argument("--zero-indexed", action="store_true", help="edge list uses 0-based ids")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--s", type=int, default=1, choices=(1, 2))
    p.add_argument("--ratio", type=float, default=0.25)
    p.add_argument("--mode", choices=[m.value for m in PoolingMode], default="global")
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pool)

    def dataset_args(q, required=True):
        q.add_argument("--dataset", required=required, help="TU dataset directory")
        q.add_argument("--name", help="dataset name (default: directory name)")

    t = sub.add_parser("train", help="stratified cross-validation on a TU dataset")
    dataset_args(t)
    t.add_argument("--config", help="flat 'key: value' YAML file")
    t.add_argument("--out", default="metrics.csv", help="metrics CSV path")
    t.add_argument("--checkpoint-dir", help="write one checkpoint per fold here")
    t.add_argument("--allow-any-hyper", action="store_true",
                   help="accept hyperparameters outside the published grids")
    t.add_argument("--no-epoch-eval", action="store_true",
                   help="skip per-epoch test accuracy (faster)")
    choices = {"mode": [m.value for m in PoolingMode], "depth": [d.value for d in Depth],
               "readout": [r.value for r in ReadoutMode]}
    for name, flag in CONFIG_FLAGS.items():
        if name == "weighted":
            t.add_argument(f"--{flag}", dest=name, action="store_const", const=True, default=None)
        else:
            t.add_argument(f"--{flag}", dest=name, default=None, choices=choices.get(name))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    dataset_args(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="override the config stored in the checkpoint")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run a property/oracle suite")
    v.add_argument("--suite", required=True, choices=sorted(validation.SUITES) + ["all"])
    v.set_defaults(func=cmd_verify)

    i = sub.add_parser("inspect", help="describe a dataset or checkpoint")
    dataset_args(i, required=False)
    i.add_argument("--checkpoint")
    i.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
