import csv

import numpy as np
import pytest
from sklearn.base import clone

from ipool.config import GRIDS, Depth, TrainConfig, load_config
from ipool.datasets import DatasetFormatError, FeatureKind, load_tu_dataset
from ipool.graph import Graph
from ipool.training import (METRIC_COLUMNS, Adam, CVResult, FoldResult, IPoolClassifier,
                            cross_validate, emit_metrics, stratified_folds)


def write_tu(directory, name, files):
    directory.mkdir(parents=True, exist_ok=True)
    for key, lines in files.items():
        (directory / f"{name}_{key}.txt").write_text("".join(f"{l}\n" for l in lines))
    return directory


def toy_dataset_dir(tmp_path, n_graphs=4):
    """Alternating triangles (label 1) and 3-paths (label -1)."""
    A, indicator, labels, node_labels = [], [], [], []
    for g in range(n_graphs):
        base = 3 * g
        tri = g % 2 == 0
        edges = [(1, 2), (2, 3), (3, 1)] if tri else [(1, 2), (2, 3)]
        for a, b in edges:
            A += [f"{base + a}, {base + b}", f"{base + b}, {base + a}"]
        indicator += [str(g + 1)] * 3
        labels.append("1" if tri else "-1")
        node_labels += ["0", "1", "2"] if tri else ["2", "2", "5"]
    return write_tu(tmp_path / "TOY", "TOY", {"A": A, "graph_indicator": indicator,
                                              "graph_labels": labels,
                                              "node_labels": node_labels})


def toy_graphs(n=20, seed=0):
    """Random graphs whose class shows in the node features."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        size = int(rng.integers(5, 9))
        edges = [(j, j + 1) for j in range(size - 1)] + [(0, size - 1)]
        X = np.abs(rng.normal(size=(size, 2))) * 0.3
        X[:, i % 2] += 1.0
        out.append(Graph.from_edges(size, edges, features=X, label=i % 2))
    return out


class TestAdam:
    def test_zero_gradient_is_a_no_op(self):
        params = {"w": np.array([1.0, -2.0])}
        opt = Adam(lr=0.1)
        for _ in range(5):
            opt.step(params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_first_step_size_is_lr(self):
        params = {"w": np.array([0.0, 0.0])}
        Adam(lr=0.01).step(params, {"w": np.array([3.0, -1e-3])})
        np.testing.assert_allclose(params["w"], [-0.01, 0.01], rtol=1e-3)

    def test_minimizes_quadratic(self):
        params = {"w": np.array([5.0])}
        opt = Adam(lr=0.1)
        for _ in range(500):
            opt.step(params, {"w": 2 * params["w"]})
        assert abs(params["w"][0]) < 1e-2


class TestFolds:
    labels = np.array([0] * 12 + [1] * 24)

    def test_partition(self):
        splits = stratified_folds(self.labels, 4, seed=0)
        tests = np.concatenate([t for _, t in splits])
        assert sorted(tests.tolist()) == list(range(len(self.labels)))
        for train, test in splits:
            assert not set(train) & set(test)
            assert len(train) + len(test) == len(self.labels)

    @pytest.mark.parametrize("folds", [2, 3, 5, 7, 10])
    def test_stratified(self, folds):
        labels = np.repeat([0, 1, 2], [13, 29, 8])
        sizes = []
        for _, test in stratified_folds(labels, folds, seed=3):
            counts = np.bincount(labels[test], minlength=3)
            assert np.all(np.abs(counts - np.bincount(labels) / folds) < 1)
            sizes.append(len(test))
        assert max(sizes) - min(sizes) <= 1

    def test_deterministic(self):
        a = stratified_folds(self.labels, 4, seed=5)
        b = stratified_folds(self.labels, 4, seed=5)
        c = stratified_folds(self.labels, 4, seed=6)
        assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))
        assert not all(np.array_equal(x[1], y[1]) for x, y in zip(a, c))

    def test_leave_one_out(self):
        splits = stratified_folds([0, 1] * 5, 10, seed=0)
        assert all(len(test) == 1 for _, test in splits)

    def test_infeasible(self):
        with pytest.raises(ValueError, match="stratify"):
            stratified_folds([0, 1, 1], 4, seed=0)


class TestClassifier:
    def test_get_params_and_clone(self):
        clf = IPoolClassifier(hidden=64, depth="base-0", seed=3)
        params = clf.get_params()
        assert params["hidden"] == 64 and params["depth"] == "base-0"
        assert clone(clf).get_params() == params

    def test_from_config_round_trip(self):
        config = TrainConfig(depth="ipool-2", k=2, s=2, dropout=0.5, seed=4, folds=3)
        assert IPoolClassifier.from_config(config).config == config.replace(folds=10)

    def test_learns_separable_toy(self):
        graphs = toy_graphs(40)
        clf = IPoolClassifier(epochs=40, hidden=8, ratio=0.5, seed=1)
        clf.fit(graphs[:30])
        assert clf.score(graphs[30:]) >= 0.9
        assert clf.history_[-1]["train_loss"] < clf.history_[0]["train_loss"]

    def test_deterministic(self):
        graphs = toy_graphs(10)
        a = IPoolClassifier(epochs=3, hidden=4, dropout=0.5, seed=2).fit(graphs)
        b = IPoolClassifier(epochs=3, hidden=4, dropout=0.5, seed=2).fit(graphs)
        np.testing.assert_array_equal(a.predict_proba(graphs), b.predict_proba(graphs))

    def test_string_classes(self):
        graphs = toy_graphs(10)
        y = ["star" if g.label == 0 else "cycle" for g in graphs]
        clf = IPoolClassifier(epochs=2, hidden=4).fit(graphs, y)
        assert set(clf.predict(graphs)) <= {"star", "cycle"}

    def test_eval_set_recorded(self):
        graphs = toy_graphs(10)
        clf = IPoolClassifier(epochs=2, hidden=4).fit(graphs[:8], eval_set=(graphs[8:], None))
        assert [set(r) for r in clf.history_] == [set(METRIC_COLUMNS) - {"fold"}] * 2
        assert 0 <= clf.history_[-1]["test_acc"] <= 1

    def test_predict_before_fit(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            IPoolClassifier().predict(toy_graphs(2))

    def test_rejects_single_class(self):
        graphs = [g for g in toy_graphs(10) if g.label == 0]
        with pytest.raises(ValueError, match="two classes"):
            IPoolClassifier(epochs=1).fit(graphs)

    def test_rejects_mixed_widths(self):
        graphs = toy_graphs(4) + [Graph.from_edges(2, [(0, 1)], features=np.ones((2, 5)), label=0)]
        with pytest.raises(ValueError, match="feature width"):
            IPoolClassifier(epochs=1).fit(graphs)

    def test_rejects_wrong_width_at_predict(self):
        clf = IPoolClassifier(epochs=1, hidden=4).fit(toy_graphs(4))
        with pytest.raises(ValueError):
            clf.predict([Graph.from_edges(2, [(0, 1)], features=np.ones((2, 5)))])


class TestCrossValidate:
    def test_deterministic_and_checkpointed(self, tmp_path):
        dataset = load_tu_dataset(toy_dataset_dir(tmp_path, 8))
        config = TrainConfig(folds=2, epochs=2, hidden=4, ratio=0.5, seed=1, dropout=0.5)
        a = cross_validate(dataset, config, checkpoint_dir=tmp_path / "ck")
        b = cross_validate(dataset, config)
        np.testing.assert_array_equal(a.accuracies, b.accuracies)
        assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == ["fold00.npz", "fold01.npz"]
        emit_metrics(a, tmp_path / "a.csv")
        emit_metrics(b, tmp_path / "b.csv")
        strip = lambda p: [r[:5] for r in csv.reader(open(p))]
        assert strip(tmp_path / "a.csv") == strip(tmp_path / "b.csv")

    def test_summary(self):
        result = CVResult([FoldResult(0, 0.5, [], None, None), FoldResult(1, 1.0, [], None, None)])
        assert result.mean == 0.75 and result.std == 0.25


class TestEmitMetrics:
    record = {"epoch": 1, "train_loss": 0.5, "train_acc": 0.75, "test_acc": 1.0,
              "wall_seconds": 0.1}

    def read(self, path):
        return list(csv.reader(path.open(encoding="utf-8")))

    def test_one_fold_one_epoch(self, tmp_path):
        result = CVResult([FoldResult(0, 1.0, [self.record], None, None)])
        rows = self.read(emit_metrics(result, tmp_path / "m.csv"))
        assert rows[0] == list(METRIC_COLUMNS)
        assert len(rows) == 3 and rows[1][0] == "0" and rows[2][0] == "summary"

    def test_empty(self, tmp_path):
        rows = self.read(emit_metrics(CVResult(), tmp_path / "m.csv"))
        assert len(rows) == 2 and rows[1][0] == "summary"

    def test_overwrites(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("stale\n" * 50)
        emit_metrics(CVResult(), path)
        assert "stale" not in path.read_text()
        assert [p.name for p in tmp_path.iterdir()] == ["m.csv"]

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            emit_metrics(CVResult(), blocker / "m.csv")


class TestLoader:
    def test_toy(self, tmp_path):
        ds = load_tu_dataset(toy_dataset_dir(tmp_path))
        assert len(ds) == 4 and ds.num_classes == 2
        assert ds.labels.tolist() == [1, 0, 1, 0] and ds.class_values == (-1, 1)
        assert ds.feature_kind is FeatureKind.ONE_HOT_NODE_LABELS and ds.n_features == 4
        assert [g.n_edges for g in ds.graphs] == [3, 2, 3, 2]

    def test_symmetrizes_single_edge(self, tmp_path):
        d = write_tu(tmp_path / "E", "E", {"A": ["1, 2", "2, 1"], "graph_indicator": ["1", "1"],
                                            "graph_labels": ["0"]})
        ds = load_tu_dataset(d)
        assert len(ds) == 1 and ds.graphs[0].edge_list() == [(0, 1, 1.0)]
        assert ds.feature_kind is FeatureKind.CONSTANT_ONE

    def test_one_directional_and_duplicate_edges(self, tmp_path):
        d = write_tu(tmp_path / "E", "E", {"A": ["1, 2", "1, 2", "3, 3"],
                                            "graph_indicator": ["1", "1", "1"],
                                            "graph_labels": ["0"]})
        assert load_tu_dataset(d).graphs[0].edge_list() == [(0, 1, 1.0)]

    def test_attributes_appended(self, tmp_path):
        d = write_tu(tmp_path / "E", "E", {"A": ["1, 2"], "graph_indicator": ["1", "1"],
                                            "graph_labels": ["0"], "node_labels": ["3", "4"],
                                            "node_attributes": ["0.5, 1", "2, 3"]})
        np.testing.assert_array_equal(load_tu_dataset(d).graphs[0].features,
                                      [[1, 0, 0.5, 1], [0, 1, 2, 3]])

    def test_graph_zero_reports_line(self, tmp_path):
        d = write_tu(tmp_path / "E", "E", {"A": ["1, 2"], "graph_indicator": ["1", "0"],
                                            "graph_labels": ["0"]})
        with pytest.raises(DatasetFormatError) as err:
            load_tu_dataset(d)
        assert err.value.line == 2 and "E_graph_indicator.txt:2" in str(err.value)

    def test_node_out_of_range(self, tmp_path):
        d = write_tu(tmp_path / "E", "E", {"A": ["1, 2", "2, 9"], "graph_indicator": ["1", "1"],
                                            "graph_labels": ["0"]})
        with pytest.raises(DatasetFormatError) as err:
            load_tu_dataset(d)
        assert err.value.line == 2

    def test_cross_graph_edge(self, tmp_path):
        d = write_tu(tmp_path / "E", "E", {"A": ["1, 3"], "graph_indicator": ["1", "1", "2"],
                                            "graph_labels": ["0", "1"]})
        with pytest.raises(DatasetFormatError, match="joins graphs"):
            load_tu_dataset(d)

    def test_unparsable(self, tmp_path):
        d = write_tu(tmp_path / "E", "E", {"A": ["1, 2", "x, 1"], "graph_indicator": ["1", "1"],
                                            "graph_labels": ["0"]})
        with pytest.raises(DatasetFormatError, match=":2: cannot parse"):
            load_tu_dataset(d)

    def test_missing_file(self, tmp_path):
        d = write_tu(tmp_path / "E", "E", {"A": ["1, 2"], "graph_indicator": ["1", "1"]})
        with pytest.raises(DatasetFormatError, match="missing"):
            load_tu_dataset(d)

    def test_mutag(self, mutag_dir):
        ds = load_tu_dataset(mutag_dir)
        summary = ds.summary()
        assert summary["graphs"] == 188 and summary["classes"] == 2
        assert summary["class_counts"] == [63, 125]
        assert summary["avg_nodes"] == pytest.approx(17.93, abs=0.005)
        assert summary["avg_edges"] == pytest.approx(19.79, abs=0.005)


class TestConfig:
    def test_defaults_are_valid(self):
        TrainConfig().validate()

    def test_grid_enforced(self):
        assert any("learning_rate" in p for p in TrainConfig(learning_rate=5).problems())
        assert TrainConfig(learning_rate=5).problems(allow_any_hyper=True) == []
        for name, grid in GRIDS.items():
            for value in grid:
                TrainConfig(**{name: value}).validate()

    def test_ranges_enforced_even_with_override(self):
        bad = TrainConfig(ratio=0, folds=1, dropout=1.0, epochs=0)
        assert len(bad.problems(allow_any_hyper=True)) == 4

    def test_depth_table(self):
        assert [(d.n_modules, d.pooled) for d in Depth] == \
            [(1, False), (2, False), (3, False), (2, True), (3, True)]

    def test_load_flat_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("learning_rate: 0.001\ndepth: base-1\nweighted: true\nseed: 3\n")
        config = load_config(path, seed=8)
        assert config.learning_rate == 1e-3 and config.depth is Depth.BASE_1
        assert config.weighted is True and config.seed == 8

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("learning_rte: 0.001\n")
        with pytest.raises(ValueError, match="learning_rte"):
            load_config(path)

    def test_nested_rejected(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("optim:\n  lr: 0.1\n")
        with pytest.raises(ValueError, match="flat"):
            load_config(path)
