from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from ipool.graph import Graph

MUTAG_DIR = Path(__file__).resolve().parent.parent / "data" / "MUTAG"


def triangle(features=None):
    return Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)], features=features)


def path3(features=None):
    return Graph.from_edges(3, [(0, 1), (1, 2)], features=features)


@pytest.fixture
def mutag_dir():
    if not MUTAG_DIR.is_dir():
        pytest.skip("MUTAG data directory missing")
    return MUTAG_DIR


@st.composite
def graphs(draw, max_nodes=12, max_dim=4, min_nodes=1, weighted=False):
    """Random undirected graphs with finite features."""
    n = draw(st.integers(min_nodes, max_nodes))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    edges = [p for p, keep in zip(pairs, mask) if keep]
    weights = None
    if weighted:
        weights = draw(st.lists(st.floats(0.1, 5.0), min_size=len(edges), max_size=len(edges)))
    d = draw(st.integers(1, max_dim))
    seed = draw(st.integers(0, 2**32 - 1))
    features = np.random.default_rng(seed).normal(size=(n, d))
    return Graph.from_edges(n, edges, features=features, weights=weights)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def report(number, passed, message):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {message}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
