import numpy as np
import pytest

from gkedm.graph import CsrGraph


def random_graph(rng, n, p=0.4, symmetric=True):
    upper = np.triu(rng.random((n, n)) < p, 1)
    adj = upper | upper.T if symmetric else (rng.random((n, n)) < p) & ~np.eye(n, dtype=bool)
    return CsrGraph.from_dense(adj.astype(float), symmetric=symmetric)


def path_graph(n):
    edges = [(i, i + 1) for i in range(n - 1)] + [(i + 1, i) for i in range(n - 1)]
    return CsrGraph.from_edges(n, edges, symmetric=True)


def complete_graph(n):
    return CsrGraph.from_dense(np.ones((n, n)) - np.eye(n), symmetric=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
