import os

import numpy as np
import pytest

from supcosine.graph import Graph

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MUTAG_DIR = os.path.join(ROOT, "data", "MUTAG")
PTC_DIR = os.path.join(ROOT, "data", "PTC_MR")


def path_graph(n, d=1, label=0):
    return Graph(n, frozenset((i, i + 1) for i in range(n - 1)), np.ones((n, d)), label)


def random_graph(n, p, rng, d=3, label=0):
    edges = {(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p}
    return Graph(n, frozenset(edges), rng.normal(size=(n, d)), label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mutag():
    if not os.path.isdir(MUTAG_DIR):
        pytest.skip("MUTAG files not present")
    from supcosine.graph import load_tu_dataset
    return load_tu_dataset(MUTAG_DIR, "MUTAG")


CACHE_DIR = os.path.join(ROOT, ".supcosine-cache")


@pytest.fixture(scope="session")
def mutag_pre(mutag):
    """MUTAG with default preprocessing (cached on disk across sessions)."""
    from supcosine.pipeline import RunConfig, preprocess
    return preprocess(mutag, RunConfig(cache_dir=CACHE_DIR))


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[n])
