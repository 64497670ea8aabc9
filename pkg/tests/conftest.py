import warnings

import numpy as np
import pytest
from hypothesis import settings

from spideradmm.admm import CompositeProblem
from spideradmm.bench import build_fusion_graph, build_graph_problem, synthetic_binary
from spideradmm.linalg import ScaledIdentity
from spideradmm.losses import QuadraticLoss
from spideradmm.regularizers import Zero

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def graph_samples():
    return synthetic_binary(200, 10, seed=0)


@pytest.fixture(scope="session")
def graph_problem(graph_samples):
    return build_graph_problem(graph_samples, build_fusion_graph(graph_samples), 1e-5, 1.0)


def quadratic_problem(n=12, d=4, seed=0):
    """Quadratic loss, constraint ``x - y = 0`` with a free ``y`` block."""
    centers = np.random.default_rng(seed).standard_normal((n, d))
    loss = QuadraticLoss(centers)
    return CompositeProblem(loss, ScaledIdentity(d), [(ScaledIdentity(d, -1.0), Zero())])


@pytest.fixture
def quad_problem():
    return quadratic_problem()


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        yield
