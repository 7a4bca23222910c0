import numpy as np
import pytest

from bicens.sieve_model import SieveSpec
from bicens.simulation import SimConfig, generate_dataset, replication_rng
from bicens.spline_basis import KnotVector

# One line per acceptance criterion, printed after the test session.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cubic_knots():
    return KnotVector(4, [2.5], 0.0, 5.0)


@pytest.fixture
def small_spec():
    """Cubic I-splines with one interior knot per axis (p = q = 5, D = 35)."""
    return SieveSpec(KnotVector(4, [2.0], 0.0, 5.0), KnotVector(4, [2.5], 0.0, 5.0))


@pytest.fixture
def sim_data():
    cfg = SimConfig(n=20, tau=0.25)
    data, _ = generate_dataset(cfg, replication_rng(99, 0))
    return data


def random_interior_theta(rng, dim, total=0.9):
    """Dirichlet point scaled to ``total``, bounded away from every face."""
    w = rng.dirichlet(np.full(dim + 1, 2.0))[:dim]
    return total * (0.05 / dim + 0.95 * w)
