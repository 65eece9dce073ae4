import warnings

import numpy as np
import pytest

from stagekde import MixtureDensity

# lines printed by the acceptance module, echoed once more in the terminal summary
ACCEPTANCE_LINES = []


def pytest_configure(config):
    warnings.filterwarnings("ignore", message="bandwidth ladder formulas")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_mixture(rng, d, k=None):
    k = k or int(rng.integers(1, 4))
    w = rng.dirichlet(np.ones(k))
    means = rng.normal(0.0, 1.5, size=(k, d))
    covs = []
    for _ in range(k):
        A = rng.normal(size=(d, d)) * 0.4
        covs.append(A @ A.T + np.diag(rng.uniform(0.2, 1.0, d)))
    # renormalise exactly
    w = w / w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return MixtureDensity(w, means, np.array(covs))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
