import math

import numpy as np
import pytest

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def dkw_radius(n: int, confidence: float = 0.99) -> float:
    """Half-width of the Dvoretzky-Kiefer-Wolfowitz band for an n-sample ECDF."""
    return math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * n))


def ks_distance(sample, cdf) -> float:
    """Two-sided Kolmogorov-Smirnov statistic of ``sample`` against a vectorized CDF."""
    x = np.sort(np.asarray(sample, float))
    F = cdf(x)
    n = x.size
    hi = np.arange(1, n + 1) / n - F
    lo = F - np.arange(0, n) / n
    return float(max(hi.max(), lo.max()))


def ecdf_deviation(sample, points, values) -> float:
    """max |ECDF(s) - values(s)| on the given points."""
    x = np.sort(np.asarray(sample, float))
    emp = np.searchsorted(x, points, side="right") / x.size
    return float(np.max(np.abs(emp - values)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
