import math

import numpy as np
import pytest

from delayrobust.margin import scalar_plant


def bound_oracle(p):
    """Scalar margin written straight from the closed form, no log1p."""
    return math.log(2 * p * math.e / (2 * p * math.e - p + 1)) / (p - 1)


def random_hurwitz(rng, n, shift=0.2):
    """Random real matrix shifted so its spectral abscissa is ``-shift``."""
    M = rng.standard_normal((n, n))
    alpha = np.max(np.linalg.eigvals(M).real)
    return M - (alpha + shift) * np.eye(n)


@pytest.fixture
def plant2():
    return scalar_plant(2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def report(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
