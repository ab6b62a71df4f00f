import numpy as np
import pytest

from mdca.tensor import DictionaryLayer


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def dense_layer(D):
    """Wrap a (dim, atoms) matrix as a 1x1 convolution acting on a 1x1 image."""
    return DictionaryLayer(np.asarray(D).T[:, None, None, :].copy(), 1)


def as_image(v):
    return np.asarray(v)[None, None, :]


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
