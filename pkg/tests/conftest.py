import numpy as np
import pytest
from hypothesis import settings

from gnmr import FactorPair, GaussianEnsemble, SamplingPattern

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE:
        terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one pass/fail line for the acceptance summary (also printed immediately)."""
    def _report(criterion, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return _report


def random_pair(rng, n1, n2, r, scale=1.0):
    return FactorPair(scale * rng.standard_normal((n1, r)), scale * rng.standard_normal((n2, r)))


def random_pattern(rng, n1, n2, frac):
    mask = rng.random((n1, n2)) < frac
    mask[0, 0] = True
    return SamplingPattern.from_mask(mask)


def make_model(kind, rng, n1, n2, m_factor=3.0, frac=0.6, seed=0):
    if kind == "pattern":
        return random_pattern(rng, n1, n2, frac)
    return GaussianEnsemble(n1, n2, max(1, int(m_factor * (n1 + n2))), seed=seed)
