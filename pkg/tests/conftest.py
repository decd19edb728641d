import numpy as np
import pytest

from activeindex.extractor import init_weights
from activeindex.imagelab import generate_corpus


@pytest.fixture(scope="session")
def weights():
    return init_weights(0)


@pytest.fixture(scope="session")
def small_images():
    return generate_corpus(3, 12, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance criteria summary ----------------------------------------------

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, ok, detail)`` records the outcome of acceptance criterion ``n``."""

    def record(n: int, ok: bool, detail: str) -> bool:
        _CRITERIA[n] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
