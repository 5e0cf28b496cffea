import functools
import warnings

import pytest

from cjcausal.pipeline import MODEL_TERMS, model_spec
from cjcausal.glm import fit
from cjcausal.scm import CodeJamParams, codejam_scm, sample


@functools.lru_cache(maxsize=None)
def codejam_sample(seed: int, n: int = 20000, variant: str = "d2"):
    """Synthetic contest data, cached across test modules."""
    return sample(codejam_scm(CodeJamParams(), variant), n, seed)


@functools.lru_cache(maxsize=None)
def codejam_fits(seed: int, n: int = 20000):
    data = codejam_sample(seed, n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return {label: fit(data, model_spec(label)) for label in MODEL_TERMS}


@pytest.fixture(scope="session")
def d2_data():
    return codejam_sample(0)


@pytest.fixture(scope="session")
def d2_fits():
    return codejam_fits(0)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
