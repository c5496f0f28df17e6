import numpy as np
import pytest

from pfn.engine import default_dtype

# lines recorded by test_acceptance, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def runs_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("PFN_RUNS_DIR", str(tmp_path / "runs"))
    return tmp_path / "runs"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
