from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from landau_lab.foundation import load_config
from landau_lab.sources import InitialData

GOLDEN_PATH = Path(__file__).parent / "goldens.json"


@pytest.fixture(scope="session")
def goldens() -> dict:
    return json.loads(GOLDEN_PATH.read_text())


@pytest.fixture(scope="session")
def cfg():
    return load_config("default")


@pytest.fixture(scope="session")
def gaussian():
    return InitialData.builtin("gaussian-odd", 1e-3)


@pytest.fixture(scope="session")
def short_history(cfg, gaussian):
    """Linear history on [0, 12] shared by the field-dependent tests."""
    from landau_lab.volterra import solve_linear
    return solve_linear(gaussian, cfg, T=12.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
