import numpy as np
import pytest

from swetc.experiments import preset_dir
from swetc.plant import load_config

# criterion number -> (passed, detail); filled by test_acceptance.py
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def _plant(name):
    return load_config(preset_dir() / "plants" / f"{name}.json")


@pytest.fixture(scope="session")
def ex1():
    return _plant("example1")


@pytest.fixture(scope="session")
def ex2():
    return _plant("example2")


@pytest.fixture(scope="session")
def ex2_iss():
    return _plant("example2-iss")


@pytest.fixture(scope="session")
def ex3():
    return _plant("example3")


@pytest.fixture(scope="session")
def ex3_hinf():
    return _plant("example3-hinf")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
