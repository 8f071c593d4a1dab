import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ocsens.problem_io import load_problem

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
PROBLEMS = os.path.join(ROOT, "problems")

settings.register_profile("ocsens", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ocsens")

ACCEPTANCE = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {title}"
    if detail:
        line += f" ({detail})"
    print(line)


@pytest.fixture
def accept():
    return record


@pytest.fixture(scope="session")
def p1_path():
    return os.path.join(PROBLEMS, "p1.json")


@pytest.fixture(scope="session")
def p2_path():
    return os.path.join(PROBLEMS, "p2.json")


@pytest.fixture(scope="session")
def p1(p1_path):
    return load_problem(p1_path)


@pytest.fixture(scope="session")
def p2(p2_path):
    return load_problem(p2_path)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'} - {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
