from fractions import Fraction
from pathlib import Path

import pytest

from abctorus.conjugation import build_stages
from abctorus.scheduler import derive_stage

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture(scope="session")
def toy_stage():
    return derive_stage(1, 2, 4, 2, 1, Fraction(3, 8))


@pytest.fixture(scope="session")
def toy(toy_stage):
    return build_stages([toy_stage])[0]


@pytest.fixture(scope="session")
def k2q1_stage():
    return derive_stage(1, 2, 4, 1, 0, Fraction(3, 8))


@pytest.fixture(scope="session")
def k2q1(k2q1_stage):
    return build_stages([k2q1_stage])[0]


# one verdict line per acceptance criterion, printed after the run
CRITERIA: dict = {}


@pytest.fixture
def criterion(request):
    number = request.node.get_closest_marker("criterion").args[0]
    CRITERIA[number] = (request.node.name, "FAIL")

    def passed(detail=""):
        CRITERIA[number] = (request.node.name, "PASS" + (f" ({detail})" if detail else ""))
    return passed


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        name, verdict = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict.split(' ')[0]:4s} {name} "
                                    f"{verdict[5:] if verdict.startswith('PASS') else ''}".rstrip())
