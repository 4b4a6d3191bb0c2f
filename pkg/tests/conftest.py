import pytest

from railrisk.consequence import ConsequenceModel, apply_calibration
from railrisk.consist import PRESET_ORDER, PRESETS
from railrisk.rates import RateTables
from railrisk.severity import ModelSet

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def rates():
    return RateTables.load()


@pytest.fixture(scope="session")
def models():
    return ModelSet.load()


@pytest.fixture(scope="session")
def consequence(rates, models):
    return apply_calibration(ConsequenceModel.load(), rates, models)


@pytest.fixture(scope="session")
def presets():
    return [PRESETS[c] for c in PRESET_ORDER]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
