import math
from pathlib import Path

import pytest

from haffsim.geometry import Scatterer, build_table, flagship_table
from haffsim.models import RestitutionModel

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# filled by the acceptance tests, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def flagship():
    return flagship_table()


@pytest.fixture(scope="session")
def quarter_disk():
    """One r=0.25 disk; it has open corridors, so the horizon is left unchecked."""
    return build_table([Scatterer((0.0, 0.0), 0.25)], certify=False)


@pytest.fixture
def rational_model():
    return RestitutionModel.power_law(0.01, "rational")


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIGS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def cos_cdf(phi):
    return 0.5 * (1.0 + math.sin(phi))
