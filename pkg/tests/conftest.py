import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from apf.formulation import TestInstance  # noqa: E402

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA


def step_curve(id: str, z, values) -> TestInstance:
    return TestInstance.from_arrays(id, z, values)


def flat_curve(id: str, level: float, z=(0.9, 1.0, 1.1)) -> TestInstance:
    return TestInstance.from_arrays(id, z, [level] * len(z))


# Acceptance criteria record one line each; they are echoed in the terminal summary.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
