import copy
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from irmeld import fixtures  # noqa: E402
from irmeld.regions import find_regions  # noqa: E402

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def load():
    """Fresh parsed copy of a bundled fixture."""
    return fixtures.load


def region_at(fn, head):
    for r in find_regions(fn):
        if r.head_block == head:
            return r
    raise LookupError(head)


@pytest.fixture
def fresh():
    return copy.deepcopy
