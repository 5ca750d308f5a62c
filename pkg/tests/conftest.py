import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vmdeploy import Scenario  # noqa: E402


@pytest.fixture
def small_scenario():
    """Four nodes, two 1 GB images; quick to run."""
    return Scenario.from_dict({
        "name": "small", "seed": 7,
        "topology": {"nodes": 4},
        "images": {"count": 2, "size_gb": 1},
        "workload": {"kind": "batch", "row": "2x8"},
    })


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_log.LINES):
            terminalreporter.write_line(line)
