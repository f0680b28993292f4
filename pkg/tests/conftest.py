import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _isolated_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("QDTRADEOFF_OUT", str(tmp_path / "runs"))


def pytest_terminal_summary(terminalreporter):
    from helpers import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
