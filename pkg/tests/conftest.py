from __future__ import annotations

import pytest

from commentclf.embedder import toy_encoder
from commentclf.synthetic import ownership_fixture

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when not in ("setup", "call"):
        return
    label = marker.args[0]
    if call.excinfo is None:
        if call.when == "call":
            _CRITERIA.setdefault(label, ("PASS", ""))
        return
    if call.excinfo.errisinstance(pytest.skip.Exception):
        _CRITERIA[label] = ("SKIP", str(call.excinfo.value))
    else:
        _CRITERIA[label] = ("FAIL", call.excinfo.typename)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: int(s.split()[0])):
        status, detail = _CRITERIA[label]
        line = f"[{status}] criterion {label}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)


@pytest.fixture
def fixture_dataset():
    return ownership_fixture()


@pytest.fixture
def toy():
    return toy_encoder(64, 0)
