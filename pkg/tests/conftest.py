import json
import sys
from pathlib import Path

import numpy as np
import pytest

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.fixture(scope="session")
def golden():
    return json.loads((HERE / "golden" / "golden.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    num, title = mark.args
    entry = _CRITERIA.setdefault(num, {"title": title, "passed": True, "tests": 0})
    if rep.when == "call":
        entry["tests"] += 1
    if rep.failed:
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        e = _CRITERIA[num]
        status = "PASS" if e["passed"] and e["tests"] else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {e['title']} ({e['tests']} checks)")
