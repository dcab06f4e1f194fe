import math
import os
from pathlib import Path

import pytest

from vtfdtd.experiments import AREA_DIR_ENV, default_area_dir
from vtfdtd.geometry import AreaFunction

LOW_RATE = 44_100 * 15
LOW_DS = math.sqrt(2.0) * 350.0 / LOW_RATE  # ~0.748 mm


@pytest.fixture
def uniform_tube():
    return AreaFunction.uniform(0.175, 0.02)


@pytest.fixture
def two_section():
    return AreaFunction.from_arrays([0.05, 0.05], [1e-4, 4e-4], name="step")


def vowel_area_file(vowel: str) -> Path:
    return Path(os.environ.get(AREA_DIR_ENV) or default_area_dir()) / f"{vowel}.csv"


_criteria: dict[int, tuple[str, list[str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, summary = mark.args
    _, results = _criteria.setdefault(number, (summary, []))
    results.append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        summary, results = _criteria[number]
        verdict = "PASS" if results and all(r == "passed" for r in results) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {summary}")
