import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): end-to-end acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None and mark.args:
            number, title = mark.args
            _criteria[item.nodeid] = {"number": number, "title": title, "outcome": "NOT RUN", "detail": ""}


def pytest_runtest_logreport(report):
    entry = _criteria.get(report.nodeid)
    if entry is None:
        return
    for key, value in report.user_properties:
        if key == "detail":
            entry["detail"] = value
    if report.failed:
        entry["outcome"] = "FAIL"
    elif report.when == "call":
        entry["outcome"] = "PASS" if report.passed else "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for entry in sorted(_criteria.values(), key=lambda e: e["number"]):
        line = f"criterion {entry['number']:2d} {entry['outcome']:4s} {entry['title']}"
        if entry["detail"]:
            line += f" | {entry['detail']}"
        terminalreporter.write_line(line)


@pytest.fixture
def detail(request):
    """Attach a one-line measurement summary to the acceptance report."""
    def record(text: str) -> None:
        request.node.user_properties.append(("detail", text))
    return record
