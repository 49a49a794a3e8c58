import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_criteria = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    if call.excinfo is None:
        status = "PASS"
    elif call.excinfo.errisinstance(AssertionError):
        status = "FAIL"
    else:
        status = "ERROR"
    measured = dict(item.user_properties).get("measured", "")
    _criteria[number] = (status, title, measured)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title, measured = _criteria[number]
        line = f"C{number:<2d} {status:5s} {title}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)
