"""Collects acceptance verdicts and prints them as one line per criterion at the end of the run."""
import pytest

VERDICTS = {}


@pytest.fixture
def verdict(request):
    """Call ``verdict(ok, detail)`` once; a test that raises first is recorded as FAIL."""
    marker = request.node.get_closest_marker("criterion")
    assert marker is not None, "acceptance tests need @pytest.mark.criterion(n, title)"
    num, title = marker.args
    rec = {}

    def record(ok, detail):
        rec["ok"] = bool(ok)
        rec["detail"] = detail
        print(f"{'PASS' if ok else 'FAIL'} C{num} {title}: {detail}")
        assert ok, detail

    yield record
    VERDICTS[num] = (title, rec.get("ok", False), rec.get("detail", "did not finish (see traceback)"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(VERDICTS):
        title, ok, detail = VERDICTS[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} C{num} {title}: {detail}")
