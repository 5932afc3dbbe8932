import pytest

from recstore import Engine


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    results = item.config._criteria
    failed = report.failed or (report.when == "setup" and report.skipped)
    if report.when == "call" or failed:
        results[number] = (title, "FAIL" if failed or report.skipped else "PASS")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config._criteria
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, verdict = results[number]
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {title}")


@pytest.fixture
def engine():
    e = Engine()
    yield e
    e.close()
