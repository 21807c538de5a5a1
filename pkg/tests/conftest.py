import pytest

_results: dict[int, tuple[str, bool, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    number, label = marker.args
    failed = report.failed or (report.when == "call" and not report.passed)
    if report.when == "call" or failed:
        prev = _results.get(number)
        ok = not failed and (prev is None or prev[1])
        _results[number] = (label, ok, (prev[2] if prev else 0.0) + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        label, ok, seconds = _results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {label}  ({seconds:.2f}s)")
