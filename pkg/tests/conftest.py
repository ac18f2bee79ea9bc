import pytest

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    failed_setup = rep.when == "setup" and rep.outcome != "passed"
    if rep.when == "call" or failed_setup:
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _CRITERIA.append((marker.args[0], marker.args[1], rep.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome, detail in sorted(_CRITERIA):
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {number} {status} {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
