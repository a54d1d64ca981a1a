import pytest

_OUTCOMES: dict[str, list[bool]] = {}
_DETAILS: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.fixture
def report(request):
    """``report("text")`` attaches a measurement to the test's criterion line."""
    marker = request.node.get_closest_marker("criterion")

    def add(text: str) -> None:
        if marker is not None:
            _DETAILS[marker.args[0]] = text
        print(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _OUTCOMES.setdefault(marker.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for name, results in _OUTCOMES.items():
        status = "PASS" if all(results) else "FAIL"
        detail = _DETAILS.get(name, "")
        terminalreporter.write_line(f"[{status}] {name}" + (f": {detail}" if detail else ""))
