import pytest

_results: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            number, title = marker.args
            _results.setdefault(number, {"title": title, "outcomes": [], "notes": []})


@pytest.fixture
def report(request):
    """Attach measured values to the criterion line printed at the end of the run."""
    marker = request.node.get_closest_marker("criterion")

    def note(text: str) -> None:
        if marker is not None:
            _results[marker.args[0]]["notes"].append(text)

    return note


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker_args = getattr(report, "_criterion", None)
    if marker_args is not None:
        _results[marker_args]["outcomes"].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep._criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        outcomes = entry["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        elif any(o == "failed" for o in outcomes):
            status = "FAIL"
        else:
            status = "SKIP"
        line = f"criterion {number:2d} {status:7s} {entry['title']}"
        if entry["notes"]:
            line += " | " + "; ".join(entry["notes"])
        terminalreporter.write_line(line)
