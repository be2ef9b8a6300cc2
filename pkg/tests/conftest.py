import pytest

CRITERIA = {
    1: "scoring matches arbitrary-precision oracle",
    2: "one-nested identity and hand values",
    3: "zero-data neutrality",
    4: "model-space counts",
    5: "window recovery against exact enumeration",
    6: "HAC bounded by exact MAP",
    7: "first-step sampling law",
    8: "ensemble algebra",
    9: "lattice and same-stage probabilities",
    10: "generative recovery on falls-shaped data",
    11: "byte-identical average reports",
}

_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_KEY] = {}
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


@pytest.fixture
def accept(request):
    """Record the measured outcome of the test's acceptance criterion."""
    marker = request.node.get_closest_marker("criterion")
    results = request.config.stash[_KEY]

    def record(ok: bool, detail: str):
        results[marker.args[0]] = (ok, detail)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    results = item.config.stash[_KEY]
    number = marker.args[0]
    ok, detail = results.get(number, (False, "no measurement recorded"))
    if report.failed:
        # an assertion after recording, or an exception before it
        reason = call.excinfo.typename if call.excinfo else "failed"
        results[number] = (False, f"{detail}; test failed: {reason}")
    else:
        results[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[_KEY]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        if number in results:
            ok, detail = results[number]
            terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
        else:
            terminalreporter.write_line(f"criterion {number:2d} NOT RUN: {title}")
