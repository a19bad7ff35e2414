"""Per-criterion PASS/FAIL report for the acceptance suite."""
import pytest

CRITERIA = {
    1: "randomized t-SVT matches exact t-SVT",
    2: "CG Z-update matches dense Kronecker solve",
    3: "graph smoothing closed form matches dense solve",
    4: "structural fidelity of the graph operators",
    5: "end-to-end synthetic kriging beats both comparators",
    6: "invariant suite",
    7: "z-update scaling in the number of locations",
    8: "full-dataset evaluation (optional)",
}

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _outcomes.get(crit, [])
        prev.append(report.outcome)
        _outcomes[crit] = prev


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            continue
        if "failed" in results:
            status = "FAIL"
        elif all(r == "skipped" for r in results):
            status = "SKIP"
        else:
            skipped = results.count("skipped")
            status = "PASS" if not skipped else f"PASS ({skipped} part(s) skipped)"
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")
