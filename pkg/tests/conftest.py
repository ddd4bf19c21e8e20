"""Collects outcomes of tests marked ``acceptance(n, title)`` and prints one
line per criterion at the end of the run."""

_results: dict[int, dict] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("acceptance")
        if marker is not None:
            n, title = marker.args
            _results.setdefault(n, {"title": title, "outcomes": []})
            item.user_properties.append(("acceptance", n))


def pytest_runtest_logreport(report):
    n = dict(report.user_properties).get("acceptance")
    if n is None:
        return
    if report.when == "call" or report.outcome in ("failed", "skipped"):
        _results[n]["outcomes"].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        outcomes = _results[n]["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        elif "failed" in outcomes:
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {n:2d}: {status:7s} {_results[n]['title']}")
