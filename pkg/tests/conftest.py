"""Per-criterion PASS/FAIL report for the acceptance suite."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if hasattr(rep, "wasxfail"):
            status = "FAIL" if rep.skipped else "PASS"
            note = "known failure" if rep.skipped else "unexpectedly passed"
        else:
            status = "PASS" if rep.passed else "FAIL"
            note = ""
        detail = getattr(item, "criterion_detail", "")
        _RESULTS[number] = (status, title, "; ".join(s for s in (detail, note) if s))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title, detail = _RESULTS[number]
        line = f"{status}  criterion {number:>2}: {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
    n_pass = sum(r[0] == "PASS" for r in _RESULTS.values())
    terminalreporter.write_line(f"{n_pass}/{len(_RESULTS)} criteria passed")


@pytest.fixture
def report(request):
    """Attach a short measurement string to the criterion line."""

    def _set(text):
        request.node.criterion_detail = text

    return _set
