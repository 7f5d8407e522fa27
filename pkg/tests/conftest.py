import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    prev = _RESULTS.get(num)
    ok = rep.passed if rep.when == "call" else not rep.failed
    if prev is None:
        _RESULTS[num] = [title, ok, rep.duration]
    else:
        prev[1] = prev[1] and ok
        prev[2] += rep.duration


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for num in sorted(_RESULTS):
        title, ok, secs = _RESULTS[num]
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {num:>2}  {title}  ({secs:.1f} s)")
