import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, text = mark.args
        entry = item.config.stash[_RESULTS].setdefault(number, [text, []])
        entry[1].append((item.name, report.outcome))


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        text, runs = results[number]
        ok = all(o == "passed" for _, o in runs)
        failed = [n for n, o in runs if o != "passed"]
        tail = f"  (failed: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {text}{tail}")
