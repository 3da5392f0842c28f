_outcomes: dict[str, str] = {}
_labels: dict[str, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark and mark.args:
            _labels[item.nodeid] = mark.args[0]


def pytest_runtest_logreport(report):
    label = _labels.get(report.nodeid)
    if label is None:
        return
    if report.failed:
        _outcomes[label] = "FAIL"
    elif report.skipped and label not in _outcomes:
        _outcomes[label] = "XFAIL" if hasattr(report, "wasxfail") else "SKIP"
    elif report.when == "call" and report.passed and label not in _outcomes:
        _outcomes[label] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for label in dict.fromkeys(_labels.values()):
        if label in _outcomes:
            terminalreporter.write_line(f"{_outcomes[label]:<5}  {label}")
