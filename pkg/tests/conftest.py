_acceptance = {}


def pytest_collection_modifyitems(items):
    for item in items:
        if item.get_closest_marker("acceptance") is not None:
            doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
            _acceptance[item.nodeid] = [doc, "NOT RUN"]


def pytest_runtest_logreport(report):
    if report.nodeid not in _acceptance:
        return
    entry = _acceptance[report.nodeid]
    if report.when == "call":
        entry[1] = "PASS" if report.passed else "FAIL"
    elif report.failed:
        entry[1] = "ERROR"


def pytest_terminal_summary(terminalreporter):
    ran = {k: v for k, v in _acceptance.items() if v[1] != "NOT RUN"}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for doc, status in ran.values():
        terminalreporter.write_line(f"{status:5}  {doc}")
