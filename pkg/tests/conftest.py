import re

_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        label = props.get("criterion") or report.nodeid.split("::")[-1]
        _criteria[label] = (report.outcome.upper(), props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    def order(label):
        m = re.match(r"(\d+)", label)
        return (int(m.group(1)) if m else 99, label)
    for label in sorted(_criteria, key=order):
        outcome, detail = _criteria[label]
        verdict = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"criterion {label}: {verdict}  {detail}".rstrip())
