import pytest

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[key] = ("PASS" if report.passed else "FAIL", props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        verdict, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {verdict}  {detail}")


@pytest.fixture
def criterion(record_property):
    """``criterion(n)`` tags the test; ``criterion.detail(text)`` adds the summary text."""

    class _Tag:
        def __call__(self, n):
            record_property("criterion", int(n))

        def detail(self, text):
            record_property("detail", text)

    return _Tag()
