import re
from collections import OrderedDict

import pytest

_AC = OrderedDict()
_AC_RE = re.compile(r"test_ac(\d+)([a-z]?)_(\w+)")


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    m = _AC_RE.search(report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
    _AC.setdefault(num, []).append((m.group(2) + m.group(3), report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _AC:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_AC):
        parts = _AC[num]
        ok = all(outcome == "passed" for _, outcome, _ in parts)
        names = ", ".join(f"{name}={'pass' if o == 'passed' else o}" for name, o, _ in parts)
        details = " | ".join(d for _, _, d in parts if d)
        tr.write_line(f"AC{num:<2} {'PASS' if ok else 'FAIL'}  [{names}]  {details}")


@pytest.fixture
def detail(record_property):
    """Attach a one-line measurement to the acceptance summary."""
    def _add(text):
        record_property("detail", text)
    return _add
