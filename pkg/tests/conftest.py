import pytest

from pce.compiler import compile_rules
from pce.rules import parse_rules

SAMPLE_POLICY = """\
# source-port / destination-port columns follow the DSL order
allow tcp 167.205.3.11 167.205.65.32 25    8080
deny  tcp 192.168.*.*  *.*.*.*       80    *
allow udp 167.205.65.5 *.*.*.*       *     *
allow tcp *.*.*.*      134.25.5.2    >1023 80
"""


@pytest.fixture(scope="session")
def sample_rules():
    return parse_rules(SAMPLE_POLICY)


@pytest.fixture(scope="session")
def sample_image(sample_rules):
    return compile_rules(sample_rules)


# acceptance criteria report -------------------------------------------------

ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    ACCEPTANCE_RESULTS[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{outcome}  {name}")
