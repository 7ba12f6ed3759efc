import pytest

from kclnet.netlist import parse_netlist

SERIES = "V1 vdd 0 1.8\nR1 vdd mid 1k\nR2 mid 0 2k\n"
PARALLEL = "V1 vdd 0 1.8\nR1 vdd 0 1k\nR2 vdd 0 2k\n"


@pytest.fixture
def series():
    return parse_netlist(SERIES, "series")


@pytest.fixture
def parallel():
    return parse_netlist(PARALLEL, "parallel")


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
