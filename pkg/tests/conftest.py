import math
import re
from collections import defaultdict

import pytest

from spherecone.cone_surface import appendix_family, bigon_glue, double_triangle, octant_double
from spherecone.geodesics import build_field
from spherecone.voronoi import extract_complex


class Prepared:
    def __init__(self, s):
        self.s = s
        self.f = build_field(s)
        self.cx = extract_complex(s, self.f, check=False)


def example43(eps):
    return double_triangle((math.pi / 3, math.pi / 3 + eps, math.pi / 3 + eps))


@pytest.fixture(scope="session")
def octant():
    return Prepared(octant_double())


@pytest.fixture(scope="session")
def ex43_05():
    return Prepared(example43(0.05))


@pytest.fixture(scope="session")
def ex43_01():
    return Prepared(example43(0.01))


@pytest.fixture(scope="session")
def appendix():
    return Prepared(appendix_family(0, 2, 1e-3))


@pytest.fixture(scope="session")
def bigon():
    return Prepared(bigon_glue(1, 0.5))


# one summary line per acceptance criterion

_AC = defaultdict(list)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    m = re.search(r"::test_ac(\d+)", report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _AC[int(m.group(1))].append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _AC:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(_AC):
        res = _AC[k]
        bad = [name for name, out in res if out != "passed"]
        line = f"AC{k}: {'PASS' if not bad else 'FAIL'} ({len(res) - len(bad)}/{len(res)} checks)"
        if bad:
            line += " failing: " + ", ".join(bad)
        terminalreporter.write_line(line)
