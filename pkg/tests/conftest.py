import math
import sys

import pytest

from cuspscatter.geodesics import enumerate_all, enumerate_scattered
from cuspscatter.surfaces import builtin_surface, two_cusp_height

ELL = 0.5


@pytest.fixture(scope="session")
def pentagon2():
    return builtin_surface("pentagon2", ell=ELL)


@pytest.fixture(scope="session")
def pentagon1():
    return builtin_surface("pentagon1")


@pytest.fixture(scope="session")
def y0():
    # closed form of the top-vertex height, evaluated independently
    return 0.5 / (math.sqrt(2.0) + math.sqrt(1.0 + math.exp(-2.0 * ELL)))


@pytest.fixture(scope="session")
def two_cusp_records(pentagon2):
    return enumerate_all(pentagon2, 8.0)


@pytest.fixture(scope="session")
def one_cusp_records(pentagon1):
    return enumerate_scattered(pentagon1, 1, 1, 8.0)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
