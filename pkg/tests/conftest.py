from fractions import Fraction

import pytest

from afem.forest import load_initial, FIXTURES
from afem.triangulation import Triangulation


@pytest.fixture
def unit2():
    return load_initial(FIXTURES["unit2"])


@pytest.fixture
def lshape():
    return load_initial(FIXTURES["lshape"])


def vid(forest, x, y):
    """Vertex id at exact coordinates; fails loudly when not materialised."""
    v = forest.vertex_id(Fraction(x), Fraction(y))
    assert v is not None, f"no vertex at ({x}, {y})"
    return v


def level(forest, k):
    return Triangulation.uniform(forest, k)


# ------------------------------------------------------- acceptance summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":").rstrip("ab"))):
            terminalreporter.write_line(line)
