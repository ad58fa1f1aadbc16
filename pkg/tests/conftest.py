import numpy as np
import pytest
from numpy.polynomial import Polynomial

from dynfrac import at1_law, at2_law, generate_rect_mesh, linear_damage_law, mode_sensitive_law
from dynfrac.mesh import Mesh2D

# filled by tests/test_acceptance.py, one entry per criterion
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def unit_triangle():
    return Mesh2D([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]],
                  ("bottom", "hyp", "left"))


@pytest.fixture
def square2():
    """Unit square, two triangles."""
    return generate_rect_mesh(1, 1, 1.0, 1.0)


@pytest.fixture
def mesh8():
    """2 x 2 diagonal mesh: 8 triangles, 9 nodes."""
    return generate_rect_mesh(2, 2, 1.0, 1.0)


def all_laws():
    """One instance of every constitutive variant."""
    return {
        "at2": at2_law(1.3, 0.7, 0.4, 0.1, eps0=1.0),
        "at1": at1_law(1.3, 0.7, 0.4, 0.1),
        "linear-damage": linear_damage_law(1.1, 0.6, 0.2, residual=0.05, phi=(0.0, 0.3, -0.1)),
        "mode-sensitive": mode_sensitive_law(Polynomial([0.1, 0.5, 0.8]), Polynomial([0.05, 0.2, 0.9]),
                                             0.3, eps_reg=0.01),
    }
