import numpy as np
import pytest

from swimcycle.body import BodyState, fish_template
from swimcycle.coupling import SystemState, rest_state
from swimcycle.fluid import FluidGrid


@pytest.fixture(scope="session")
def small_grid():
    return FluidGrid(32, 32, 2.0, 2.0, mu=0.02)


@pytest.fixture(scope="session")
def small_mesh():
    return fish_template(n_nodes=12, center=(1.0, 1.0))


def perturbed(grid, mesh, seed=0, amplitude=0.01):
    rng = np.random.default_rng(seed)
    st = rest_state(grid, mesh)
    X = mesh.nodes + amplitude * rng.normal(size=mesh.nodes.shape)
    return SystemState(BodyState(X, np.zeros_like(X)), st.fluid, 0.0)


# acceptance criteria report: one line per criterion, printed after the run
ACCEPTANCE = {}


def record(number, name, passed, detail):
    ACCEPTANCE[number] = (name, bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number} {name}: {detail}")
