import numpy as np
import pytest

from fenni.loss import potential_energy_1d, potential_energy_2d
from fenni.mesh import generate_bar_1d
from fenni.model import FenniModel
from fenni.oracle import Bar1D, Plate2D, bar_bcs, reference_solution_2d
from fenni.quadrature import gauss_1d, gauss_tri

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def bar():
    return Bar1D()


@pytest.fixture(scope="session")
def plate():
    return Plate2D()


@pytest.fixture(scope="session")
def plate_reference(plate, tmp_path_factory):
    return reference_solution_2d(plate, 4, tmp_path_factory.mktemp("refcache"))


def bar_model(problem, n_nodes, mode="fixed", order=1, init=None):
    mesh = generate_bar_1d(problem.L, n_nodes)
    if order == 2:
        mesh = mesh.elevate()
    m = FenniModel(mesh, mode=mode, init=init)
    for tag, v in bar_bcs(problem).items():
        m.set_dirichlet(tag, v)
    return m


def model_on(problem, mesh, mode="fixed"):
    m = FenniModel(mesh, mode=mode)
    for tag, v in problem.bcs.items():
        m.set_dirichlet(tag, v)
    return m


def plate_model(problem, level, mode="fixed"):
    return model_on(problem, problem.mesh(level), mode)


def bar_energy(problem, rule=None):
    rule = rule or gauss_1d(3)
    return lambda m: potential_energy_1d(m, problem.material, problem.body_force, rule)


def plate_energy(problem, n=1):
    rule = gauss_tri(n)
    return lambda m: potential_energy_2d(m, problem.material, rule)


def central_differences(objective, theta, idx, h=1e-6):
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        e = np.zeros_like(theta)
        e[i] = h
        out[k] = (objective.value(theta + e) - objective.value(theta - e)) / (2 * h)
    objective.commit(theta)
    return out
