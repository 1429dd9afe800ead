import numpy as np
import pytest

from conftest import bar_energy, bar_model, plate_energy, plate_model
from fenni.errors import ConfigError
from fenni.loss import (
    Material1D,
    Material2D,
    element_stress,
    potential_energy_1d,
    potential_energy_2d,
    residual_loss_1d,
    stress_from_gradient,
    stress_strain_2d,
    von_mises,
    weak_loss_1d,
)
from fenni.mesh import Mesh, generate_bar_1d
from fenni.model import FenniModel
from fenni.oracle import assemble_1d, assemble_2d, bar_bcs, fem_solve_1d, fem_solve_2d
from fenni.quadrature import gauss_1d, gauss_tri
from fenni.train import Objective

MAT = Material1D()


def zero_force(x):
    return x * 0.0


def unit_square(n=4):
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    coords = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    conn = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            conn += [(a, b, c), (a, c, d)]
    return Mesh(coords, conn)


def gradient(model, loss_fn):
    obj = Objective([model], loss_fn)
    return obj.value_and_grad(obj.vector())


def test_materials_validate():
    with pytest.raises(ConfigError):
        Material1D(E=0.0)
    with pytest.raises(ConfigError):
        Material2D(lam=-1.0, mu=1.0)


def test_energy_1d_zero_and_ramp(bar):
    m = FenniModel(generate_bar_1d(bar.L, 6), init=0.0)
    assert float(potential_energy_1d(m, MAT, zero_force, gauss_1d(2))) == 0.0
    m.params.U[:, 0] = bar.u_L * m.params.X[:, 0] / bar.L
    expected = 0.5 * MAT.A * MAT.E * (bar.u_L / bar.L) ** 2 * bar.L
    assert float(potential_energy_1d(m, MAT, zero_force, gauss_1d(2))) == pytest.approx(expected, rel=1e-12)


def test_energy_1d_gradient_is_assembled_residual(bar):
    mesh = generate_bar_1d(bar.L, 3)
    m = FenniModel(mesh)
    m.params.U[:, 0] = [0.3, -0.1, 0.2]
    rule = gauss_1d(3)
    _, g = gradient(m, lambda mm: potential_energy_1d(mm, MAT, bar.body_force, rule))
    system = assemble_1d(mesh, MAT, bar.body_force, rule)
    expected = system.residual(m.params.U[:, 0])
    assert np.allclose(g, expected, rtol=0, atol=1e-12 * np.abs(expected).max())


def test_energy_1d_stationary_at_fem_solution(bar):
    m = bar_model(bar, 41)
    u = fem_solve_1d(m.mesh, MAT, bar.body_force, bar_bcs(bar))
    m.params.U[:, 0] = u
    f, g = gradient(m, bar_energy(bar))
    assert np.max(np.abs(g)) < 1e-10
    system = assemble_1d(m.mesh, MAT, bar.body_force, gauss_1d(3))
    assert f == pytest.approx(system.energy(u), rel=1e-12)


def test_energy_2d_zero_translation_rotation(plate):
    m = plate_model(plate, 0)
    rule = gauss_tri(1)
    m.params.U[:] = 0.0
    assert float(potential_energy_2d(m, plate.material, rule)) == 0.0
    m.params.U[:] = [0.3, -0.7]
    assert abs(float(potential_energy_2d(m, plate.material, rule))) < 1e-12
    # linearised rigid rotation u = w (-y, x) has zero strain
    w = 1e-2
    X = m.params.X
    m.params.U[:] = np.column_stack([-w * X[:, 1], w * X[:, 0]])
    assert abs(float(potential_energy_2d(m, plate.material, rule))) < 1e-12


def test_energy_2d_uniaxial():
    mat = Material2D()
    m = FenniModel(unit_square(), init=0.0)
    alpha = 0.01
    m.params.U[:, 0] = alpha * m.params.X[:, 0]
    got = float(potential_energy_2d(m, mat, gauss_tri(3)))
    assert got == pytest.approx(0.5 * (mat.lam + 2 * mat.mu) * alpha**2 * 1.0, rel=1e-12)


def test_energy_2d_gradient_is_assembled_residual(plate):
    mesh = plate.mesh(0)
    m = FenniModel(mesh)
    m.params.U[:] = np.random.default_rng(3).normal(size=m.params.U.shape)
    _, g = gradient(m, plate_energy(plate))
    expected = assemble_2d(mesh, plate.material).residual(m.params.U.ravel())
    assert np.allclose(g, expected, rtol=0, atol=1e-10 * np.abs(expected).max())


def test_energy_2d_stationary_and_consistent(plate):
    m = plate_model(plate, 1)
    U = fem_solve_2d(m.mesh, plate.material, plate.bcs)
    m.params.U[:] = U
    f, g = gradient(m, plate_energy(plate))
    assert np.max(np.abs(g)) < 1e-10
    assert f == pytest.approx(assemble_2d(m.mesh, plate.material).energy(U.ravel()), rel=1e-12)


def test_weak_loss_zero_at_fem_solution(bar):
    m = bar_model(bar, 41)
    rule = gauss_1d(3)
    m.params.U[:, 0] = fem_solve_1d(m.mesh, MAT, bar.body_force, bar_bcs(bar), rule)
    load = assemble_1d(m.mesh, MAT, bar.body_force, rule).load
    val = float(weak_loss_1d(m, MAT, bar.body_force, rule))
    assert val < 1e-18
    assert val / float(load @ load) < 1e-16


def test_weak_loss_pure_load(bar):
    m = bar_model(bar, 11)
    m.params.U[:] = 0.0
    assert float(weak_loss_1d(m, MAT, bar.body_force, gauss_1d(3))) > 0.0


def test_weak_loss_single_test_function(bar):
    # one interior node: J(u1) = (k (2 u1 - u0 - u2) - F1)^2 with k = AE / h
    m = bar_model(bar, 3)
    rule = gauss_1d(3)
    sysm = assemble_1d(m.mesh, MAT, bar.body_force, rule)
    k = MAT.AE / (bar.L / 2)
    F1 = sysm.load[1]
    u_star = fem_solve_1d(m.mesh, MAT, bar.body_force, bar_bcs(bar), rule)[1]
    for u1 in (u_star, u_star + 1e-3, u_star - 2e-3):
        m.params.U[1, 0] = u1
        expected = (k * (2 * u1 - 0.0 - bar.u_L) - F1) ** 2
        assert float(weak_loss_1d(m, MAT, bar.body_force, rule)) == pytest.approx(expected, rel=1e-10, abs=1e-24)
    assert u_star == pytest.approx((F1 / k + bar.u_L) / 2, rel=1e-12)


def residual_models(L=2.0, n=5):
    mesh = generate_bar_1d(L, n)
    return FenniModel(mesh.elevate(), init=0.0), FenniModel(mesh, init=0.0)


def test_residual_loss_manufactured():
    # u = -b0 x^2 / (2 AE) + c x solves AE u'' + b0 = 0 and lies in the quadratic space
    b0, c = 3.0, 0.2
    mu, ms = residual_models()
    force = lambda x: b0 + 0.0 * x
    mu.params.U[:, 0] = -b0 * mu.params.X[:, 0] ** 2 / (2 * MAT.AE) + c * mu.params.X[:, 0]
    ms.params.U[:, 0] = -b0 * ms.params.X[:, 0] / MAT.AE + c
    pts = np.linspace(0.0, 2.0, 57)
    assert float(residual_loss_1d(mu, ms, MAT, force, pts)) < 1e-20


def test_residual_loss_equilibrium_only():
    mu, ms = residual_models()
    mu.params.U[:, 0] = 0.5 * mu.params.X[:, 0] ** 2
    ms.params.U[:, 0] = ms.params.X[:, 0]
    force = lambda x: 1.0 + x
    pts = np.linspace(0.1, 1.9, 40)
    got = float(residual_loss_1d(mu, ms, MAT, force, pts))
    expected = 2.0 * np.mean((MAT.AE * 1.0 + force(pts)) ** 2)
    assert got == pytest.approx(expected, rel=1e-12)


def test_residual_loss_zero_models():
    mu, ms = residual_models(L=3.0)
    force = lambda x: np.sin(x) + 2.0
    pts = np.linspace(0.0, 3.0, 31)
    got = float(residual_loss_1d(mu, ms, MAT, force, pts))
    assert got == pytest.approx(3.0 * np.mean(force(pts) ** 2), rel=1e-12)


def test_residual_loss_order_check():
    mesh = generate_bar_1d(1.0, 3)
    with pytest.raises(ConfigError):
        residual_loss_1d(FenniModel(mesh), FenniModel(mesh), MAT, zero_force, [0.5])


@pytest.mark.parametrize("loss", ["energy", "weak"])
def test_losses_nonnegative_or_bounded(bar, loss):
    rng = np.random.default_rng(8)
    m = bar_model(bar, 9)
    fn = (lambda mm: weak_loss_1d(mm, MAT, bar.body_force, gauss_1d(3))) if loss == "weak" else bar_energy(bar)
    u = fem_solve_1d(m.mesh, MAT, bar.body_force, bar_bcs(bar))
    m.params.U[:, 0] = u
    f_star = float(fn(m))
    for _ in range(5):
        m.params.U[1:-1, 0] = u[1:-1] + rng.normal(scale=1e-3, size=7)
        assert float(fn(m)) >= f_star - 1e-15


def test_von_mises_cases():
    assert von_mises(np.zeros((2, 2))) == 0.0
    assert von_mises(4.0 * np.eye(3)) == pytest.approx(0.0, abs=1e-14)
    s = -2.5
    assert von_mises(np.diag([s, 0.0, 0.0])) == pytest.approx(abs(s))
    assert von_mises(np.array([[s, 0.0], [0.0, 0.0]])) == pytest.approx(abs(s))
    # pure shear tau -> sqrt(3) tau
    assert von_mises(np.array([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(np.sqrt(3.0))


def test_stress_from_gradient_plane_strain():
    mat = Material2D()
    st = stress_from_gradient(np.array([[0.01, 0.0], [0.0, 0.0]]), mat)
    assert st.sigma[0, 0] == pytest.approx((mat.lam + 2 * mat.mu) * 0.01)
    assert st.sigma[1, 1] == pytest.approx(mat.lam * 0.01)
    assert st.sigma_zz == pytest.approx(mat.lam * 0.01)
    assert np.allclose(st.sigma, st.sigma.T)


def test_stress_strain_2d_zero_and_elementwise(plate):
    m = plate_model(plate, 0)
    m.params.U[:] = 0.0
    assert stress_strain_2d(m, m.mesh.centroids()[3], 3, plate.material).vm == 0.0
    m.params.U[:] = fem_solve_2d(m.mesh, plate.material, plate.bcs)
    per_elem = element_stress(m, plate.material)
    for e in (0, 7, 20):
        st = stress_strain_2d(m, m.mesh.centroids()[e], e, plate.material)
        assert st.vm == pytest.approx(per_elem.vm[e], rel=1e-12)
    assert np.all(per_elem.vm >= 0)


def test_energy_r_mode_gradient_flows_through_coordinates(plate):
    m = plate_model(plate, 0, "r")
    m.params.U[:] = fem_solve_2d(m.mesh, plate.material, plate.bcs)
    f, g = gradient(m, plate_energy(plate))
    nu = int((~m.params.frozen_U).sum())
    assert np.max(np.abs(g[nu:])) > 0
    assert np.max(np.abs(g[:nu])) < 1e-10

