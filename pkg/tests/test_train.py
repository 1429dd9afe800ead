import numpy as np
import pytest

from fenni import autodiff as ad
from conftest import bar_energy, bar_model, model_on, plate_energy, plate_model
from fenni.errors import ConfigError, DivergenceDetected, ZeroPreviousJacobian
from fenni.loss import Material2D, element_stress, potential_energy_2d
from fenni.mesh import Mesh, generate_bar_1d
from fenni.model import FenniModel
from fenni.oracle import bar_bcs, error_norms_1d, fem_solve_1d, fem_solve_2d, normalized_l2
from fenni.optim import LBFGS, Adam, _guard_step
from fenni.quadrature import gauss_1d, gauss_tri
from fenni.train import (
    AdaptivityConfig,
    Objective,
    StopCriteria,
    TrainReport,
    delta_jacobian,
    multigrid_transfer,
    refine_model,
    train_fixed,
    train_multigrid,
    train_r_adaptive,
    train_rh_adaptive,
)

TIGHT = StopCriteria(tol=1e-12, gtol=1e-12, max_iter=5000)
SCALES = [10, 21, 41, 80, 160, 324]


@pytest.mark.parametrize("prev, curr, expected", [(2.0, 1.0, 0.5), (1.5, 1.5, 0.0), (1.0, 2.0, -1.0), (-2.0, 1.0, 0.5)])
def test_delta_jacobian(prev, curr, expected):
    assert delta_jacobian(prev, curr) == pytest.approx(expected)


def test_delta_jacobian_zero_previous():
    with pytest.raises(ZeroPreviousJacobian):
        delta_jacobian(np.array([1.0, 0.0]), np.array([1.0, 1.0]))


def test_adaptivity_config_validation():
    with pytest.raises(ConfigError):
        AdaptivityConfig(t_delta_j=0.0)
    with pytest.raises(ConfigError):
        AdaptivityConfig(max_splits=-1)


def test_fixed_bar_matches_fem(bar):
    m = bar_model(bar, 41)
    rep = train_fixed(m, bar_energy(bar), LBFGS(), TIGHT)
    u = fem_solve_1d(m.mesh, bar.material, bar.body_force, bar_bcs(bar))
    assert rep.converged
    assert np.max(np.abs(m.params.U[:, 0] - u)) / np.max(np.abs(u)) < 1e-8
    assert len(rep.loss_history) == rep.iterations


def test_fixed_plate_matches_fem(plate):
    m = plate_model(plate, 1)
    train_fixed(m, plate_energy(plate), LBFGS(), StopCriteria(tol=1e-12, gtol=1e-10, max_iter=5000))
    U = fem_solve_2d(m.mesh, plate.material, plate.bcs)
    assert normalized_l2(m.params.U, U) < 1e-6


def test_already_optimal_stops_quickly(bar):
    m = bar_model(bar, 21)
    m.params.U[:, 0] = fem_solve_1d(m.mesh, bar.material, bar.body_force, bar_bcs(bar))
    rep = train_fixed(m, bar_energy(bar), LBFGS())
    assert rep.iterations <= 2


def test_fixed_requires_frozen_coordinates(bar):
    with pytest.raises(ConfigError):
        train_fixed(bar_model(bar, 5, "r"), bar_energy(bar), LBFGS())


def test_dirichlet_bit_identical_after_training(bar):
    m = bar_model(bar, 21, "r")
    before = m.params.U[m.params.frozen_U].copy()
    bx = m.params.X[m.params.frozen_X].copy()
    train_r_adaptive(m, bar_energy(bar), LBFGS(), StopCriteria(max_iter=50))
    assert np.array_equal(m.params.U[m.params.frozen_U], before)
    assert np.array_equal(m.params.X[m.params.frozen_X], bx)


def test_divergence_detected(bar):
    # unbounded below: the gradient grows until Adam's moments overflow
    m = bar_model(bar, 11)
    pts = np.linspace(1.0, 9.0, 5)
    loss = lambda mm: -ad.sum(ad.exp(mm.evaluate(pts).u[0]))
    with pytest.raises(DivergenceDetected):
        train_fixed(m, loss, Adam(lr=100.0), StopCriteria(max_iter=500))


def test_r_adaptive_bar_14_nodes(bar):
    rule = gauss_1d(5)
    fixed = bar_model(bar, 14)
    rep_f = train_fixed(fixed, bar_energy(bar, rule), LBFGS())
    moving = bar_model(bar, 14, "r")
    rep_r = train_r_adaptive(moving, bar_energy(bar, rule), LBFGS())
    assert rep_r.loss_history[-1] <= rep_f.loss_history[-1] + 1e-12
    e_f = error_norms_1d(fixed, fixed.gradient, bar)["e_u"]
    e_r = error_norms_1d(moving, moving.gradient, bar)["e_u"]
    assert e_r / e_f < 1
    # interior nodes move toward the load peaks
    peaks = np.array([bar.x1, bar.x2])
    dist = lambda X: np.abs(X[1:-1, None] - peaks[None, :]).min(axis=1).mean()
    assert dist(moving.params.X[:, 0]) < dist(fixed.params.X[:, 0])
    assert np.all(np.diff(moving.params.X[:, 0]) > 0)


def test_r_with_frozen_coordinates_equals_fixed(bar):
    a = bar_model(bar, 21)
    b = bar_model(bar, 21, "r")
    b.params.frozen_X[:] = True
    ra = train_fixed(a, bar_energy(bar), LBFGS())
    rb = train_r_adaptive(b, bar_energy(bar), LBFGS())
    assert ra.loss_history == rb.loss_history


def two_triangles(mode="r"):
    # only node 3 may move; pushing it across edge (1, 2) inverts element 1
    mesh = Mesh([[0, 0], [1, 0], [0, 1], [1, 1]], [[0, 1, 2], [1, 3, 2]], node_tags=["left", None, "left", None])
    m = FenniModel(mesh, mode=mode)
    m.params.frozen_X[:] = True
    m.params.frozen_X[3] = False
    return m


def test_inversion_guard_halves_step():
    m = two_triangles()
    obj = Objective([m], lambda mm: potential_energy_2d(mm, Material2D(), gauss_tri(1)), inversion_floor=0.1)
    theta = obj.vector()
    nu = int((~m.params.frozen_U).sum())
    step = np.zeros_like(theta)
    step[nu:] = [-2.0, -2.0]  # moves node 3 to (-1, -1)
    assert not obj.feasible(theta + step)
    trial, halvings = _guard_step(obj, theta, step)
    assert 1 <= halvings <= 30
    j = m.trial_jacobians(trial)
    assert np.min(j) > 0.1 * np.min(obj.j0[0])
    # one halving fewer would still invert
    assert not obj.feasible(theta + step * 0.5 ** (halvings - 1))


def test_refinement_keeps_loss(plate):
    m = plate_model(plate, 0, "rh")
    m.params.U[:] = fem_solve_2d(m.mesh, plate.material, plate.bcs)
    fn = plate_energy(plate)
    before = float(fn(m))
    new, parents = refine_model(m, [3, 10], 1)
    assert new.mesh.n_nodes == m.mesh.n_nodes + len(parents)
    assert float(fn(new)) == pytest.approx(before, rel=1e-12)
    assert np.array_equal(new.params.U[new.mesh.tagged("right")][:, 0], np.full(len(new.mesh.tagged("right")), 1.0))
    free_new = ~new.params.frozen_X[m.mesh.n_nodes:, 0]
    assert free_new.any()


def test_rh_no_marks_equals_r(plate):
    stop = StopCriteria(max_iter=60)
    a = plate_model(plate, 0, "r")
    ra = train_r_adaptive(a, plate_energy(plate), LBFGS(), stop)
    for cfg in (AdaptivityConfig(t_delta_j=np.inf), AdaptivityConfig(max_splits=0)):
        b = plate_model(plate, 0, "rh")
        b2, rb = train_rh_adaptive(b, plate_energy(plate), LBFGS(), cfg, stop)
        assert rb.loss_history == ra.loss_history
        assert b2.mesh.n_nodes == a.mesh.n_nodes and not rb.refinements


def test_rh_refines_where_stress_is_high(plate):
    m = plate_model(plate, 0, "rh")
    cfg = AdaptivityConfig(t_delta_j=0.1, check_interval=10, max_splits=1)
    out, rep = train_rh_adaptive(m, plate_energy(plate), LBFGS(), cfg, StopCriteria(max_iter=500))
    assert out.mesh.n_nodes > m.mesh.n_nodes
    assert rep.refinements and rep.snapshots
    counts = [r["nodes_after"] for r in rep.refinements]
    assert counts == sorted(counts)
    assert np.all(out.mesh.split_count <= 1)
    assert np.min(out.jacobians()) > 0
    vm = element_stress(out, plate.material).vm
    red = out.mesh.split_count == 1
    assert vm[red].mean() > vm[~red].mean()


def test_transfer_coincident_centroid_and_dirichlet(plate):
    coarse = plate_model(plate, 0)
    coarse.params.U[:] = fem_solve_2d(coarse.mesh, plate.material, plate.bcs)
    fine = multigrid_transfer(coarse, plate.mesh(1))
    n0 = coarse.mesh.n_nodes
    # uniform refinement keeps the coarse nodes first
    assert np.allclose(fine.params.U[:n0], coarse.params.U, atol=1e-14)
    assert np.array_equal(fine.params.U[fine.mesh.tagged("right")],
                          np.broadcast_to(plate.bcs["right"], (len(fine.mesh.tagged("right")), 2)))
    assert fine.params.frozen_U[fine.mesh.tagged("left")].all()
    c = coarse.mesh.centroids()[5]
    assert np.allclose(coarse(c[None, :])[0], coarse.params.U[coarse.mesh.conn[5]].mean(axis=0), atol=1e-14)


def test_transfer_nested_1d_exact(bar):
    coarse = bar_model(bar, 11)
    coarse.params.U[1:-1, 0] = np.random.default_rng(0).normal(size=9)
    fine = multigrid_transfer(coarse, generate_bar_1d(bar.L, 21))
    x = np.random.default_rng(1).uniform(0, bar.L, 1000)
    assert np.allclose(fine(x), coarse(x), rtol=0, atol=1e-12)


def test_transfer_beats_uniform_init(bar):
    fn = bar_energy(bar)
    coarse = bar_model(bar, SCALES[0])
    train_fixed(coarse, fn, LBFGS())
    for n in SCALES[1:]:
        fine = multigrid_transfer(coarse, generate_bar_1d(bar.L, n))
        uniform = bar_model(bar, n)
        assert float(fn(fine)) < float(fn(uniform))
        train_fixed(fine, fn, LBFGS())
        coarse = fine


def test_multigrid_single_level_equals_fixed(bar):
    a = bar_model(bar, 21)
    ra = train_fixed(a, bar_energy(bar), LBFGS())
    b, rb = train_multigrid([generate_bar_1d(bar.L, 21)], bar_energy(bar), LBFGS,
                            model_factory=lambda mesh: model_on_bar(bar, mesh))
    assert rb.loss_history == ra.loss_history
    assert rb.level_iterations == [ra.iterations]


def model_on_bar(bar, mesh):
    m = FenniModel(mesh)
    for tag, v in bar_bcs(bar).items():
        m.set_dirichlet(tag, v)
    return m


def test_multigrid_levels_and_validation(plate):
    meshes = [plate.mesh(0), plate.mesh(1)]
    seen = []
    model, rep = train_multigrid(meshes, plate_energy(plate), LBFGS, StopCriteria(max_iter=200),
                                 model_factory=lambda mesh: model_on(plate, mesh),
                                 on_level=lambda i, m: seen.append((i, m.mesh.n_nodes)))
    assert seen == [(0, meshes[0].n_nodes), (1, meshes[1].n_nodes)]
    assert len(rep.level_iterations) == 2 and sum(rep.level_iterations) == rep.iterations
    assert model.params.frozen_U[model.mesh.tagged("right")].all()
    with pytest.raises(ConfigError):
        train_multigrid(meshes[::-1], plate_energy(plate), LBFGS, model_factory=lambda mesh: model_on(plate, mesh))
    with pytest.raises(ConfigError):
        train_multigrid([], plate_energy(plate), LBFGS, model_factory=lambda mesh: model_on(plate, mesh))


def test_training_is_deterministic(plate):
    runs = []
    for _ in range(2):
        m = plate_model(plate, 0, "r")
        runs.append(train_r_adaptive(m, plate_energy(plate), LBFGS(), StopCriteria(max_iter=40)).loss_history)
    assert runs[0] == runs[1]


def test_report_to_dict_roundtrips_json():
    import json

    rep = TrainReport(loss_history=[1.0, 0.5], iterations=2, flags={"b", "a"})
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["flags"] == ["a", "b"] and d["loss_history"] == [1.0, 0.5]
