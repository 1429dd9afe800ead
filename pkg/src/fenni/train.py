"""Training drivers: fixed mesh, r-adaptive, rh-adaptive and multigrid."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DivergenceDetected, ElementInversion, NonFiniteGradient, NonFiniteValue, ZeroPreviousJacobian
from .mesh import Mesh, red_green_refine
from .model import FenniModel
from .optim import converged

DEFAULT_TOL = {"lbfgs": 1e-9, "adam": 1e-7}
DEFAULT_CAP = {"lbfgs": 500, "adam": 20000}


@dataclass
class StopCriteria:
    """When to stop training.

    ``tol`` bounds the relative loss decrease between iterations and
    ``max_iter`` caps the iteration count (``None``: optimizer default).
    The optional ``gtol`` additionally requires the largest gradient entry
    to have dropped below ``gtol`` times its initial value; energy losses
    are quadratic in the error, so the loss test alone can stop long before
    the nodal values settle.
    """

    tol: float | None = None
    max_iter: int | None = None
    tol_abs: float | None = None
    gtol: float | None = None
    divergence_factor: float = 1e6

    def resolve(self, optimizer) -> tuple[float, int]:
        name = getattr(optimizer, "name", "lbfgs")
        tol = DEFAULT_TOL.get(name, 1e-9) if self.tol is None else self.tol
        cap = DEFAULT_CAP.get(name, 500) if self.max_iter is None else self.max_iter
        return tol, cap


@dataclass
class AdaptivityConfig:
    t_delta_j: float = 0.1
    check_interval: int = 10
    max_splits: int = 1
    inversion_floor: float = 1e-3

    def __post_init__(self):
        if not self.t_delta_j > 0:
            raise ConfigError("t_delta_j must be positive")
        if self.max_splits < 0:
            raise ConfigError("max_splits must be non-negative")
        if self.check_interval < 1:
            raise ConfigError("check_interval must be at least 1")
        if not 0 <= self.inversion_floor < 1:
            raise ConfigError("inversion_floor must lie in [0, 1)")


@dataclass
class TrainReport:
    loss_history: list = field(default_factory=list)
    wall_time: float = 0.0
    iterations: int = 0
    level_iterations: list = field(default_factory=list)
    level_converged: list = field(default_factory=list)
    level_stop_reasons: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    flags: set = field(default_factory=set)
    snapshots: list = field(default_factory=list)  # (iteration, Mesh) at each refinement
    refinements: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "loss_history": [float(v) for v in self.loss_history],
            "wall_time": self.wall_time,
            "iterations": self.iterations,
            "level_iterations": list(self.level_iterations),
            "level_converged": list(self.level_converged),
            "level_stop_reasons": list(self.level_stop_reasons),
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "flags": sorted(self.flags),
            "refinements": list(self.refinements),
            "errors": dict(self.errors),
        }


class Objective:
    """Loss of one or more models as a function of their stacked free vectors.

    ``loss_fn(*models)`` must build the loss from the models' forward
    evaluations.  Each call to :meth:`value_and_grad` writes the trial vector
    into the models and records a fresh tape.
    """

    def __init__(self, models, loss_fn: Callable, inversion_floor: float = 0.0):
        self.models = list(models)
        self.loss_fn = loss_fn
        self.floor = inversion_floor
        self.sizes = [m.params.n_free for m in self.models]
        self.j0 = [np.abs(m.jacobians()) if (~m.params.frozen_X).any() else None for m in self.models]
        self.evaluations = 0

    def vector(self) -> np.ndarray:
        return np.concatenate([m.free_vector() for m in self.models]) if self.models else np.zeros(0)

    def _split(self, theta):
        out, k = [], 0
        for n in self.sizes:
            out.append(theta[k : k + n])
            k += n
        return out

    def commit(self, theta) -> None:
        for m, part in zip(self.models, self._split(np.asarray(theta, dtype=float))):
            m.set_free_vector(part)

    def value(self, theta) -> float:
        self.commit(theta)
        return float(ad.value_of(self.loss_fn(*self.models)))

    def value_and_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        self.commit(theta)
        self.evaluations += 1
        tape = ad.Tape()
        th = tape.var(theta)
        offset = 0
        try:
            for m in self.models:
                offset = m.bind(th, offset)
            loss = self.loss_fn(*self.models)
            if isinstance(loss, ad.Var):
                grads = tape.backward(loss)
                g = grads[th]
            else:
                g = np.zeros_like(theta)
            f = float(ad.value_of(loss))
        finally:
            for m in self.models:
                m.unbind()
        return f, g

    def feasible(self, theta) -> bool:
        for m, j0, part in zip(self.models, self.j0, self._split(np.asarray(theta, dtype=float))):
            if j0 is None:
                continue
            jac = m.trial_jacobians(part)
            if np.any(jac <= self.floor * j0):
                return False
        return True


def _as_models(model) -> list:
    return list(model) if isinstance(model, (list, tuple)) else [model]


def _iterate(objective: Objective, optimizer, stop: StopCriteria, report: TrainReport, on_iteration=None):
    """Run the optimizer until the loss stalls, converges or hits the cap.

    ``on_iteration(it)`` may return a new objective (after refinement); the
    optimizer is then reset and the convergence test restarted.
    """
    tol, cap = stop.resolve(optimizer)
    theta = objective.vector()
    try:
        f, g = objective.value_and_grad(theta)
    except (NonFiniteValue, NonFiniteGradient) as exc:
        raise DivergenceDetected(f"initial loss is not finite: {exc}") from None
    f_init = f
    g_scale = float(np.max(np.abs(g))) if g.size else 0.0
    limit = abs(f_init) * stop.divergence_factor
    it = 0
    report.converged = False
    while it < cap:
        try:
            theta_new, f_new, g_new, info = optimizer.step(objective, theta, f, g)
        except (NonFiniteValue, NonFiniteGradient) as exc:
            report.stop_reason = "diverged"
            raise DivergenceDetected(f"non-finite loss at iteration {it + 1}: {exc}") from None
        except ElementInversion:
            report.stop_reason = "element_inversion"
            raise
        it += 1
        report.iterations += 1
        if not np.isfinite(f_new) or (f_new > f_init and f_new - f_init > limit and limit > 0):
            report.loss_history.append(float(f_new))
            report.stop_reason = "diverged"
            exc = DivergenceDetected(f"loss {f_new:g} exceeded {stop.divergence_factor:g} x initial")
            exc.report = report
            raise exc
        objective.commit(theta_new)
        report.loss_history.append(float(f_new))
        f_prev = f
        theta, f, g = theta_new, f_new, g_new
        done = False
        if not info.accepted:
            report.stop_reason = "stalled"
            done = True
        elif converged(f, f_prev, tol, stop.tol_abs, report.flags) and (
            stop.gtol is None or not g.size or np.max(np.abs(g)) <= stop.gtol * g_scale
        ):
            report.stop_reason = "converged"
            if info.halvings:
                # the loss stalled against the inversion floor rather than freely
                report.flags.add("InversionGuardActive")
                report.stop_reason = "guard_limited"
            done = True
        if on_iteration is not None:
            new = on_iteration(it, done)
            if new is not None:
                objective = new
                optimizer.reset()
                theta = objective.vector()
                f, g = objective.value_and_grad(theta)
                g_scale = float(np.max(np.abs(g))) if g.size else 0.0
                continue
        if done:
            report.converged = True
            return it
    report.stop_reason = "max_iter"
    return it


def _finish(report: TrainReport, t0: float) -> TrainReport:
    report.wall_time = time.perf_counter() - t0
    return report


def train_fixed(model, loss_fn, optimizer, stop: StopCriteria | None = None) -> TrainReport:
    """Optimize nodal values on a fixed mesh."""
    models = _as_models(model)
    for m in models:
        if (~m.params.frozen_X).any():
            raise ConfigError("train_fixed needs every nodal coordinate frozen")
    return _train_plain(models, loss_fn, optimizer, stop or StopCriteria(), 0.0)


def train_r_adaptive(model, loss_fn, optimizer, stop: StopCriteria | None = None,
                     inversion_floor: float = 1e-3) -> TrainReport:
    """Optimize nodal values and interior nodal coordinates together."""
    return _train_plain(_as_models(model), loss_fn, optimizer, stop or StopCriteria(), inversion_floor)


def _train_plain(models, loss_fn, optimizer, stop, floor) -> TrainReport:
    t0 = time.perf_counter()
    report = TrainReport()
    cfg = AdaptivityConfig(inversion_floor=floor)
    _train_level(models, loss_fn, optimizer, stop, report, cfg, t0)
    return _finish(report, t0)


def delta_jacobian(J_prev, J_curr):
    """(|J_prev| - |J_curr|) / |J_prev|: positive when an element shrinks."""
    jp = np.abs(np.asarray(J_prev, dtype=float))
    if np.any(jp == 0.0):
        raise ZeroPreviousJacobian("previous Jacobian is zero")
    out = (jp - np.abs(np.asarray(J_curr, dtype=float))) / jp
    return float(out) if out.ndim == 0 else out


def refine_model(model: FenniModel, marked, max_splits: int) -> tuple[FenniModel, np.ndarray]:
    """Red-green refine the model's current mesh and carry the fields over.

    New nodes get the average of their parent edge's values, which leaves
    a linear interpolant unchanged.  Returns the new model and the parent
    edge array.
    """
    current = model.current_mesh()
    new_mesh, parents = red_green_refine(current, marked, max_splits, return_parents=True)
    new = FenniModel(new_mesh, n_comp=model.n_comp, mode=model.mode)
    n_old = model.mesh.n_nodes
    U = np.empty((new_mesh.n_nodes, model.n_comp))
    U[:n_old] = model.params.U
    if len(parents):
        U[n_old:] = 0.5 * (U[parents[:, 0]] + U[parents[:, 1]])
    new.params.U[:] = U
    new.initial_mesh = model.initial_mesh
    new.dirichlet = {k: np.array(v) for k, v in model.dirichlet.items()}
    new.reapply_dirichlet()
    return new, parents


def train_rh_adaptive(model: FenniModel, loss_fn, optimizer, cfg: AdaptivityConfig | None = None,
                      stop: StopCriteria | None = None) -> tuple[FenniModel, TrainReport]:
    """r-adaptive training with element splitting driven by the shrink ratio.

    Every ``check_interval`` iterations (and once more when the loss has
    converged) the per-element shrink ratio since the previous check is
    evaluated; elements above ``t_delta_j`` that may still be split are
    red-green refined and training continues on the new mesh.

    Returns the final model (a new object if any refinement happened) and
    the report.
    """
    cfg = cfg or AdaptivityConfig()
    t0 = time.perf_counter()
    report = TrainReport()
    model = _train_level(model, loss_fn, optimizer, stop or StopCriteria(), report, cfg, t0)
    return model, _finish(report, t0)


def _train_level(model, loss_fn, optimizer, stop, report, cfg: AdaptivityConfig, t0) -> FenniModel:
    """Train one model (any mode) to convergence, appending to ``report``."""
    models = _as_models(model)
    floor = cfg.inversion_floor if any((~m.params.frozen_X).any() for m in models) else 0.0
    on_iteration = None
    state = {"model": model}
    if not isinstance(model, (list, tuple)) and model.mode == "rh":
        if model.dim == 1 and model.order != 1:
            raise ConfigError("rh-adaptivity supports linear elements only")
        state.update(j_prev=np.abs(model.jacobians()), since=0)

        def on_iteration(it, done):
            state["since"] += 1
            if state["since"] < cfg.check_interval and not done:
                return None
            state["since"] = 0
            m = state["model"]
            j_cur = np.abs(m.jacobians())
            dj = delta_jacobian(state["j_prev"], j_cur)
            state["j_prev"] = j_cur
            marked = np.flatnonzero((dj > cfg.t_delta_j) & (m.mesh.split_count < cfg.max_splits))
            if len(marked) == 0:
                return None
            new, _parents = refine_model(m, marked, cfg.max_splits)
            report.refinements.append(
                {"iteration": report.iterations, "marked": int(len(marked)),
                 "nodes_before": m.mesh.n_nodes, "nodes_after": new.mesh.n_nodes}
            )
            report.snapshots.append((report.iterations, new.current_mesh()))
            state["model"] = new
            state["j_prev"] = np.abs(new.jacobians())
            return Objective([new], loss_fn, floor)

    objective = Objective(models, loss_fn, floor)
    start = report.iterations
    try:
        _iterate(objective, optimizer, stop, report, on_iteration)
    except (DivergenceDetected, ElementInversion) as exc:
        report.level_iterations.append(report.iterations - start)
        report.level_converged.append(False)
        report.level_stop_reasons.append(report.stop_reason)
        exc.report = _finish(report, t0)
        exc.model = state["model"]
        raise
    report.level_iterations.append(report.iterations - start)
    report.level_converged.append(report.converged)
    report.level_stop_reasons.append(report.stop_reason)
    return state["model"]


def multigrid_transfer(coarse: FenniModel, fine_mesh: Mesh) -> FenniModel:
    """Initialize a model on ``fine_mesh`` by evaluating ``coarse`` at its nodes.

    Nodes outside the coarse (trained) mesh take the value of the closest
    coarse node; Dirichlet values are re-imposed afterwards.
    """
    fine = FenniModel(fine_mesh, n_comp=coarse.n_comp, mode=coarse.mode)
    pts = fine_mesh.coords[:, 0] if fine_mesh.dim == 1 else fine_mesh.coords
    vals = coarse(pts)
    fine.params.U[:] = np.asarray(vals).reshape(fine_mesh.n_nodes, coarse.n_comp)
    fine.dirichlet = {k: np.array(v) for k, v in coarse.dirichlet.items()}
    fine.reapply_dirichlet()
    return fine


def train_multigrid(mesh_sequence: Sequence[Mesh], loss_fn, optimizer_factory: Callable,
                    stop: StopCriteria | None = None, model_factory: Callable | None = None,
                    adaptivity: AdaptivityConfig | None = None,
                    on_level: Callable | None = None) -> tuple[FenniModel, TrainReport]:
    """Train level by level, initializing each level from the previous one.

    ``model_factory(mesh)`` builds the first-level model (with its Dirichlet
    conditions and mode); later levels come from :func:`multigrid_transfer`.
    Each level is trained to convergence with a fresh optimizer; in rh mode
    every level is refined during its own training.  ``on_level(i, model)``
    is called with each level's trained model.
    """
    if not mesh_sequence:
        raise ConfigError("empty mesh sequence")
    counts = [m.n_nodes for m in mesh_sequence]
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise ConfigError("mesh sequence must strictly increase in node count")
    if model_factory is None:
        raise ConfigError("model_factory is required")
    stop = stop or StopCriteria()
    cfg = adaptivity or AdaptivityConfig()
    t0 = time.perf_counter()
    report = TrainReport()
    model = None
    for level, mesh in enumerate(mesh_sequence):
        model = model_factory(mesh) if level == 0 else multigrid_transfer(model, mesh)
        model = _train_level(model, loss_fn, optimizer_factory(), stop, report, cfg, t0)
        if on_level is not None:
            on_level(level, model)
    report.converged = bool(report.level_converged[-1])
    return model, _finish(report, t0)
