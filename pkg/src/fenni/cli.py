"""Command-line entry point: ``fenni solve | study | mesh --inspect | validate-analytic``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import config as cfgmod
from .config import RunConfig
from .errors import ConfigError, DivergenceDetected, ElementInversion, FenniError, MeshError
from .loss import (
    element_stress,
    potential_energy_1d,
    potential_energy_2d,
    residual_loss_1d,
    weak_loss_1d,
)
from .mesh import generate_bar_1d
from .meshio import describe, read_gmsh, write_vtk
from .model import FenniModel
from .optim import make_optimizer
from .oracle import Bar1D, Plate2D, error_norms_1d, error_norms_2d, reference_solution_2d, validate_analytic
from .quadrature import Trapezoid, gauss_1d, gauss_tri
from .train import (
    AdaptivityConfig,
    StopCriteria,
    train_fixed,
    train_multigrid,
    train_r_adaptive,
    train_rh_adaptive,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4
VALIDATION_TOL = 1e-6
TIMING_FIELDS = ("wall_time",)


# building blocks -----------------------------------------------------------------
def build_problem(cfg: RunConfig):
    p = cfg.params
    if cfg.problem == "bar1d":
        return Bar1D(L=p.L, A=p.A, E=p.E, u_L=p.u_L, x1=p.x1, x2=p.x2)
    return Plate2D(
        width=p.width, height=p.height, hole_center=tuple(p.hole_center), hole_radius=p.hole_radius,
        lam=p.lam, mu=p.mu, u_left=tuple(p.u_left), u_right=tuple(p.u_right),
    )


def build_mesh(cfg: RunConfig, problem, size=None):
    """Mesh for ``size`` (node count in 1D, refine level in 2D) or the
    configured mesh."""
    if cfg.mesh.path is not None and size is None:
        mesh = read_gmsh(cfg.mesh.path)
        expected = 1 if cfg.problem == "bar1d" else 2
        if mesh.dim != expected:
            raise ConfigError(f"{cfg.mesh.path} is {mesh.dim}D but {cfg.problem} needs {expected}D")
    elif cfg.problem == "bar1d":
        mesh = generate_bar_1d(problem.L, cfg.mesh.n_nodes if size is None else size)
    else:
        mesh = problem.mesh(cfg.mesh.refine_level if size is None else size)
    if cfg.order == 2 and mesh.order == 1:
        mesh = mesh.elevate()
    return mesh


def build_model(cfg: RunConfig, problem, mesh, mode: str | None = None) -> FenniModel:
    mode = mode or (cfg.multigrid_mode if cfg.mode == "multigrid" else cfg.mode)
    model = FenniModel(mesh, mode=mode, init=cfg.init)
    if cfg.init_jitter > 0:
        rng = np.random.default_rng(cfg.seed)
        model.params.U += cfg.init_jitter * rng.standard_normal(model.params.U.shape)
    bcs = {"left": 0.0, "right": problem.u_L} if cfg.problem == "bar1d" else problem.bcs
    for tag, value in bcs.items():
        model.set_dirichlet(tag, value)
    return model


def build_loss(cfg: RunConfig, problem):
    """Loss callable taking the model(s) being trained."""
    n = cfg.integration.n
    if cfg.problem == "plate2d":
        rule = gauss_tri(n)
        material = problem.material
        return lambda m: potential_energy_2d(m, material, rule)
    material = problem.material
    rule = gauss_1d(n) if cfg.integration.kind == "gauss" else Trapezoid(n)
    if cfg.loss == "energy":
        return lambda m: potential_energy_1d(m, material, problem.body_force, rule)
    if cfg.loss == "weak":
        return lambda m: weak_loss_1d(m, material, problem.body_force, rule)
    cache = {}

    def residual(mu, ms):
        if "pts" not in cache:
            cache["pts"] = mu.interior_samples(n)
        return residual_loss_1d(mu, ms, material, problem.body_force, cache["pts"])

    return residual


def build_optimizer(cfg: RunConfig):
    o = cfg.optimizer
    if o.name == "adam":
        return make_optimizer("adam", lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps)
    return make_optimizer("lbfgs", m=o.history, c1=o.c1, c2=o.c2, max_evals=o.max_evals)


def build_stop(cfg: RunConfig) -> StopCriteria:
    s = cfg.stop
    return StopCriteria(tol=s.tol, max_iter=s.max_iter, tol_abs=s.tol_abs, gtol=s.gtol)


def build_adaptivity(cfg: RunConfig) -> AdaptivityConfig:
    a = cfg.adaptivity
    return AdaptivityConfig(a.t_delta_j, a.check_interval, a.max_splits, a.inversion_floor)


# running ---------------------------------------------------------------------------
@dataclass
class RunResult:
    model: FenniModel
    report: object
    problem: object
    initial_nodes: int
    errors: dict = field(default_factory=dict)
    strain_model: FenniModel | None = None


def run(cfg: RunConfig, cache_dir=None) -> RunResult:
    """Train according to ``cfg`` and compute error norms."""
    problem = build_problem(cfg)
    loss = build_loss(cfg, problem)
    stop = build_stop(cfg)
    adapt = build_adaptivity(cfg)
    strain = None
    if cfg.mode == "multigrid":
        meshes = [build_mesh(cfg, problem, s) for s in cfg.mesh.levels]
        model, report = train_multigrid(
            meshes, loss, lambda: build_optimizer(cfg), stop, lambda m: build_model(cfg, problem, m), adapt
        )
        initial = meshes[-1].n_nodes
    else:
        mesh = build_mesh(cfg, problem)
        model = build_model(cfg, problem, mesh)
        initial = mesh.n_nodes
        trained = model
        if cfg.loss == "residual":
            linear = build_mesh(replace(cfg, order=1), problem)
            strain = FenniModel(linear, mode=model.mode, init=cfg.init)
            trained = [model, strain]
        optimizer = build_optimizer(cfg)
        if cfg.mode == "fixed":
            report = train_fixed(trained, loss, optimizer, stop)
        elif cfg.mode == "r":
            report = train_r_adaptive(trained, loss, optimizer, stop, adapt.inversion_floor)
        else:
            model, report = train_rh_adaptive(model, loss, optimizer, adapt, stop)
    result = RunResult(model, report, problem, initial, strain_model=strain)
    result.errors = compute_errors(cfg, result, cache_dir)
    report.errors = dict(result.errors)
    return result


def compute_errors(cfg: RunConfig, result: RunResult, cache_dir=None) -> dict:
    if cfg.problem == "bar1d":
        m = result.model
        return error_norms_1d(m, m.gradient, result.problem)
    ref = reference_solution_2d(result.problem, cfg.params.reference_level, cache_dir)
    return error_norms_2d(result.model, ref, result.problem.material)


def report_dict(cfg: RunConfig, result: RunResult) -> dict:
    rep = result.report
    out = rep.to_dict()
    history = out.pop("loss_history")
    out.update(
        config=cfg.to_dict(),
        final_loss=history[-1] if history else None,
        initial_nodes=result.initial_nodes,
        final_nodes=result.model.mesh.n_nodes,
        final_elements=result.model.mesh.n_elements,
    )
    return out


def write_outputs(cfg: RunConfig, result: RunResult, outdir: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    model = result.model
    if cfg.problem == "bar1d":
        x = np.linspace(0.0, result.problem.L, 1000)
        u, du = model(x), model.gradient(x)
        with open(os.path.join(outdir, "solution.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "u", "du_dx", "u_a", "du_a"])
            for row in zip(x, u, du, result.problem.analytic_u(x), result.problem.analytic_du(x)):
                w.writerow([repr(float(v)) for v in row])
    else:
        vm = element_stress(model, result.problem.material).vm
        write_vtk(os.path.join(outdir, "solution.vtk"), model.current_mesh(),
                  point_data={"displacement": model.params.U}, cell_data={"von_mises": vm})
        for k, (it, mesh) in enumerate(result.report.snapshots):
            write_vtk(os.path.join(outdir, f"snapshot_{k:03d}_it{it}.vtk"), mesh)
    with open(os.path.join(outdir, "loss_history.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(result.report.loss_history, start=1):
            w.writerow([i, repr(float(v))])
    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump(report_dict(cfg, result), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cache_dir():
    return os.environ.get("FENNI_CACHE") or None


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FENNI_THREADS", "1")))
    except ValueError:
        return 1


# commands -----------------------------------------------------------------------------
def cmd_solve(cfg: RunConfig, outdir: str | None = None) -> int:
    outdir = outdir or cfg.output_dir
    try:
        result = run(cfg, _cache_dir())
    except (DivergenceDetected, ElementInversion) as exc:
        print(f"error: training failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    try:
        write_outputs(cfg, result, outdir)
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    e = result.errors
    print(f"{result.report.stop_reason} after {result.report.iterations} iterations; "
          + ", ".join(f"{k}={v:.3e}" for k, v in sorted(e.items())))
    return EXIT_OK


STUDY_COLUMNS = ["size", "loss", "integration", "optimizer", "mode", "e_u", "e_grad", "e_vm",
                 "vm_max_ratio", "iterations", "wall_time", "status"]


def _study_row(cfg: RunConfig) -> dict:
    size = (cfg.mesh.levels[-1] if cfg.mode == "multigrid" else
            cfg.mesh.n_nodes if cfg.problem == "bar1d" else cfg.mesh.refine_level)
    row = {"size": size, "loss": cfg.loss, "integration": f"{cfg.integration.kind}{cfg.integration.n}",
           "optimizer": cfg.optimizer.name, "mode": cfg.mode}
    try:
        result = run(cfg, _cache_dir())
    except FenniError as exc:
        row["status"] = type(exc).__name__
        return row
    e = result.errors
    row.update(e_u=e.get("e_u"), e_grad=e.get("e_grad"), e_vm=e.get("e_vm"),
               vm_max_ratio=e.get("vm_max_ratio"), iterations=result.report.iterations,
               wall_time=round(result.report.wall_time, 3),
               status=result.report.stop_reason)
    return row


def cmd_study(rows: list[RunConfig], outdir: str) -> int:
    if not rows:
        print("error: study matrix is empty", file=sys.stderr)
        return EXIT_CONFIG
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(_study_row, rows))
    try:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "study.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=STUDY_COLUMNS)
            w.writeheader()
            for r in results:
                w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in STUDY_COLUMNS})
    except OSError as exc:
        print(f"error: cannot write study table: {exc}", file=sys.stderr)
        return EXIT_IO
    ok = sum(r["status"] in ("converged", "guard_limited", "stalled", "max_iter") for r in results)
    print(f"{ok}/{len(results)} rows completed")
    return EXIT_OK if ok else EXIT_DIVERGED


def cmd_inspect(path: str) -> int:
    try:
        info = describe(path)
    except (OSError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate_analytic(n_nodes: int = 10001) -> int:
    mismatch = validate_analytic(Bar1D(), n_nodes)
    ok = mismatch < VALIDATION_TOL
    print(f"analytic vs FEM ({n_nodes} nodes): relative L2 mismatch {mismatch:.3e} "
          f"({'pass' if ok else 'FAIL'}, tolerance {VALIDATION_TOL:g})")
    return EXIT_OK if ok else EXIT_FAIL


def _configure_threads() -> None:
    n = os.environ.get("FENNI_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fenni", description="Finite-element interpolation networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="train one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="output directory (overrides the config)")
    p = sub.add_parser("study", help="run a configuration matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="output directory (default: base output_dir)")
    p = sub.add_parser("mesh", help="mesh utilities")
    p.add_argument("--inspect", required=True, metavar="PATH")
    p = sub.add_parser("validate-analytic", help="check the analytic bar solution against a fine FEM solve")
    p.add_argument("--nodes", type=int, default=10001)
    return parser


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def main(argv=None) -> int:
    _configure_threads()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            cfg = cfgmod.load(args.config)
            return cmd_solve(cfg, args.output)
        if args.command == "study":
            rows = cfgmod.expand_study(_read_json(args.config))
            outdir = args.output or (rows[0].output_dir if rows else "out")
            return cmd_study(rows, outdir)
        if args.command == "mesh":
            return cmd_inspect(args.inspect)
        return cmd_validate_analytic(args.nodes)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
