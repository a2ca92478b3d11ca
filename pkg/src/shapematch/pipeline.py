"""End-to-end orchestration: load meshes, build spectra and descriptors, run a
matching mode, and write all artifacts (correspondence, functional map, bank,
loss trace, error report, SVG plots) to an output directory."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import descriptors as desc_mod
from .config import Settings
from .errors import DataError
from .evaluate import (ErrorReport, load_ground_truth, mean_geodesic_error,
                       write_error_report)
from .filters import (FilterBank, HeatBank, MeyerBank, eval_bank,
                      heat_initialized_jacobi, load_bank, response_curve,
                      save_bank)
from .fmap import (FunctionalMap, PointwiseMap, iterative_refine, load_p2p,
                   p2p_from_features, save_fmap, save_p2p,
                   solve_fmap_descriptors)
from .mesh import Mesh, assemble_operators, geodesic_diameter, load_mesh
from .optimize import (LossWeights, OptimizeResult, OptimizerConfig, ShapeData,
                       optimize_filters, write_trace_csv)
from .spectral import mesh_basis

MODES = ("jacobi-opt", "zoomout", "descriptor")


@dataclass
class PreparedShape:
    mesh: Mesh
    basis: "object"
    descriptors: np.ndarray
    stiffness: "object"


def prepare_shape(mesh: Mesh, settings: Settings) -> PreparedShape:
    k = min(settings.k, mesh.n_vertices)
    if k < settings.k:
        warnings.warn(f"truncation clamped to {k} (mesh has only "
                      f"{mesh.n_vertices} vertices)")
    cache = settings.cache_dir or None
    basis = mesh_basis(mesh, k, cache_dir=cache,
                       dense_cutoff=settings.dense_cutoff)
    _, stiffness = assemble_operators(mesh)
    wks = desc_mod.wks(basis, dim=settings.wks_dim,
                       variance_factor=settings.wks_variance)
    if settings.normalize_descriptors:
        wks = desc_mod.l2_normalize(wks)
    return PreparedShape(mesh=mesh, basis=basis, descriptors=wks.values,
                         stiffness=stiffness)


def optimizer_config(settings: Settings) -> OptimizerConfig:
    return OptimizerConfig(
        learning_rate=settings.learning_rate, max_steps=settings.max_steps,
        rel_tol=settings.rel_tol, barrier_weight=settings.barrier_weight,
        bidirectional=settings.bidirectional, outer_rounds=settings.outer_rounds)


def loss_weights(settings: Settings) -> LossWeights:
    return LossWeights(freq=settings.theta_freq, fmap=settings.theta_fmap,
                       bi=settings.theta_bi, orth=settings.theta_or,
                       smooth=settings.theta_sm)


def zoomout_schedule(settings: Settings, k: int) -> list:
    start = min(settings.zoomout_start, k)
    schedule = list(range(start, k + 1, max(settings.zoomout_step, 1)))
    if not schedule:
        schedule = [k]
    if schedule[-1] != k:
        schedule.append(k)
    return schedule


@dataclass
class MatchResult:
    pointwise: PointwiseMap
    fmap: FunctionalMap
    bank: Optional[FilterBank]
    trace: Optional[list]
    baseline: Optional[PointwiseMap]


def run_match(shape_m: PreparedShape, shape_n: PreparedShape, mode: str,
              settings: Settings) -> MatchResult:
    if mode == "descriptor":
        pi = p2p_from_features(shape_m.descriptors, shape_n.descriptors)
        fmap = solve_fmap_descriptors(shape_m.basis, shape_n.basis,
                                      shape_m.descriptors, shape_n.descriptors,
                                      settings.lambda_reg)
        return MatchResult(pointwise=pi, fmap=fmap, bank=None, trace=None,
                           baseline=pi)
    if mode == "zoomout":
        pi0 = p2p_from_features(shape_m.descriptors, shape_n.descriptors)
        k = min(shape_m.basis.k, shape_n.basis.k)
        fmap, pi = iterative_refine(pi0, zoomout_schedule(settings, k),
                                    shape_m.basis, shape_n.basis)
        return MatchResult(pointwise=pi, fmap=fmap, bank=None, trace=None,
                           baseline=pi0)
    if mode == "jacobi-opt":
        lam_max = max(shape_m.basis.lam[-1], shape_n.basis.lam[-1])
        bank0 = heat_initialized_jacobi(channels=settings.channels,
                                        order=settings.jacobi_order,
                                        lam_max=lam_max,
                                        beta_cap=settings.beta_cap)
        result: OptimizeResult = optimize_filters(
            ShapeData(basis=shape_m.basis, descriptors=shape_m.descriptors,
                      vertices=shape_m.mesh.vertices, stiffness=shape_m.stiffness),
            ShapeData(basis=shape_n.basis, descriptors=shape_n.descriptors,
                      vertices=shape_n.mesh.vertices, stiffness=shape_n.stiffness),
            bank0, optimizer_config(settings), loss_weights(settings),
            settings.lambda_reg)
        pi, fmap = result.pointwise, result.fmap
        if settings.refine_iterations > 0:
            refined_fmap, refined_pi = iterative_refine(
                pi, [result.bank] * settings.refine_iterations,
                shape_m.basis, shape_n.basis)
            fmap, pi = refined_fmap, refined_pi
        return MatchResult(pointwise=pi, fmap=fmap, bank=result.bank,
                           trace=result.trace,
                           baseline=result.initial_pointwise)
    raise DataError(f"unknown mode '{mode}' (choose from {', '.join(MODES)})")


def plot_filter_bank(bank: FilterBank, lam_max: float, path) -> None:
    """Filter response curves h_s(lambda) as an SVG."""
    import matplotlib
    matplotlib.use("svg", force=False)
    import matplotlib.pyplot as plt

    grid, responses = response_curve(bank, lam_max)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for s, row in enumerate(responses):
        ax.plot(grid, row, lw=1.4, label=f"h{s + 1}")
    ax.set_xlabel("eigenvalue" if bank.kind != "ideal" else "eigenvalue index")
    ax.set_ylabel("response")
    ax.set_title(f"{bank.kind} filter bank ({bank.channels} channels)")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_error_curve(report: ErrorReport, path) -> None:
    import matplotlib
    matplotlib.use("svg", force=False)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(report.thresholds, report.fractions, lw=1.6)
    ax.set_xlabel("geodesic error threshold (fraction of diameter)")
    ax.set_ylabel("fraction of correspondences")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(f"mean error x100 = {report.mean_x100:.3f}")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def run_pipeline(src, dst, out_dir, mode: str, settings: Settings,
                 gt_path=None, gt_one_based: bool = False,
                 out_one_based: bool = False) -> dict:
    """Full matching run with all artifacts written under out_dir.

    Returns a summary dict (also written as summary.json).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh_m = load_mesh(src)
    mesh_n = load_mesh(dst)
    shape_m = prepare_shape(mesh_m, settings)
    shape_n = prepare_shape(mesh_n, settings)
    result = run_match(shape_m, shape_n, mode, settings)

    save_p2p(result.pointwise, out / "correspondence.txt", one_based=out_one_based)
    save_fmap(result.fmap, out / "functional_map.txt")
    summary = {"mode": mode, "source": str(src), "target": str(dst),
               "vertices_source": mesh_m.n_vertices,
               "vertices_target": mesh_n.n_vertices,
               "k": int(min(shape_m.basis.k, shape_n.basis.k))}
    if result.bank is not None:
        save_bank(result.bank, out / "bank.txt")
        lam_max = max(shape_m.basis.lam[-1], shape_n.basis.lam[-1])
        plot_filter_bank(result.bank, lam_max, out / "filters.svg")
    if result.trace is not None:
        write_trace_csv(result.trace, out / "loss_trace.csv")
        summary["final_loss"] = result.trace[-1][1].total
    if gt_path is not None:
        gt = load_ground_truth(gt_path, mesh_n.n_vertices, one_based=gt_one_based)
        diameter = geodesic_diameter(mesh_m, settings.diameter_samples,
                                     seed=settings.seed)
        cache = settings.cache_dir or None
        report = mean_geodesic_error(result.pointwise, gt, mesh_n, diameter,
                                     cache_dir=cache)
        write_error_report(report, out / "error_curve.csv",
                           out / "error_summary.txt")
        plot_error_curve(report, out / "error_curve.svg")
        summary["mean_geodesic_error_x100"] = report.mean_x100
        if result.baseline is not None and mode != "descriptor":
            base = mean_geodesic_error(result.baseline, gt, mesh_n, diameter,
                                       cache_dir=cache)
            summary["baseline_error_x100"] = base.mean_x100
            if base.mean > 0:
                summary["error_ratio_vs_baseline"] = report.mean / base.mean
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def run_refine(src, dst, pi_path, out_dir, settings: Settings,
               bank_path=None, bank_kind: Optional[str] = None,
               iterations: Optional[int] = None,
               pi_one_based: bool = False, out_one_based: bool = False) -> dict:
    """Refine an existing correspondence with a filter bank schedule."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh_m = load_mesh(src)
    mesh_n = load_mesh(dst)
    shape_m = prepare_shape(mesh_m, settings)
    shape_n = prepare_shape(mesh_n, settings)
    pi = load_p2p(pi_path, mesh_n.n_vertices, one_based=pi_one_based)
    if len(pi.indices) != mesh_m.n_vertices:
        raise DataError("correspondence length does not match the source mesh")
    steps = iterations if iterations is not None else settings.refine_iterations
    if bank_path is not None:
        bank = load_bank(bank_path)
    elif bank_kind == "heat":
        lam_max = max(shape_m.basis.lam[-1], shape_n.basis.lam[-1])
        times = np.geomspace(0.1, 10.0, settings.channels) / lam_max
        bank = HeatBank(times=tuple(times))
    elif bank_kind == "meyer":
        bank = MeyerBank(scales=settings.channels)
    else:
        raise DataError("refine needs --bank FILE or --bank-kind heat|meyer")
    fmap, pi = iterative_refine(pi, [bank] * max(steps, 1),
                                shape_m.basis, shape_n.basis)
    save_p2p(pi, out / "correspondence.txt", one_based=out_one_based)
    save_fmap(fmap, out / "functional_map.txt")
    save_bank(bank, out / "bank.txt")
    return {"iterations": steps, "source": str(src), "target": str(dst)}
