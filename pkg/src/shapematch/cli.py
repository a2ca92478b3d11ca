"""Command-line interface.

Subcommands: match, refine, eval, filters (plot/inspect), descriptors dump,
mesh dump, selfcheck. Exit codes: 0 success, 1 usage, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import load_settings
from .errors import DataError, NumericalError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shapematch",
                     description="Spectral shape correspondence with "
                                 "filter-refined functional maps")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_settings_args(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")

    m = sub.add_parser("match", help="compute a correspondence between two meshes")
    m.add_argument("--src", required=True, help="source mesh (maps from here)")
    m.add_argument("--dst", required=True, help="target mesh")
    m.add_argument("--mode", default="jacobi-opt",
                   choices=["jacobi-opt", "zoomout", "descriptor"])
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--gt", help="ground-truth correspondence for evaluation")
    m.add_argument("--gt-one-based", action="store_true",
                   help="ground-truth indices are 1-based")
    m.add_argument("--out-one-based", action="store_true",
                   help="write 1-based correspondence indices")
    add_settings_args(m)

    r = sub.add_parser("refine", help="refine an existing correspondence")
    r.add_argument("--src", required=True)
    r.add_argument("--dst", required=True)
    r.add_argument("--pi", required=True, help="initial correspondence file")
    r.add_argument("--pi-one-based", action="store_true")
    r.add_argument("--bank", help="filter bank file")
    r.add_argument("--bank-kind", choices=["heat", "meyer"])
    r.add_argument("--iterations", type=int)
    r.add_argument("--out", required=True)
    r.add_argument("--out-one-based", action="store_true")
    add_settings_args(r)

    e = sub.add_parser("eval", help="mean geodesic error of a correspondence")
    e.add_argument("--src", required=True)
    e.add_argument("--dst", required=True)
    e.add_argument("--pred", required=True, help="predicted correspondence file")
    e.add_argument("--pred-one-based", action="store_true")
    e.add_argument("--gt", required=True)
    e.add_argument("--gt-one-based", action="store_true")
    e.add_argument("--out", required=True)
    add_settings_args(e)

    f = sub.add_parser("filters", help="inspect or plot a filter bank")
    fsub = f.add_subparsers(dest="filters_command", required=True,
                            parser_class=_Parser)
    fp = fsub.add_parser("plot", help="render response curves to SVG")
    fp.add_argument("--bank", required=True)
    fp.add_argument("--lam-max", type=float, default=2.0)
    fp.add_argument("--out", required=True)
    fi = fsub.add_parser("inspect", help="print a bank summary")
    fi.add_argument("--bank", required=True)

    d = sub.add_parser("descriptors", help="descriptor utilities")
    dsub = d.add_subparsers(dest="descriptors_command", required=True,
                            parser_class=_Parser)
    dd = dsub.add_parser("dump", help="export per-vertex descriptors as CSV")
    dd.add_argument("--mesh", required=True)
    dd.add_argument("--kind", default="wks", choices=["wks", "hks"])
    dd.add_argument("--dim", type=int, default=128)
    dd.add_argument("--out", required=True)
    add_settings_args(dd)

    me = sub.add_parser("mesh", help="mesh utilities")
    msub = me.add_subparsers(dest="mesh_command", required=True,
                             parser_class=_Parser)
    md = msub.add_parser("dump", help="echo a mesh back (lossless, order kept)")
    md.add_argument("--mesh", required=True)
    md.add_argument("--format", dest="fmt", choices=["off", "obj", "ply"])
    md.add_argument("--out", required=True)

    s = sub.add_parser("selfcheck", help="run the embedded oracle suite")
    s.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_match(args) -> int:
    from .pipeline import run_pipeline

    settings = load_settings(args.config, args.overrides)
    summary = run_pipeline(args.src, args.dst, args.out, args.mode, settings,
                           gt_path=args.gt, gt_one_based=args.gt_one_based,
                           out_one_based=args.out_one_based)
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_refine(args) -> int:
    from .pipeline import run_refine

    settings = load_settings(args.config, args.overrides)
    summary = run_refine(args.src, args.dst, args.pi, args.out, settings,
                         bank_path=args.bank, bank_kind=args.bank_kind,
                         iterations=args.iterations,
                         pi_one_based=args.pi_one_based,
                         out_one_based=args.out_one_based)
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import (load_ground_truth, mean_geodesic_error,
                           write_error_report)
    from .fmap import load_p2p
    from .mesh import geodesic_diameter, load_mesh
    from .pipeline import plot_error_curve
    from pathlib import Path

    settings = load_settings(args.config, args.overrides)
    mesh_m = load_mesh(args.src)
    mesh_n = load_mesh(args.dst)
    pred = load_p2p(args.pred, mesh_n.n_vertices, one_based=args.pred_one_based)
    if len(pred.indices) != mesh_m.n_vertices:
        raise DataError("prediction length does not match the source mesh")
    gt = load_ground_truth(args.gt, mesh_n.n_vertices, one_based=args.gt_one_based)
    diameter = geodesic_diameter(mesh_m, settings.diameter_samples,
                                 seed=settings.seed)
    report = mean_geodesic_error(pred, gt, mesh_n, diameter,
                                 cache_dir=settings.cache_dir or None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_error_report(report, out / "error_curve.csv", out / "error_summary.txt")
    plot_error_curve(report, out / "error_curve.svg")
    print(f"mean geodesic error (x100): {report.mean_x100:.4f}")
    return 0


def _cmd_filters(args) -> int:
    from .filters import load_bank
    from .pipeline import plot_filter_bank

    bank = load_bank(args.bank)
    if args.filters_command == "plot":
        plot_filter_bank(bank, args.lam_max, args.out)
        print(f"wrote {args.out}")
    else:
        print(f"kind: {bank.kind}")
        print(f"channels: {bank.channels}")
        if bank.kind == "jacobi":
            print(f"order: {bank.order}")
            print(f"a: {bank.a:.6g}  b: {bank.b:.6g}")
            print(f"beta_cap: {bank.beta_cap:.6g}")
            print(f"gains: {np.array2string(bank.betas, precision=4)}")
        elif bank.kind == "heat":
            print(f"times: {tuple(bank.times)}")
        elif bank.kind == "ideal":
            print(f"cutoffs: {tuple(bank.cutoffs)}")
        elif bank.kind == "meyer":
            print(f"scales: {bank.scales}")
    return 0


def _cmd_descriptors(args) -> int:
    from .descriptors import dump_csv, hks, wks
    from .mesh import load_mesh
    from .spectral import mesh_basis

    settings = load_settings(args.config, args.overrides)
    mesh = load_mesh(args.mesh)
    k = min(settings.k, mesh.n_vertices)
    basis = mesh_basis(mesh, k, cache_dir=settings.cache_dir or None,
                       dense_cutoff=settings.dense_cutoff)
    if args.kind == "wks":
        desc = wks(basis, dim=args.dim, variance_factor=settings.wks_variance)
    else:
        times = np.geomspace(4 * np.log(10) / basis.lam[-1],
                             4 * np.log(10) / max(basis.lam[1], 1e-12),
                             args.dim)
        desc = hks(basis, times)
    dump_csv(desc, args.out)
    print(f"wrote {args.out} ({desc.values.shape[0]} x {desc.dim})")
    return 0


def _cmd_mesh(args) -> int:
    from .mesh import load_mesh, save_mesh

    mesh = load_mesh(args.mesh)
    save_mesh(mesh, args.out, fmt=args.fmt)
    print(f"wrote {args.out} ({mesh.n_vertices} vertices, {mesh.n_faces} faces)")
    return 0


def _cmd_selfcheck(args) -> int:
    from .verify import run_selfcheck

    results = run_selfcheck(seed=args.seed)
    failed = 0
    for r in results:
        tag = "PASS" if r.passed else "FAIL"
        print(f"{tag}  {r.name} — {r.detail}")
        failed += 0 if r.passed else 1
    if failed:
        print(f"{failed}/{len(results)} checks failed")
        return 3
    print(f"all {len(results)} checks passed")
    return 0


_HANDLERS = {
    "match": _cmd_match,
    "refine": _cmd_refine,
    "eval": _cmd_eval,
    "filters": _cmd_filters,
    "descriptors": _cmd_descriptors,
    "mesh": _cmd_mesh,
    "selfcheck": _cmd_selfcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except DataError as exc:
        print(f"shapematch: data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"shapematch: numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"shapematch: i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
