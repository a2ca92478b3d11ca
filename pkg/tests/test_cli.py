import json

import numpy as np
import pytest

from shapematch import synthetic
from shapematch.cli import main
from shapematch.mesh import load_mesh, save_mesh

FAST = ["--set", "k=16", "--set", "wks_dim=24", "--set", "max_steps=20",
        "--set", "outer_rounds=2", "--set", "refine_iterations=3",
        "--set", "zoomout_start=8", "--set", "zoomout_step=4",
        "--set", "diameter_samples=30"]


@pytest.fixture(scope="module")
def pair_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("pair")
    mesh_m, mesh_n, gt = synthetic.bent_strip_pair(nx=16, ny=10, angle=1.8)
    save_mesh(mesh_m, root / "flat.off")
    save_mesh(mesh_n, root / "bent.off")
    (root / "gt.txt").write_text("\n".join(str(i) for i in gt) + "\n")
    return root


def test_usage_error_exit_code(capsys):
    assert main(["match", "--src", "a.off"]) == 1
    assert main(["bogus"]) == 1
    assert main(["filters"]) == 1


def test_missing_file_is_data_error(tmp_path):
    rc = main(["match", "--src", str(tmp_path / "no.off"),
               "--dst", str(tmp_path / "no2.off"),
               "--out", str(tmp_path / "out")])
    assert rc == 2


def test_bad_config_key(tmp_path, pair_files):
    rc = main(["match", "--src", str(pair_files / "flat.off"),
               "--dst", str(pair_files / "bent.off"),
               "--out", str(tmp_path / "out"), "--set", "nonsense=1"])
    assert rc == 2


def test_match_descriptor_mode(tmp_path, pair_files, capsys):
    out = tmp_path / "out"
    rc = main(["match", "--src", str(pair_files / "flat.off"),
               "--dst", str(pair_files / "bent.off"), "--mode", "descriptor",
               "--out", str(out), "--gt", str(pair_files / "gt.txt")] + FAST)
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert "mean_geodesic_error_x100" in summary
    assert (out / "correspondence.txt").exists()
    assert (out / "functional_map.txt").exists()
    assert (out / "error_curve.svg").read_text().startswith("<?xml")


def test_match_zoomout_and_eval_consistency(tmp_path, pair_files, capsys):
    out = tmp_path / "zo"
    rc = main(["match", "--src", str(pair_files / "flat.off"),
               "--dst", str(pair_files / "bent.off"), "--mode", "zoomout",
               "--out", str(out), "--gt", str(pair_files / "gt.txt")] + FAST)
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    evout = tmp_path / "ev"
    rc = main(["eval", "--src", str(pair_files / "flat.off"),
               "--dst", str(pair_files / "bent.off"),
               "--pred", str(out / "correspondence.txt"),
               "--gt", str(pair_files / "gt.txt"),
               "--out", str(evout)] + FAST)
    assert rc == 0
    text = (evout / "error_summary.txt").read_text()
    reported = float(text.splitlines()[0].split()[1])
    assert reported == pytest.approx(summary["mean_geodesic_error_x100"],
                                     abs=1e-4)


def test_match_jacobi_opt_writes_everything(tmp_path, pair_files):
    out = tmp_path / "jo"
    rc = main(["match", "--src", str(pair_files / "flat.off"),
               "--dst", str(pair_files / "bent.off"), "--mode", "jacobi-opt",
               "--out", str(out), "--gt", str(pair_files / "gt.txt")] + FAST)
    assert rc == 0
    for name in ("correspondence.txt", "functional_map.txt", "bank.txt",
                 "loss_trace.csv", "error_curve.csv", "error_curve.svg",
                 "filters.svg", "summary.json"):
        assert (out / name).exists(), name
    trace = (out / "loss_trace.csv").read_text().splitlines()
    assert trace[0] == "iteration,freq,bi,or,smooth,total"
    totals = [float(line.split(",")[-1]) for line in trace[1:]]
    assert all(a >= b for a, b in zip(totals, totals[1:]))


def test_refine_with_bank_file(tmp_path, pair_files):
    jo = tmp_path / "jo2"
    rc = main(["match", "--src", str(pair_files / "flat.off"),
               "--dst", str(pair_files / "bent.off"), "--mode", "descriptor",
               "--out", str(jo)] + FAST)
    assert rc == 0
    out = tmp_path / "ref"
    rc = main(["refine", "--src", str(pair_files / "flat.off"),
               "--dst", str(pair_files / "bent.off"),
               "--pi", str(jo / "correspondence.txt"),
               "--bank-kind", "heat", "--iterations", "3",
               "--out", str(out)] + FAST)
    assert rc == 0
    assert (out / "correspondence.txt").exists()


def test_refine_requires_bank(tmp_path, pair_files):
    rc = main(["refine", "--src", str(pair_files / "flat.off"),
               "--dst", str(pair_files / "bent.off"),
               "--pi", str(pair_files / "gt.txt"),
               "--out", str(tmp_path / "r")] + FAST)
    assert rc == 2


def test_filters_plot_and_inspect(tmp_path, capsys):
    from shapematch.filters import HeatBank, save_bank
    bank_path = tmp_path / "bank.txt"
    save_bank(HeatBank(times=(0.5, 2.0)), bank_path)
    svg = tmp_path / "bank.svg"
    assert main(["filters", "plot", "--bank", str(bank_path),
                 "--lam-max", "4", "--out", str(svg)]) == 0
    assert svg.read_text().startswith("<?xml")
    assert main(["filters", "inspect", "--bank", str(bank_path)]) == 0
    assert "kind: heat" in capsys.readouterr().out


def test_descriptors_dump(tmp_path, pair_files):
    out = tmp_path / "wks.csv"
    rc = main(["descriptors", "dump", "--mesh", str(pair_files / "flat.off"),
               "--kind", "wks", "--dim", "8", "--out", str(out)] + FAST)
    assert rc == 0
    assert out.read_text().splitlines()[0].startswith("vertex,wks_0")


def test_mesh_dump_lossless(tmp_path, pair_files):
    out = tmp_path / "echo.ply"
    rc = main(["mesh", "dump", "--mesh", str(pair_files / "flat.off"),
               "--format", "ply", "--out", str(out)])
    assert rc == 0
    orig = load_mesh(pair_files / "flat.off")
    back = load_mesh(out)
    assert np.array_equal(back.vertices, orig.vertices)
    assert np.array_equal(back.faces, orig.faces)


def test_gt_one_based_flag(tmp_path, pair_files):
    gt1 = tmp_path / "gt1.txt"
    zero = np.loadtxt(pair_files / "gt.txt", dtype=int)
    gt1.write_text("\n".join(str(i + 1) for i in zero) + "\n")
    out = tmp_path / "ob"
    rc = main(["match", "--src", str(pair_files / "flat.off"),
               "--dst", str(pair_files / "bent.off"), "--mode", "descriptor",
               "--out", str(out), "--gt", str(gt1), "--gt-one-based"] + FAST)
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    ref = tmp_path / "rb"
    rc = main(["match", "--src", str(pair_files / "flat.off"),
               "--dst", str(pair_files / "bent.off"), "--mode", "descriptor",
               "--out", str(ref), "--gt", str(pair_files / "gt.txt")] + FAST)
    ref_summary = json.loads((ref / "summary.json").read_text())
    assert summary["mean_geodesic_error_x100"] == \
        ref_summary["mean_geodesic_error_x100"]


def test_config_file_and_override(tmp_path, pair_files):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("k=16\nwks_dim=24\n# comment\nzoomout_start=8\n")
    out = tmp_path / "cf"
    rc = main(["match", "--src", str(pair_files / "flat.off"),
               "--dst", str(pair_files / "bent.off"), "--mode", "descriptor",
               "--out", str(out), "--config", str(cfg), "--set", "k=12"])
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["k"] == 12


def test_zoomout_pipeline_matches_reference_oracle(tmp_path, pair_files):
    import oracles
    from shapematch.descriptors import l2_normalize, wks
    from shapematch.fmap import p2p_from_features
    from shapematch.mesh import assemble_operators
    from shapematch.spectral import eigendecompose

    out = tmp_path / "zoracle"
    rc = main(["match", "--src", str(pair_files / "flat.off"),
               "--dst", str(pair_files / "bent.off"), "--mode", "zoomout",
               "--out", str(out)] + FAST)
    assert rc == 0
    mesh_m = load_mesh(pair_files / "flat.off")
    mesh_n = load_mesh(pair_files / "bent.off")
    mass_m, stiff_m = assemble_operators(mesh_m)
    mass_n, stiff_n = assemble_operators(mesh_n)
    basis_m = eigendecompose(stiff_m, mass_m, 16)
    basis_n = eigendecompose(stiff_n, mass_n, 16)
    dm = l2_normalize(wks(basis_m, dim=24)).values
    dn = l2_normalize(wks(basis_n, dim=24)).values
    pi0 = p2p_from_features(dm, dn)
    _, idx_ref = oracles.reference_zoomout(
        pi0.indices, basis_m.phi, basis_n.phi, basis_m.mass.diag,
        [8, 12, 16])
    written = [int(t) for t in (out / "correspondence.txt").read_text().split()]
    assert written == list(idx_ref)
