import numpy as np
import pytest

import oracles
from shapematch import synthetic
from shapematch.descriptors import dump_csv, hks, l2_normalize, wks
from shapematch.errors import DataError
from shapematch.mesh import assemble_operators
from shapematch.spectral import eigendecompose


def test_wks_matches_straight_loop(strip_basis):
    desc = wks(strip_basis, dim=24, variance_factor=7.0)
    oracle = oracles.wks_loop(strip_basis.phi, strip_basis.lam, 24, 7.0)
    assert np.abs(desc.values - oracle).max() <= 1e-10


def test_wks_single_column(strip_basis):
    desc = wks(strip_basis, dim=1)
    assert desc.values.shape == (strip_basis.n, 1)
    assert np.isfinite(desc.values).all()
    assert (desc.values >= 0).all()


def test_wks_permutation_equivariance(strip):
    copy, perm = synthetic.permuted_copy(strip, seed=5)
    mass_a, stiff_a = assemble_operators(strip)
    mass_b, stiff_b = assemble_operators(copy)
    basis_a = eigendecompose(stiff_a, mass_a, 16)
    basis_b = eigendecompose(stiff_b, mass_b, 16)
    da = wks(basis_a, dim=20).values
    db = wks(basis_b, dim=20).values
    assert np.abs(db[perm] - da).max() <= 1e-8


def test_wks_scaling_shifts_energy_grid(strip):
    mass, stiff = assemble_operators(strip)
    basis = eigendecompose(stiff, mass, 12)
    scaled = strip.scaled(2.0)
    mass2, stiff2 = assemble_operators(scaled)
    basis2 = eigendecompose(stiff2, mass2, 12)
    # uniform scaling by s rescales eigenvalues by 1/s^2
    assert np.allclose(basis2.lam[1:], basis.lam[1:] / 4.0, rtol=1e-8)
    e1 = wks(basis, dim=8).params["energies"]
    e2 = wks(basis2, dim=8).params["energies"]
    assert np.allclose(e2, e1 + np.log(1.0 / 4.0), atol=1e-8)


def test_hks_matches_straight_loop(strip_basis):
    times = np.array([0.05, 0.3, 2.0])
    desc = hks(strip_basis, times)
    oracle = oracles.hks_loop(strip_basis.phi, strip_basis.lam, times)
    assert np.abs(desc.values - oracle).max() <= 1e-10


def test_hks_limits(strip_basis):
    # very large time: dominated by the constant eigenfunction
    desc = hks(strip_basis, [1e6 / strip_basis.lam[1]])
    ref = strip_basis.phi[:, 0] ** 2
    assert np.allclose(desc.values[:, 0] / ref, 1.0, atol=1e-6)
    # zero time: plain sum of squared eigenfunctions, finite
    desc0 = hks(strip_basis, [0.0])
    assert np.allclose(desc0.values[:, 0], (strip_basis.phi ** 2).sum(axis=1))


def test_hks_negative_time_rejected(strip_basis):
    with pytest.raises(DataError):
        hks(strip_basis, [-1.0])


def test_l2_normalize(strip_basis):
    desc = l2_normalize(wks(strip_basis, dim=12))
    norms = np.linalg.norm(desc.values, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-12)


def test_dump_csv(tmp_path, strip_basis):
    desc = wks(strip_basis, dim=4)
    out = tmp_path / "desc.csv"
    dump_csv(desc, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "vertex,wks_0,wks_1,wks_2,wks_3"
    assert len(lines) == strip_basis.n + 1
    row = lines[3].split(",")
    assert int(row[0]) == 2
    assert np.allclose([float(t) for t in row[1:]], desc.values[2])
