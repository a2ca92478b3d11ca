import numpy as np
import pytest
from scipy.linalg import eigh

import oracles
from shapematch import synthetic
from shapematch.errors import DataError
from shapematch.mesh import MassMatrix, assemble_operators
from shapematch.spectral import (SpectralBasis, eigendecompose, embed,
                                 load_basis, mesh_basis, project, save_basis)


def test_first_eigenpair_is_constant(strip_basis, strip):
    mass, _ = assemble_operators(strip)
    expected = 1.0 / np.sqrt(mass.total_area)
    # sign convention makes the constant eigenfunction positive
    assert np.allclose(strip_basis.phi[:, 0], expected, atol=1e-8)
    assert abs(strip_basis.lam[0]) <= 1e-8 * strip_basis.lam[-1]


def test_chain_laplacian_matches_dense_oracle():
    # 1-d path-graph analogue of the generalized problem
    b = np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
    a = np.array([0.5, 1.0, 0.5])
    basis = eigendecompose(b, a, 3)
    s = 1.0 / np.sqrt(a)
    ref_vals = eigh(s[:, None] * b * s[None, :], eigvals_only=True)
    assert np.allclose(basis.lam, ref_vals, atol=1e-12)


def test_complete_basis_reconstructs():
    mesh = synthetic.bumpy_strip(nx=5, ny=2)  # 10 vertices
    mass, stiff = assemble_operators(mesh)
    basis = eigendecompose(stiff, mass, mesh.n_vertices)
    rng = np.random.default_rng(0)
    f = rng.standard_normal(mesh.n_vertices)
    recon = basis.phi @ project(basis, f)
    assert np.abs(recon - f).max() <= 1e-8


def test_invalid_k(strip):
    mass, stiff = assemble_operators(strip)
    with pytest.raises(DataError):
        eigendecompose(stiff, mass, strip.n_vertices + 1)
    with pytest.raises(DataError):
        eigendecompose(stiff, mass, 0)


def test_lanczos_matches_dense(sphere):
    mass, stiff = assemble_operators(sphere)
    dense = eigendecompose(stiff, mass, 25, method="dense")
    lanczos = eigendecompose(stiff, mass, 25, method="lanczos")
    assert np.allclose(dense.lam, lanczos.lam,
                       atol=1e-8 * max(dense.lam[-1], 1.0))


def test_residuals_and_orthonormality(sphere):
    from scipy import sparse
    mass, stiff = assemble_operators(sphere)
    basis = eigendecompose(stiff, mass, 30, method="lanczos")
    gram = basis.phi.T @ (mass.diag[:, None] * basis.phi)
    assert np.abs(gram - np.eye(30)).max() <= 1e-8
    b_norm = sparse.linalg.norm(stiff.matrix, 1)
    resid = stiff.matrix @ basis.phi \
        - (mass.diag[:, None] * basis.phi) * basis.lam[None, :]
    assert np.linalg.norm(resid, axis=0).max() <= 1e-8 * b_norm


def test_truncation_nesting(strip):
    mass, stiff = assemble_operators(strip)
    full = eigendecompose(stiff, mass, 20)
    small = eigendecompose(stiff, mass, 12)
    gap = 1e-6 * full.lam[-1]
    for i in range(12):
        in_cluster = (i + 1 < 20 and full.lam[i + 1] - full.lam[i] < gap) or \
            (i > 0 and full.lam[i] - full.lam[i - 1] < gap)
        assert abs(full.lam[i] - small.lam[i]) <= 1e-6 * max(full.lam[-1], 1.0)
        if not in_cluster:
            assert np.abs(full.phi[:, i] - small.phi[:, i]).max() <= 1e-6


def test_project_unit_vector(strip_basis):
    coeff = project(strip_basis, strip_basis.phi[:, 2])
    expected = np.zeros(strip_basis.k)
    expected[2] = 1.0
    assert np.allclose(coeff, expected, atol=1e-10)
    assert np.allclose(project(strip_basis, np.zeros(strip_basis.n)), 0.0)


def test_project_is_best_approximation(strip_basis):
    rng = np.random.default_rng(3)
    f = rng.standard_normal(strip_basis.n)
    coeff = project(strip_basis, f)
    oracle = oracles.dense_projection(strip_basis.phi, strip_basis.mass.diag, f)
    assert np.allclose(coeff, oracle, atol=1e-10)
    a = strip_basis.mass.diag
    err = f - strip_basis.phi @ coeff
    assert np.sqrt(err @ (a * err)) <= np.sqrt(f @ (a * f))
    # equality iff f in span: a function already in the span reconstructs
    g = strip_basis.phi @ rng.standard_normal(strip_basis.k)
    assert np.abs(strip_basis.phi @ project(strip_basis, g) - g).max() <= 1e-10


def test_project_length_mismatch(strip_basis):
    with pytest.raises(DataError):
        project(strip_basis, np.zeros(strip_basis.n + 1))


def test_embed(strip_basis):
    k = strip_basis.k
    assert np.allclose(embed(strip_basis, np.eye(k)), strip_basis.phi)
    assert np.allclose(embed(strip_basis, np.zeros((k, k))), 0.0)
    rng = np.random.default_rng(4)
    c = rng.standard_normal((7, k))
    emb = embed(strip_basis, c)
    for i in range(0, strip_basis.n, 37):
        assert np.allclose(emb[i], c @ strip_basis.phi[i], atol=1e-12)
    with pytest.raises(DataError):
        embed(strip_basis, np.zeros((5, k + 1)))


def test_cache_roundtrip(tmp_path, strip_basis):
    record = tmp_path / "basis.spec"
    save_basis(strip_basis, record)
    back = load_basis(record, strip_basis.mass)
    assert np.array_equal(back.lam, strip_basis.lam)
    assert np.array_equal(back.phi, strip_basis.phi)
    # the record layout is n, k as int64 then little-endian doubles
    raw = np.fromfile(record, dtype="<i8", count=2)
    assert raw[0] == strip_basis.n and raw[1] == strip_basis.k


def test_mesh_basis_cache(tmp_path, strip):
    b1 = mesh_basis(strip, 10, cache_dir=tmp_path)
    files = list(tmp_path.glob("*.spec"))
    assert len(files) == 1
    b2 = mesh_basis(strip, 10, cache_dir=tmp_path)
    assert np.array_equal(b1.phi, b2.phi)
    assert np.array_equal(b1.lam, b2.lam)


def test_lanczos_nonconvergence_reports(sphere):
    from shapematch.errors import NumericalError
    mass, stiff = assemble_operators(sphere)
    with pytest.raises(NumericalError, match="eigenpairs"):
        eigendecompose(stiff, mass, 25, method="lanczos", maxiter=1)
