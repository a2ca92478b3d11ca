import numpy as np
import pytest

import oracles
from shapematch import synthetic
from shapematch.errors import ConsistencyError, DataError, NumericalError
from shapematch.descriptors import wks
from shapematch.filters import HeatBank, IdealBank, eval_bank
from shapematch.fmap import (FunctionalMap, PointwiseMap, filter_refine_fmap,
                             fmap_from_p2p, iterative_refine, load_fmap,
                             load_p2p, min_row_separation, nearest_rows,
                             p2p_from_features, p2p_from_fmap, save_fmap,
                             save_p2p, soft_p2p, solve_fmap_descriptors)
from shapematch.mesh import assemble_operators
from shapematch.spectral import SpectralBasis, eigendecompose


@pytest.fixture(scope="module")
def permuted(strip):
    copy, perm = synthetic.permuted_copy(strip, seed=9)
    mass_a, stiff_a = assemble_operators(strip)
    mass_b, stiff_b = assemble_operators(copy)
    basis_a = eigendecompose(stiff_a, mass_a, 18)
    basis_b = eigendecompose(stiff_b, mass_b, 18)
    return basis_a, basis_b, perm, copy


# -- solve_fmap_descriptors --------------------------------------------------

def test_descriptor_solve_identity_self_pair(strip_basis):
    rng = np.random.default_rng(20)
    desc = rng.standard_normal((strip_basis.n, 30))  # full-rank coefficients
    fmap = solve_fmap_descriptors(strip_basis, strip_basis, desc, desc, 0.0)
    assert np.abs(fmap.matrix - np.eye(strip_basis.k)).max() <= 1e-8


def test_descriptor_solve_large_penalty_disjoint_spectra(strip_basis):
    rng = np.random.default_rng(21)
    desc = rng.standard_normal((strip_basis.n, 25))
    basis_m = SpectralBasis(strip_basis.phi, np.arange(strip_basis.k) * 1.0,
                            strip_basis.mass, strip_basis.k)
    basis_n = SpectralBasis(strip_basis.phi, np.arange(strip_basis.k) + 0.5,
                            strip_basis.mass, strip_basis.k)
    fmap = solve_fmap_descriptors(basis_m, basis_n, desc, desc, 1e14)
    assert np.abs(fmap.matrix).max() <= 1e-6


def test_descriptor_solve_optimality(strip_basis, bent_pair):
    basis_m = bent_pair["basis_m"].truncate(10)
    basis_n = bent_pair["basis_n"].truncate(10)
    rng = np.random.default_rng(22)
    dm = rng.standard_normal((basis_m.n, 15))
    dn = rng.standard_normal((basis_n.n, 15))
    lam_reg = 0.3
    fmap = solve_fmap_descriptors(basis_m, basis_n, dm, dn, lam_reg)
    from shapematch.spectral import project
    cm, cn = project(basis_m, dm), project(basis_n, dn)
    best = oracles.dense_fmap_objective(fmap.matrix, cm, cn,
                                        basis_m.lam, basis_n.lam, lam_reg)
    for _ in range(100):
        probe = fmap.matrix + 1e-4 * rng.standard_normal(fmap.shape)
        assert oracles.dense_fmap_objective(probe, cm, cn, basis_m.lam,
                                            basis_n.lam, lam_reg) >= best
    # dense normal-equation oracle per row
    gram = cn @ cn.T
    for i in range(basis_m.k):
        system = gram + lam_reg * np.diag((basis_n.lam - basis_m.lam[i]) ** 2)
        ref = np.linalg.solve(system, cn @ cm[i])
        assert np.allclose(fmap.matrix[i], ref, atol=1e-10)


def test_descriptor_solve_rank_deficient(strip_basis):
    desc = wks(strip_basis, dim=3).values  # 3 descriptors < k
    with pytest.raises(NumericalError, match="lambda_reg"):
        solve_fmap_descriptors(strip_basis, strip_basis, desc, desc, 0.0)


def test_descriptor_dim_mismatch(strip_basis):
    with pytest.raises(DataError):
        solve_fmap_descriptors(strip_basis, strip_basis,
                               np.zeros((strip_basis.n, 3)),
                               np.zeros((strip_basis.n, 4)), 1.0)


# -- fmap_from_p2p -----------------------------------------------------------

def test_projection_identity_self_map(strip_basis):
    pi = PointwiseMap(n_target=strip_basis.n,
                      indices=np.arange(strip_basis.n))
    c = fmap_from_p2p(pi, strip_basis, strip_basis)
    assert np.abs(c.matrix - np.eye(strip_basis.k)).max() <= 1e-8


def test_projection_uniform_soft_map(strip_basis):
    n = strip_basis.n
    pi = PointwiseMap(n_target=n, matrix=np.full((n, n), 1.0 / n))
    c = fmap_from_p2p(pi, strip_basis, strip_basis)
    # dense oracle
    ref = strip_basis.phi.T @ (strip_basis.mass.diag[:, None]
                               * np.full((n, n), 1.0 / n) @ strip_basis.phi)
    assert np.allclose(c.matrix, ref, atol=1e-12)
    # a uniform map produces constant images: only the first coefficient row
    # of the projected map survives
    assert np.abs(c.matrix[1:]).max() <= 1e-10
    assert np.abs(c.matrix[0]).max() > 1e-3


def test_projection_permuted_copy_orthogonal(permuted):
    basis_a, basis_b, perm, _ = permuted
    pi = PointwiseMap(n_target=len(perm), indices=perm)
    c = fmap_from_p2p(pi, basis_a, basis_b).matrix
    assert np.abs(c @ c.T - np.eye(basis_a.k)).max() <= 1e-6


# -- filter_refine_fmap ------------------------------------------------------

def test_refine_all_pass_is_identity_operation():
    rng = np.random.default_rng(23)
    lam = np.sort(rng.uniform(0, 3, 12))
    resp = eval_bank(HeatBank(times=(0.0,)), lam)  # h = 1 everywhere
    c_pi = FunctionalMap(rng.standard_normal((12, 12)))
    out = filter_refine_fmap(c_pi, resp, resp)
    assert np.array_equal(out.matrix, c_pi.matrix)


def test_refine_identity_map_any_admissible_bank():
    lam = np.linspace(0.0, 4.0, 9)
    bank = HeatBank(times=(0.1, 1.0, 3.0))
    resp = eval_bank(bank, lam)
    out = filter_refine_fmap(FunctionalMap(np.eye(9)), resp, resp)
    assert np.abs(out.matrix - np.eye(9)).max() <= 1e-12


def test_refine_matches_dense_least_squares():
    rng = np.random.default_rng(24)
    for _ in range(25):
        k_m, k_n = rng.integers(4, 31), rng.integers(4, 31)
        channels = int(rng.integers(1, 5))
        lam_m = np.sort(rng.uniform(0, 2, k_m))
        lam_n = np.sort(rng.uniform(0, 2, k_n))
        bank = HeatBank(times=tuple(rng.uniform(0.05, 2.0, channels)))
        resp_m = eval_bank(bank, lam_m)
        resp_n = eval_bank(bank, lam_n)
        c_pi = rng.standard_normal((k_m, k_n))
        out = filter_refine_fmap(FunctionalMap(c_pi), resp_m, resp_n).matrix
        ref = oracles.refine_least_squares(c_pi, resp_m.values, resp_n.values)
        assert np.abs(out - ref).max() <= 1e-8


def test_refine_heat_single_channel_kernel():
    rng = np.random.default_rng(25)
    lam_m = np.sort(rng.uniform(0, 2, 8))
    lam_n = np.sort(rng.uniform(0, 2, 8))
    t = 0.4
    resp_m = eval_bank(HeatBank(times=(t,)), lam_m)
    resp_n = eval_bank(HeatBank(times=(t,)), lam_n)
    c_pi = rng.standard_normal((8, 8))
    out = filter_refine_fmap(FunctionalMap(c_pi), resp_m, resp_n).matrix
    ref = c_pi * np.exp(-t * (lam_m[:, None] + lam_n[None, :])) \
        / np.exp(-2 * t * lam_n[None, :])
    assert np.abs(out - ref).max() <= 1e-12


def test_refine_consistency_violation():
    lam = np.linspace(0.0, 10.0, 8)
    resp_ok = eval_bank(HeatBank(times=(0.0,)), lam)
    bad = eval_bank(HeatBank(times=(0.0,)), lam)
    object.__setattr__(bad, "energy", np.zeros(8))
    with pytest.raises(ConsistencyError):
        filter_refine_fmap(FunctionalMap(np.eye(8)), resp_ok, bad)


# -- pointwise conversions ---------------------------------------------------

def test_p2p_from_fmap_identity(strip_basis):
    assert min_row_separation(strip_basis.phi) > 0  # precondition, checked
    pi = p2p_from_fmap(FunctionalMap(np.eye(strip_basis.k)),
                       strip_basis, strip_basis)
    assert np.array_equal(pi.indices, np.arange(strip_basis.n))


def test_p2p_from_fmap_permutation_recovery(permuted):
    basis_a, basis_b, perm, _ = permuted
    pi_gt = PointwiseMap(n_target=len(perm), indices=perm)
    c = fmap_from_p2p(pi_gt, basis_a, basis_b)
    emb = basis_b.phi @ c.matrix.T
    assert min_row_separation(emb) > 0
    pi = p2p_from_fmap(c, basis_a, basis_b)
    assert np.array_equal(pi.indices, perm)


def test_p2p_from_fmap_matches_brute_force(strip_basis):
    rng = np.random.default_rng(26)
    c = rng.standard_normal((strip_basis.k, strip_basis.k))
    pi = p2p_from_fmap(FunctionalMap(c), strip_basis, strip_basis)
    ref = oracles.brute_force_nn(strip_basis.phi @ c.T, strip_basis.phi)
    assert np.array_equal(pi.indices, ref)


def test_soft_p2p_two_by_two():
    eye = np.eye(2)
    pi = soft_p2p(eye, eye, tau=1.0)
    e = np.exp(1.0)
    strong, weak = e / (e + 1.0), 1.0 / (e + 1.0)
    assert pi.matrix[0] == pytest.approx([strong, weak], abs=1e-12)
    assert pi.matrix[1] == pytest.approx([weak, strong], abs=1e-12)
    assert strong == pytest.approx(0.7311, abs=5e-5)


def test_soft_p2p_sharp_limit(strip_basis):
    rng = np.random.default_rng(27)
    dm = rng.standard_normal((40, 6))
    dn = rng.standard_normal((50, 6))
    soft = soft_p2p(dm, dn, tau=1e-4)
    hard = np.argmax(dm @ dn.T, axis=1)
    assert np.array_equal(np.argmax(soft.matrix, axis=1), hard)
    assert soft.matrix.max(axis=1).min() > 0.999


def test_soft_p2p_rows_sum_to_one(strip_basis):
    rng = np.random.default_rng(28)
    pi = soft_p2p(rng.standard_normal((30, 5)), rng.standard_normal((44, 5)),
                  tau=0.07)
    assert np.abs(pi.matrix.sum(axis=1) - 1.0).max() <= 1e-9
    with pytest.raises(DataError):
        soft_p2p(np.zeros((3, 2)), np.zeros((3, 2)), tau=0.0)


def test_p2p_from_features_cases():
    d = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 3.0]])
    assert np.array_equal(p2p_from_features(d, d).indices, [0, 1, 2])
    crossing = p2p_from_features(np.array([[0.0], [1.0]]),
                                 np.array([[1.0], [0.0]]))
    assert np.array_equal(crossing.indices, [1, 0])
    rng = np.random.default_rng(29)
    dm, dn = rng.standard_normal((35, 7)), rng.standard_normal((41, 7))
    assert np.array_equal(p2p_from_features(dm, dn).indices,
                          oracles.brute_force_nn(dn, dm))


def test_nearest_rows_brute_vs_tree(monkeypatch):
    import shapematch.fmap as fm
    rng = np.random.default_rng(30)
    db, q = rng.standard_normal((300, 5)), rng.standard_normal((200, 5))
    brute = nearest_rows(db, q)
    monkeypatch.setattr(fm, "BRUTE_FORCE_LIMIT", 10)
    tree = nearest_rows(db, q)
    assert np.array_equal(brute, tree)


# -- iterative refinement ----------------------------------------------------

def test_iterative_refine_matches_reference_zoomout(bent_pair,
                                                    bent_pair_descriptors):
    basis_m, basis_n = bent_pair["basis_m"], bent_pair["basis_n"]
    dm, dn = bent_pair_descriptors
    pi0 = p2p_from_features(dm, dn)
    schedule = [8, 12, 16, 20, 24]
    cs_ref, idx_ref = oracles.reference_zoomout(
        pi0.indices, basis_m.phi, basis_n.phi, basis_m.mass.diag, schedule)
    pi = pi0
    for width, c_ref in zip(schedule, cs_ref):
        fmap, pi = iterative_refine(pi, [width], basis_m, basis_n)
        assert np.abs(fmap.matrix - c_ref).max() <= 1e-9
    assert np.array_equal(pi.indices, idx_ref)


def test_single_all_pass_bank_is_one_refinement_step(bent_pair,
                                                     bent_pair_descriptors):
    basis_m, basis_n = bent_pair["basis_m"], bent_pair["basis_n"]
    dm, dn = bent_pair_descriptors
    pi0 = p2p_from_features(dm, dn)
    bank = HeatBank(times=(0.4 / basis_m.lam[-1],))
    fmap, pi = iterative_refine(pi0, [bank], basis_m, basis_n)
    resp_m = eval_bank(bank, basis_m.lam)
    resp_n = eval_bank(bank, basis_n.lam)
    c_pi = fmap_from_p2p(pi0, basis_m, basis_n)
    direct = filter_refine_fmap(c_pi, resp_m, resp_n)
    assert np.array_equal(fmap.matrix, direct.matrix)
    assert np.array_equal(pi.indices,
                          p2p_from_fmap(direct, basis_m, basis_n).indices)


def test_iterative_refine_self_fixed_point(strip_basis):
    pi0 = PointwiseMap(n_target=strip_basis.n,
                       indices=np.arange(strip_basis.n))
    _, pi = iterative_refine(pi0, [10, 15, 20], strip_basis, strip_basis)
    assert np.array_equal(pi.indices, pi0.indices)


def test_iterative_refine_validation(strip_basis):
    pi0 = PointwiseMap(n_target=strip_basis.n,
                       indices=np.arange(strip_basis.n))
    with pytest.raises(DataError):
        iterative_refine(pi0, [], strip_basis, strip_basis)
    with pytest.raises(DataError):
        iterative_refine(pi0, [strip_basis.k + 5], strip_basis, strip_basis)


# -- import/export -----------------------------------------------------------

def test_fmap_roundtrip(tmp_path):
    rng = np.random.default_rng(31)
    fmap = FunctionalMap(rng.standard_normal((6, 9)))
    path = tmp_path / "c.txt"
    save_fmap(fmap, path)
    back = load_fmap(path)
    assert np.array_equal(back.matrix, fmap.matrix)
    assert len(path.read_text().splitlines()) == 6


def test_p2p_roundtrip_one_based(tmp_path):
    pi = PointwiseMap(n_target=10, indices=np.array([0, 9, 3]))
    path = tmp_path / "pi.txt"
    save_p2p(pi, path, one_based=True)
    assert path.read_text().split() == ["1", "10", "4"]
    back = load_p2p(path, 10, one_based=True)
    assert np.array_equal(back.indices, pi.indices)


def test_pointwise_map_validation():
    with pytest.raises(DataError):
        PointwiseMap(n_target=5, indices=np.array([0, 5]))
    with pytest.raises(DataError):
        PointwiseMap(n_target=2, matrix=np.array([[0.5, 0.4]]))
    with pytest.raises(DataError):
        PointwiseMap(n_target=2)


def test_rectangular_maps_supported(bent_pair, bent_pair_descriptors):
    basis_m = bent_pair["basis_m"].truncate(8)
    basis_n = bent_pair["basis_n"].truncate(13)
    dm, dn = bent_pair_descriptors
    fmap = solve_fmap_descriptors(basis_m, basis_n, dm, dn, 10.0)
    assert fmap.shape == (8, 13)
    pi = p2p_from_fmap(fmap, basis_m, basis_n)
    assert pi.n_source == basis_m.n
    c_pi = fmap_from_p2p(pi, basis_m, basis_n)
    assert c_pi.shape == (8, 13)
    bank = HeatBank(times=(0.5 / basis_n.lam[-1],))
    out = filter_refine_fmap(c_pi, eval_bank(bank, basis_m.lam),
                             eval_bank(bank, basis_n.lam))
    assert out.shape == (8, 13)
