"""Truncated generalized eigendecomposition of the mesh Laplacian.

Solves B phi = lambda A phi for the first k pairs, A-orthonormal and in
ascending order, with a deterministic sign convention: the entry of largest
magnitude in each eigenvector is positive, ties broken by lowest index.

The sparse path is shift-invert Lanczos (ARPACK) on the symmetric pencil; the
dense path diagonalizes A^{-1/2} B A^{-1/2} and doubles as the test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import DataError, NumericalError
from .mesh import MassMatrix, Mesh, StiffnessMatrix, assemble_operators

ORTHONORMALITY_TOL = 1e-8
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class SpectralBasis:
    """First k eigenpairs of the Laplacian pencil plus the mass matrix."""

    phi: np.ndarray      # (n, k), columns A-orthonormal
    lam: np.ndarray      # (k,), ascending
    mass: MassMatrix
    k: int

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    def truncate(self, k: int) -> "SpectralBasis":
        if not 1 <= k <= self.k:
            raise DataError(f"cannot truncate basis of order {self.k} to {k}")
        return SpectralBasis(self.phi[:, :k], self.lam[:k], self.mass, k)

    def pinv(self) -> np.ndarray:
        """Moore-Penrose pseudo-inverse Phi^+ = Phi^T A, shape (k, n)."""
        return self.phi.T * self.mass.diag[None, :]


def _as_stiffness(B) -> sparse.csr_matrix:
    if isinstance(B, StiffnessMatrix):
        return B.matrix
    if sparse.issparse(B):
        return B.tocsr()
    return sparse.csr_matrix(np.asarray(B, dtype=np.float64))


def _as_mass(A) -> MassMatrix:
    if isinstance(A, MassMatrix):
        return A
    arr = np.asarray(A, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr.diagonal() if not sparse.issparse(A) else np.asarray(A.diagonal())
    if (arr <= 0).any():
        raise DataError("mass matrix must have strictly positive diagonal")
    return MassMatrix(np.ascontiguousarray(arr))


def apply_sign_convention(phi: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry is positive (lowest index
    wins ties)."""
    idx = np.argmax(np.abs(phi), axis=0)
    signs = np.sign(phi[idx, np.arange(phi.shape[1])])
    signs[signs == 0] = 1.0
    return phi * signs[None, :]


def eigendecompose(B, A, k: int, *, method: str = "auto",
                   dense_cutoff: int = 3000, maxiter: Optional[int] = None,
                   validate: bool = True) -> SpectralBasis:
    """First k eigenpairs of B phi = lambda A phi.

    method: "auto" picks dense for n <= dense_cutoff, else Lanczos
    shift-invert; "dense" and "lanczos" force a path. The dense path is also
    the oracle the Lanczos path is tested against.
    """
    Bm = _as_stiffness(B)
    mass = _as_mass(A)
    n = Bm.shape[0]
    if Bm.shape != (n, n) or len(mass.diag) != n:
        raise DataError("stiffness/mass dimension mismatch")
    if not 1 <= k <= n:
        raise DataError(f"k={k} out of range for n={n}")
    if method == "auto":
        method = "dense" if (n <= dense_cutoff or k >= n - 1) else "lanczos"

    if method == "dense":
        s = 1.0 / np.sqrt(mass.diag)
        sym = (Bm.toarray() * s[None, :]) * s[:, None]
        sym = 0.5 * (sym + sym.T)
        vals, vecs = eigh(sym, subset_by_index=[0, k - 1])
        phi = vecs * s[:, None]
    elif method == "lanczos":
        a_mat = sparse.diags(mass.diag).tocsc()
        scale = Bm.diagonal().sum() / mass.diag.sum()
        sigma = -1e-2 * max(scale, np.finfo(float).tiny)
        rng = np.random.default_rng(0)
        v0 = rng.standard_normal(n)
        try:
            vals, phi = eigsh(Bm.tocsc(), k=k, M=a_mat, sigma=sigma,
                              which="LM", v0=v0, maxiter=maxiter)
        except ArpackNoConvergence as exc:
            got = len(exc.eigenvalues)
            raise NumericalError(
                f"Lanczos converged only {got}/{k} eigenpairs "
                f"(iteration cap); residual report: {exc}") from exc
    else:
        raise DataError(f"unknown eigendecomposition method '{method}'")

    order = np.argsort(vals)
    vals = np.ascontiguousarray(vals[order])
    phi = np.ascontiguousarray(phi[:, order])
    phi = apply_sign_convention(phi)
    basis = SpectralBasis(phi=phi, lam=vals, mass=mass, k=k)
    if validate:
        _validate_basis(basis, Bm)
    return basis


def _validate_basis(basis: SpectralBasis, Bm: sparse.csr_matrix) -> None:
    gram = basis.phi.T @ (basis.mass.diag[:, None] * basis.phi)
    ortho_err = np.abs(gram - np.eye(basis.k)).max()
    if ortho_err > ORTHONORMALITY_TOL:
        raise NumericalError(f"eigenbasis not A-orthonormal: error {ortho_err:.2e}")
    b_norm = sparse.linalg.norm(Bm, 1) if Bm.nnz else 1.0
    resid = Bm @ basis.phi - (basis.mass.diag[:, None] * basis.phi) * basis.lam[None, :]
    worst = np.linalg.norm(resid, axis=0).max()
    if worst > RESIDUAL_TOL * max(b_norm, 1e-300):
        raise NumericalError(
            f"eigen-residual {worst:.2e} exceeds {RESIDUAL_TOL:.0e} * |B| = "
            f"{RESIDUAL_TOL * b_norm:.2e}")


def project(basis: SpectralBasis, f: np.ndarray) -> np.ndarray:
    """Spectral coefficients Phi^T A f; f may be (n,) or (n, d)."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != basis.n:
        raise DataError(f"function length {f.shape[0]} != vertex count {basis.n}")
    if f.ndim == 1:
        return basis.phi.T @ (basis.mass.diag * f)
    return basis.phi.T @ (basis.mass.diag[:, None] * f)


def embed(basis: SpectralBasis, fmap) -> np.ndarray:
    """Aligned spectral embedding Phi C^T, rows are per-vertex coordinates.

    `fmap` is a FunctionalMap (or raw matrix) whose columns match this basis.
    """
    C = getattr(fmap, "matrix", fmap)
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[1] != basis.k:
        raise DataError(f"functional map has {C.shape} but basis order is {basis.k}")
    return basis.phi @ C.T


def save_basis(basis: SpectralBasis, path) -> None:
    """Flat binary record: int64 n, k; float64 Lambda; float64 Phi
    column-major. All little-endian."""
    path = Path(path)
    with path.open("wb") as fh:
        np.array([basis.n, basis.k], dtype="<i8").tofile(fh)
        basis.lam.astype("<f8").tofile(fh)
        np.ascontiguousarray(basis.phi.T).astype("<f8").tofile(fh)


def load_basis(path, mass: MassMatrix) -> SpectralBasis:
    path = Path(path)
    raw = np.fromfile(path, dtype="<i8", count=2)
    if raw.size != 2:
        raise DataError(f"{path}: truncated spectral record")
    n, k = int(raw[0]), int(raw[1])
    data = np.fromfile(path, dtype="<f8", offset=16)
    if data.size != k + n * k:
        raise DataError(f"{path}: spectral record size mismatch "
                        f"(expected {k + n * k} floats, found {data.size})")
    lam = data[:k].copy()
    phi = data[k:].reshape(k, n).T.copy()  # stored column-major
    if len(mass.diag) != n:
        raise DataError(f"{path}: record is for n={n}, mass has {len(mass.diag)}")
    return SpectralBasis(phi=np.ascontiguousarray(phi), lam=lam, mass=mass, k=k)


def mesh_basis(mesh: Mesh, k: int, *, cache_dir: Optional[Union[str, Path]] = None,
               method: str = "auto", dense_cutoff: int = 3000) -> SpectralBasis:
    """Operators + eigendecomposition for a mesh, with optional disk cache.

    Cache records are keyed by the mesh content hash and k.
    """
    mass, stiff = assemble_operators(mesh)
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        record = cache_dir / f"{mesh.content_hash()}-k{k}.spec"
        if record.exists():
            return load_basis(record, mass)
        basis = eigendecompose(stiff, mass, k, method=method,
                               dense_cutoff=dense_cutoff)
        save_basis(basis, record)
        return basis
    return eigendecompose(stiff, mass, k, method=method, dense_cutoff=dense_cutoff)
