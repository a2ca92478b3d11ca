"""Functional map estimation, closed-form filter refinement, and conversions
between pointwise and functional maps.

Conventions follow the usual spectral correspondence setup: the pointwise map
sends vertices of M to vertices of N (Pi[i, j] = 1 iff i maps to j), while the
functional map C (k_M x k_N) transfers spectral coefficients of functions on N
to coefficients on M.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial import cKDTree

from .errors import ConsistencyError, DataError, NumericalError
from .filters import EPSILON_G, FilterBank, FilterResponse, IdealBank, eval_bank
from .spectral import SpectralBasis, embed, project

BRUTE_FORCE_LIMIT = 20000


@dataclass(frozen=True, eq=False)
class FunctionalMap:
    """Coefficient-transfer matrix, rows indexed by the basis of M."""

    matrix: np.ndarray
    direction: str = "N->M"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise DataError("functional map must be a 2-d matrix")
        if not np.isfinite(m).all():
            raise DataError("functional map contains non-finite entries")
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self):
        return self.matrix.shape


@dataclass(frozen=True, eq=False)
class PointwiseMap:
    """Hard (index per source vertex) or soft (row-stochastic) correspondence."""

    n_target: int
    indices: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.indices is None) == (self.matrix is None):
            raise DataError("pointwise map needs exactly one of indices/matrix")
        if self.indices is not None:
            idx = np.asarray(self.indices, dtype=np.int64)
            if idx.ndim != 1:
                raise DataError("hard map indices must be 1-d")
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_target):
                raise DataError("hard map index out of range")
            object.__setattr__(self, "indices", idx)
        else:
            mat = np.asarray(self.matrix, dtype=np.float64)
            if mat.ndim != 2 or mat.shape[1] != self.n_target:
                raise DataError("soft map matrix shape mismatch")
            if (mat < -1e-12).any():
                raise DataError("soft map entries must be nonnegative")
            row_err = np.abs(mat.sum(axis=1) - 1.0).max() if mat.size else 0.0
            if row_err > 1e-9:
                raise DataError(f"soft map rows must sum to 1 (error {row_err:.2e})")
            object.__setattr__(self, "matrix", mat)

    @property
    def is_soft(self) -> bool:
        return self.matrix is not None

    @property
    def n_source(self) -> int:
        return len(self.indices) if self.indices is not None else self.matrix.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Pull back per-vertex values from the target mesh: (Pi values)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != self.n_target:
            raise DataError("value array length does not match target size")
        if self.is_soft:
            return self.matrix @ values
        return values[self.indices]


def nearest_rows(database: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index of the Euclidean-nearest database row per query row.

    Exact; ties break toward the lowest index. Brute force below 20k rows,
    k-d tree above.
    """
    database = np.asarray(database, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if database.ndim != 2 or queries.ndim != 2 or database.shape[1] != queries.shape[1]:
        raise DataError("nearest_rows needs 2-d arrays with equal widths")
    if len(database) == 0:
        raise DataError("empty database")
    if max(len(database), len(queries)) > BRUTE_FORCE_LIMIT:
        _, idx = cKDTree(database).query(queries, k=1)
        return np.asarray(idx, dtype=np.int64)
    sq_db = np.einsum("ij,ij->i", database, database)
    out = np.empty(len(queries), dtype=np.int64)
    block = max(1, int(2e7) // max(len(database), 1))
    for start in range(0, len(queries), block):
        q = queries[start:start + block]
        d2 = sq_db[None, :] - 2.0 * (q @ database.T)
        out[start:start + block] = np.argmin(d2, axis=1)
    return out


def min_row_separation(rows: np.ndarray) -> float:
    """Smallest pairwise distance between rows (0 means duplicates exist)."""
    rows = np.asarray(rows, dtype=np.float64)
    if len(rows) < 2:
        return np.inf
    dist, _ = cKDTree(rows).query(rows, k=2)
    return float(dist[:, 1].min())


def solve_fmap_descriptors(basis_m: SpectralBasis, basis_n: SpectralBasis,
                           desc_m: np.ndarray, desc_n: np.ndarray,
                           lambda_reg: float = 100.0) -> FunctionalMap:
    """Descriptor-preservation functional map with Laplacian commutativity.

    Minimizes |A_M - C A_N|_F^2 + lambda |C Lam_N - Lam_M C|_F^2 where
    A = Phi^+ D are the descriptor coefficients. The penalty is separable per
    entry, so each row solves one small positive-definite system exactly.
    """
    desc_m = np.atleast_2d(np.asarray(desc_m, dtype=np.float64))
    desc_n = np.atleast_2d(np.asarray(desc_n, dtype=np.float64))
    if desc_m.shape[1] != desc_n.shape[1]:
        raise DataError("descriptor dimensions differ between shapes")
    if lambda_reg < 0:
        raise DataError("lambda_reg must be nonnegative")
    coeff_m = project(basis_m, desc_m)            # (k_M, d)
    coeff_n = project(basis_n, desc_n)            # (k_N, d)
    gram = coeff_n @ coeff_n.T                    # (k_N, k_N)
    rhs = coeff_m @ coeff_n.T                     # (k_M, k_N)
    if lambda_reg == 0.0:
        try:
            factor = cho_factor(gram)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "descriptor normal equations are rank deficient; "
                "set lambda_reg > 0") from exc
        return FunctionalMap(cho_solve(factor, rhs.T).T)
    rows = np.empty((basis_m.k, basis_n.k))
    for i in range(basis_m.k):
        penalty = lambda_reg * (basis_n.lam - basis_m.lam[i]) ** 2
        system = gram + np.diag(penalty)
        try:
            rows[i] = cho_solve(cho_factor(system), rhs[i])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"row {i} of the regularized system is singular; "
                "set lambda_reg > 0 or perturb descriptors") from exc
    return FunctionalMap(rows)


def fmap_from_p2p(pi: PointwiseMap, basis_m: SpectralBasis,
                  basis_n: SpectralBasis) -> FunctionalMap:
    """Projection of the pointwise map onto the bases: C = Phi_M^T A_M Pi Phi_N."""
    if pi.n_target != basis_n.n:
        raise DataError("pointwise map target size != basis N vertex count")
    if pi.n_source != basis_m.n:
        raise DataError("pointwise map source size != basis M vertex count")
    pulled = pi.apply(basis_n.phi)                # (n_M, k_N)
    return FunctionalMap(basis_m.phi.T @ (basis_m.mass.diag[:, None] * pulled))


def filter_refine_fmap(c_pi: FunctionalMap, response_m: FilterResponse,
                       response_n: FilterResponse, *,
                       epsilon: float = EPSILON_G) -> FunctionalMap:
    """Closed-form filter-commutativity refinement of a projected map.

    C*_ij = C^Pi_ij * sum_s h_s(lam_i^M) h_s(lam_j^N) / sum_s h_s(lam_j^N)^2,
    the exact least-squares solution of the multi-channel commutativity
    objective when the target-side energy G stays away from zero.
    """
    k_m, k_n = c_pi.shape
    if response_m.values.shape[1] != k_m or response_n.values.shape[1] != k_n:
        raise DataError("filter responses do not match the map dimensions")
    if response_m.channels != response_n.channels:
        raise DataError("filter responses have different channel counts")
    g = response_n.energy
    j = int(np.argmin(g))
    if g[j] < epsilon:
        raise ConsistencyError(index=j, value=float(g[j]), threshold=epsilon)
    kernel = response_m.values.T @ response_n.values      # (k_M, k_N)
    return FunctionalMap(c_pi.matrix * kernel / g[None, :],
                         direction=c_pi.direction)


def p2p_from_fmap(fmap: FunctionalMap, basis_m: SpectralBasis,
                  basis_n: SpectralBasis) -> PointwiseMap:
    """Nearest-neighbor search between aligned spectral embeddings.

    Each vertex of M is matched to the nearest row of Phi_N C^T.
    """
    emb_n = embed(basis_n, fmap)                  # (n_N, k_M)
    if fmap.shape[0] != basis_m.k:
        raise DataError("functional map rows do not match basis M order")
    idx = nearest_rows(emb_n, basis_m.phi)
    return PointwiseMap(n_target=basis_n.n, indices=idx)


def p2p_from_features(desc_m, desc_n) -> PointwiseMap:
    """Hard map from descriptor similarity: nearest descriptor row of N."""
    dm = np.asarray(getattr(desc_m, "values", desc_m), dtype=np.float64)
    dn = np.asarray(getattr(desc_n, "values", desc_n), dtype=np.float64)
    if dm.shape[1] != dn.shape[1]:
        raise DataError("descriptor dimensions differ between shapes")
    return PointwiseMap(n_target=len(dn), indices=nearest_rows(dn, dm))


def soft_p2p(desc_m, desc_n, tau: float) -> PointwiseMap:
    """Row-wise softmax of descriptor similarities D_M D_N^T / tau."""
    if tau <= 0:
        raise DataError("softmax temperature tau must be positive")
    dm = np.asarray(getattr(desc_m, "values", desc_m), dtype=np.float64)
    dn = np.asarray(getattr(desc_n, "values", desc_n), dtype=np.float64)
    if dm.shape[1] != dn.shape[1]:
        raise DataError("descriptor dimensions differ between shapes")
    logits = dm @ dn.T / tau
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    return PointwiseMap(n_target=len(dn), matrix=weights)


ScheduleEntry = Union[int, FilterBank]


def iterative_refine(pi: PointwiseMap, schedule: Sequence[ScheduleEntry],
                     basis_m: SpectralBasis, basis_n: SpectralBasis,
                     *, epsilon: float = EPSILON_G
                     ) -> tuple[FunctionalMap, PointwiseMap]:
    """Alternate project / filter-refine / nearest-neighbor over a schedule.

    Integer entries run one spectral-upsampling step at that truncation (an
    all-pass single-cutoff bank, the classic ZoomOut iteration); bank entries
    run one full-truncation refinement with that bank. Returns the final
    (functional map, pointwise map) pair.
    """
    if not schedule:
        raise DataError("refinement schedule is empty")
    fmap: Optional[FunctionalMap] = None
    for entry in schedule:
        if isinstance(entry, (int, np.integer)):
            width = int(entry)
            if not 1 <= width <= min(basis_m.k, basis_n.k):
                raise DataError(f"schedule truncation {width} exceeds basis order")
            bm, bn = basis_m.truncate(width), basis_n.truncate(width)
            bank: FilterBank = IdealBank(cutoffs=(width,))
        else:
            bm, bn = basis_m, basis_n
            bank = entry
        resp_m = eval_bank(bank, bm.lam, epsilon=epsilon)
        resp_n = eval_bank(bank, bn.lam, epsilon=epsilon)
        c_pi = fmap_from_p2p(pi, bm, bn)
        fmap = filter_refine_fmap(c_pi, resp_m, resp_n, epsilon=epsilon)
        pi = p2p_from_fmap(fmap, bm, bn)
    return fmap, pi


# ---------------------------------------------------------------------------
# Plain-text import/export


def save_fmap(fmap: FunctionalMap, path) -> None:
    """Row-major plain text, one row per line."""
    rows = (" ".join("%.17g" % v for v in row) for row in fmap.matrix)
    Path(path).write_text("\n".join(rows) + "\n")


def load_fmap(path) -> FunctionalMap:
    path = Path(path)
    if not path.exists():
        raise DataError(f"functional map file not found: {path}")
    try:
        rows = [[float(t) for t in line.split()]
                for line in path.read_text().splitlines() if line.strip()]
        return FunctionalMap(np.array(rows, dtype=np.float64))
    except ValueError as exc:
        raise DataError(f"{path}: malformed functional map") from exc


def save_p2p(pi: PointwiseMap, path, one_based: bool = False) -> None:
    """One target index per source vertex per line (hard maps only)."""
    if pi.is_soft:
        raise DataError("only hard pointwise maps are exported")
    offset = 1 if one_based else 0
    Path(path).write_text("\n".join(str(int(i) + offset) for i in pi.indices) + "\n")


def load_p2p(path, n_target: int, one_based: bool = False) -> PointwiseMap:
    path = Path(path)
    if not path.exists():
        raise DataError(f"correspondence file not found: {path}")
    try:
        idx = np.array([int(t) for t in path.read_text().split()], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: malformed correspondence file") from exc
    if one_based:
        idx = idx - 1
    return PointwiseMap(n_target=n_target, indices=idx)
