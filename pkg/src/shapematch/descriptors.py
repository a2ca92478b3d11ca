"""Handcrafted spectral point descriptors (wave / heat kernel signatures).

These stand in for learned features: intrinsic, permutation-equivariant
functions of the eigenpairs, fed to the descriptor functional-map solver and
the feature nearest-neighbor initialization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError
from .spectral import SpectralBasis


@dataclass(frozen=True)
class DescriptorSet:
    """Per-vertex descriptor matrix, rows in mesh vertex order."""

    values: np.ndarray          # (n, d)
    kind: str                   # "wks" | "hks"
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def wks(basis: SpectralBasis, dim: int = 128,
        variance_factor: float = 7.0) -> DescriptorSet:
    """Wave kernel signature on `dim` log-spaced energy levels.

    Energies span [log lambda_2, log lambda_k]; Gaussian weights in log-energy
    with sigma = variance_factor * grid spacing, each level normalized by its
    weight sum. The zero eigenvalue is excluded.
    """
    if dim < 1:
        raise DataError("descriptor dimension must be >= 1")
    if basis.k < 2:
        raise DataError("WKS needs at least two eigenpairs")
    lam = basis.lam
    if lam[-1] <= 0 or lam[1] <= 0:
        raise NumericalError("WKS undefined: eigenvalues numerically zero")
    if lam[-1] <= lam[1]:
        raise NumericalError("WKS needs lambda_k > lambda_2 > 0")
    e_min, e_max = np.log(lam[1]), np.log(lam[-1])
    energies = np.linspace(e_min, e_max, dim)
    spacing = (e_max - e_min) / max(dim - 1, 1)
    sigma = variance_factor * spacing
    log_lam = np.log(lam[1:])
    weights = np.exp(-((energies[:, None] - log_lam[None, :]) ** 2)
                     / (2.0 * sigma ** 2))          # (dim, k-1)
    sq = basis.phi[:, 1:] ** 2                       # (n, k-1)
    values = (sq @ weights.T) / weights.sum(axis=1)[None, :]
    return DescriptorSet(values=values, kind="wks",
                         params={"dim": dim, "variance_factor": variance_factor,
                                 "energies": energies, "sigma": sigma})


def hks(basis: SpectralBasis, times) -> DescriptorSet:
    """Heat kernel signature HKS(x, t) = sum_i exp(-t lambda_i) phi_i(x)^2."""
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if (times < 0).any():
        raise DataError("HKS times must be nonnegative")
    decay = np.exp(-np.outer(times, basis.lam))      # (t, k)
    values = (basis.phi ** 2) @ decay.T              # (n, t)
    return DescriptorSet(values=values, kind="hks", params={"times": times})


def l2_normalize(desc: DescriptorSet) -> DescriptorSet:
    """Unit-L2 rows; stabilizes nearest-neighbor initialization."""
    norms = np.linalg.norm(desc.values, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return DescriptorSet(values=desc.values / norms, kind=desc.kind,
                         params={**desc.params, "l2_normalized": True})


def dump_csv(desc: DescriptorSet, path) -> None:
    """One row per vertex: vertex index then descriptor values."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vertex"] + [f"{desc.kind}_{j}" for j in range(desc.dim)])
        for i, row in enumerate(desc.values):
            writer.writerow([i] + ["%.17g" % x for x in row])
