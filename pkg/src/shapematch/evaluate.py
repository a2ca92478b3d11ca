"""Correspondence evaluation: mean geodesic error against ground truth.

Per-vertex error is the geodesic distance on the target mesh between the
predicted and ground-truth targets, normalized by the (source) geodesic
diameter. Reported numbers are multiplied by 100 for display. Geodesic
distance fields are computed per referenced ground-truth vertex and can be
cached on disk keyed by (mesh hash, source vertex).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .fmap import PointwiseMap
from .mesh import Mesh, geodesic_distances_multi


@dataclass(frozen=True)
class GroundTruth:
    """Target index on the other mesh per source vertex (0-based)."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)


def load_ground_truth(path, n_target: int, one_based: bool = False) -> GroundTruth:
    path = Path(path)
    if not path.exists():
        raise DataError(f"ground truth file not found: {path}")
    try:
        idx = np.array([int(t) for t in path.read_text().split()], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: malformed ground truth file") from exc
    if one_based:
        idx = idx - 1
    if idx.size and (idx.min() < 0 or idx.max() >= n_target):
        raise DataError(f"{path}: ground truth index out of range "
                        f"(target mesh has {n_target} vertices)")
    return GroundTruth(indices=idx)


@dataclass(frozen=True)
class ErrorReport:
    """Mean plus per-vertex errors and the cumulative accuracy curve."""

    mean: float                 # dimensionless (fraction of diameter)
    per_vertex: np.ndarray
    thresholds: np.ndarray
    fractions: np.ndarray

    @property
    def mean_x100(self) -> float:
        """Display convention: errors are reported multiplied by 100."""
        return 100.0 * self.mean


def _field_cache_dir(cache_dir, mesh: Mesh) -> Optional[Path]:
    if cache_dir is None:
        return None
    root = Path(cache_dir) / "geodesics" / mesh.content_hash()
    root.mkdir(parents=True, exist_ok=True)
    return root


def geodesic_fields(mesh: Mesh, sources, cache_dir=None) -> np.ndarray:
    """Distance fields from each source vertex, cached per (mesh, source)."""
    sources = np.asarray(sources, dtype=np.int64)
    out = np.empty((len(sources), mesh.n_vertices))
    root = _field_cache_dir(cache_dir, mesh)
    missing = []
    for row, src in enumerate(sources):
        if root is not None:
            record = root / f"{int(src)}.npy"
            if record.exists():
                out[row] = np.load(record)
                continue
        missing.append(row)
    for start in range(0, len(missing), 512):
        chunk = missing[start:start + 512]
        fields = geodesic_distances_multi(mesh, sources[chunk])
        for local, row in enumerate(chunk):
            out[row] = fields[local]
            if root is not None:
                np.save(root / f"{int(sources[row])}.npy", fields[local])
    return out


def mean_geodesic_error(prediction, gt, mesh_n: Mesh, diameter: float,
                        *, cache_dir=None,
                        thresholds: Optional[np.ndarray] = None) -> ErrorReport:
    """Normalized geodesic error of a predicted map against ground truth.

    `prediction` is a hard PointwiseMap or an index array into mesh_n;
    distances are measured on mesh_n, normalization divides by `diameter`.
    """
    pred = prediction.indices if isinstance(prediction, PointwiseMap) \
        else np.asarray(prediction, dtype=np.int64)
    if pred is None:
        raise DataError("evaluation needs a hard pointwise map")
    gt_idx = gt.indices if isinstance(gt, GroundTruth) \
        else np.asarray(gt, dtype=np.int64)
    if len(pred) != len(gt_idx):
        raise DataError("prediction and ground truth cover different vertex sets")
    if gt_idx.size == 0:
        raise DataError("empty ground truth")
    for name, arr in (("prediction", pred), ("ground truth", gt_idx)):
        if arr.min() < 0 or arr.max() >= mesh_n.n_vertices:
            raise DataError(f"{name} index out of range for the target mesh")
    if diameter <= 0:
        raise DataError("geodesic diameter must be positive")

    unique_targets, inverse = np.unique(gt_idx, return_inverse=True)
    fields = geodesic_fields(mesh_n, unique_targets, cache_dir=cache_dir)
    per_vertex = fields[inverse, pred] / diameter
    mean = float(per_vertex.mean())
    if thresholds is None:
        top = max(0.25, float(per_vertex.max()))
        thresholds = np.linspace(0.0, top, 101)
    else:
        thresholds = np.asarray(thresholds, dtype=np.float64)
        if thresholds.size == 0 or thresholds.max() < per_vertex.max():
            thresholds = np.append(thresholds, per_vertex.max())
    fractions = (per_vertex[None, :] <= thresholds[:, None]).mean(axis=1)
    return ErrorReport(mean=mean, per_vertex=per_vertex,
                       thresholds=thresholds, fractions=fractions)


def write_error_report(report: ErrorReport, path_csv, path_summary=None) -> None:
    """Cumulative curve as CSV plus an optional one-line summary file."""
    with Path(path_csv).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fraction"])
        for t, f in zip(report.thresholds, report.fractions):
            writer.writerow(["%.17g" % t, "%.17g" % f])
    if path_summary is not None:
        Path(path_summary).write_text(
            f"mean_geodesic_error_x100 {report.mean_x100:.6f}\n"
            f"mean_geodesic_error {report.mean:.17g}\n"
            f"vertices {len(report.per_vertex)}\n")
