"""Triangle mesh ingestion and discrete differential operators.

Meshes are immutable after construction. The Laplacian is assembled with the
standard cotangent weight scheme (no clamping of negative weights from obtuse
triangles) and a barycentric lumped mass matrix. Geodesics are Dijkstra
shortest paths on the edge graph with Euclidean edge lengths — an approximation
of exact polyhedral geodesics that is sufficient for normalized error metrics.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import DataError, MeshError

_FMT = "%.17g"  # round-trips float64 exactly


class Mesh:
    """Vertex positions plus triangle faces, validated on construction.

    Vertex order is preserved exactly as given; all faces are triangles with
    three distinct, in-range indices.
    """

    def __init__(self, vertices, faces, *, on_disconnected: str = "warn",
                 allow_nonmanifold: bool = False):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        f = np.ascontiguousarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (m, 3), got {f.shape}")
        if not np.isfinite(v).all():
            raise MeshError("non-finite vertex coordinate")
        out_of_range = (f < 0) | (f >= len(v))
        if f.size and out_of_range.any():
            bad = int(np.flatnonzero(out_of_range.any(axis=1))[0])
            raise MeshError(
                f"face index out of range (face {bad}): mesh has {len(v)} vertices")
        degen = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if degen.any():
            raise MeshError(f"degenerate face {int(np.flatnonzero(degen)[0])}: "
                            "repeated vertex index")
        self.vertices = v
        self.faces = f
        self.vertices.setflags(write=False)
        self.faces.setflags(write=False)
        self._edge_graph: Optional[sparse.csr_matrix] = None
        self._components: Optional[tuple[int, np.ndarray]] = None
        self._hash: Optional[str] = None

        if not allow_nonmanifold:
            self._check_manifold_edges()
        else:
            try:
                self._check_manifold_edges()
            except MeshError as exc:
                warnings.warn(f"accepting non-manifold mesh: {exc}")

        ncomp, labels = self.connected_components()
        if ncomp > 1:
            msg = f"mesh edge graph has {ncomp} connected components"
            if on_disconnected == "reject":
                raise MeshError(msg)
            if on_disconnected == "warn":
                warnings.warn(msg)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def _check_manifold_edges(self):
        f = self.faces
        if not len(f):
            return
        edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        if (counts > 2).any():
            raise MeshError(f"{int((counts > 2).sum())} edges shared by >2 faces")

    def edge_graph(self) -> sparse.csr_matrix:
        """Symmetric sparse matrix of Euclidean edge lengths."""
        if self._edge_graph is None:
            f = self.faces
            n = self.n_vertices
            if not len(f):
                self._edge_graph = sparse.csr_matrix((n, n))
                return self._edge_graph
            e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
            e = np.unique(np.sort(e, axis=1), axis=0)
            w = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
            g = sparse.coo_matrix(
                (np.concatenate([w, w]),
                 (np.concatenate([e[:, 0], e[:, 1]]),
                  np.concatenate([e[:, 1], e[:, 0]]))),
                shape=(n, n)).tocsr()
            self._edge_graph = g
        return self._edge_graph

    def connected_components(self) -> tuple[int, np.ndarray]:
        if self._components is None:
            if self.n_faces == 0:
                labels = np.arange(self.n_vertices)
                self._components = (self.n_vertices, labels)
            else:
                n, labels = csgraph.connected_components(self.edge_graph(),
                                                         directed=False)
                self._components = (int(n), labels)
        return self._components

    def content_hash(self) -> str:
        """SHA-256 over vertex and face bytes; keys the on-disk caches."""
        if self._hash is None:
            h = hashlib.sha256()
            h.update(b"shapematch-mesh-v1")
            h.update(np.int64(self.n_vertices).tobytes())
            h.update(np.int64(self.n_faces).tobytes())
            h.update(self.vertices.tobytes())
            h.update(self.faces.tobytes())
            self._hash = h.hexdigest()
        return self._hash

    def scaled(self, factor: float) -> "Mesh":
        return Mesh(self.vertices * float(factor), self.faces)

    def transformed(self, rotation=None, translation=None) -> "Mesh":
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=np.float64).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=np.float64)
        return Mesh(v, self.faces)


@dataclass(frozen=True)
class MassMatrix:
    """Per-vertex lumped (barycentric) areas, strictly positive."""

    diag: np.ndarray

    @property
    def total_area(self) -> float:
        return float(self.diag.sum())

    def matrix(self) -> sparse.dia_matrix:
        return sparse.diags(self.diag)


@dataclass(frozen=True)
class StiffnessMatrix:
    """Sparse symmetric cotangent-weight matrix with zero row sums."""

    matrix: sparse.csr_matrix

    @property
    def shape(self):
        return self.matrix.shape

    def quadratic_form(self, f: np.ndarray) -> float:
        """Dirichlet energy f^T B f (PSD up to rounding)."""
        return float(np.sum(f * (self.matrix @ f)))


@dataclass(frozen=True)
class DistanceField:
    """Geodesic distances from one source vertex, in model units."""

    source: int
    distances: np.ndarray


def load_mesh(path, fmt: Optional[str] = None, *, on_disconnected: str = "warn",
              allow_nonmanifold: bool = False) -> Mesh:
    """Read an OFF, OBJ, or ascii PLY file into a validated Mesh.

    The format is taken from the extension unless `fmt` is given. Vertex order
    is preserved exactly as in the file.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"mesh file not found: {path}")
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    fmt = fmt.lower()
    text = path.read_text()
    if fmt == "off":
        v, f = _parse_off(text, str(path))
    elif fmt == "obj":
        v, f = _parse_obj(text, str(path))
    elif fmt == "ply":
        v, f = _parse_ply_ascii(text, str(path))
    else:
        raise DataError(f"unsupported mesh format '{fmt}' (off, obj, ply)")
    return Mesh(v, f, on_disconnected=on_disconnected,
                allow_nonmanifold=allow_nonmanifold)


def save_mesh(mesh: Mesh, path, fmt: Optional[str] = None) -> None:
    """Write a mesh, preserving vertex order and full float64 precision."""
    path = Path(path)
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    fmt = fmt.lower()
    if fmt == "off":
        lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
        lines += [" ".join(_FMT % c for c in row) for row in mesh.vertices]
        lines += ["3 %d %d %d" % tuple(face) for face in mesh.faces]
    elif fmt == "obj":
        lines = ["v " + " ".join(_FMT % c for c in row) for row in mesh.vertices]
        lines += ["f %d %d %d" % (f[0] + 1, f[1] + 1, f[2] + 1) for f in mesh.faces]
    elif fmt == "ply":
        lines = ["ply", "format ascii 1.0",
                 f"element vertex {mesh.n_vertices}",
                 "property double x", "property double y", "property double z",
                 f"element face {mesh.n_faces}",
                 "property list uchar int vertex_indices", "end_header"]
        lines += [" ".join(_FMT % c for c in row) for row in mesh.vertices]
        lines += ["3 %d %d %d" % tuple(face) for face in mesh.faces]
    else:
        raise DataError(f"unsupported mesh format '{fmt}' (off, obj, ply)")
    path.write_text("\n".join(lines) + "\n")


def _data_lines(text):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def _parse_off(text: str, name: str):
    lines = _data_lines(text)
    try:
        first = next(lines)
    except StopIteration:
        raise DataError(f"{name}: empty OFF file") from None
    if first.startswith("OFF"):
        rest = first[3:].strip()
        header = rest if rest else next(lines, None)
    else:
        header = first  # headerless variant: counts on the first line
    if header is None:
        raise DataError(f"{name}: missing OFF count line")
    try:
        nv, nf = [int(tok) for tok in header.split()[:2]]
    except ValueError:
        raise DataError(f"{name}: malformed OFF count line '{header}'") from None
    verts, faces = [], []
    try:
        for _ in range(nv):
            toks = next(lines).split()
            verts.append([float(t) for t in toks[:3]])
        for _ in range(nf):
            toks = next(lines).split()
            cnt = int(toks[0])
            if cnt != 3:
                raise DataError(f"{name}: only triangle faces supported, got {cnt}-gon")
            faces.append([int(t) for t in toks[1:4]])
    except StopIteration:
        raise DataError(f"{name}: truncated OFF file") from None
    except (ValueError, IndexError):
        raise DataError(f"{name}: malformed OFF vertex/face line") from None
    return np.array(verts, dtype=np.float64).reshape(nv, 3), \
        np.array(faces, dtype=np.int64).reshape(nf, 3)


def _parse_obj(text: str, name: str):
    verts, faces = [], []
    for line in _data_lines(text):
        toks = line.split()
        if toks[0] == "v":
            try:
                verts.append([float(t) for t in toks[1:4]])
            except (ValueError, IndexError):
                raise DataError(f"{name}: malformed OBJ vertex '{line}'") from None
        elif toks[0] == "f":
            if len(toks) != 4:
                raise DataError(f"{name}: only triangle faces supported: '{line}'")
            try:
                idx = [int(t.split("/")[0]) for t in toks[1:4]]
            except ValueError:
                raise DataError(f"{name}: malformed OBJ face '{line}'") from None
            if any(i <= 0 for i in idx):
                raise DataError(f"{name}: only positive OBJ indices supported")
            faces.append([i - 1 for i in idx])
    return np.array(verts, dtype=np.float64).reshape(len(verts), 3), \
        np.array(faces, dtype=np.int64).reshape(len(faces), 3)


def _parse_ply_ascii(text: str, name: str):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DataError(f"{name}: missing 'ply' magic")
    nv = nf = None
    body_at = None
    current = None
    vertex_props = []
    for i, raw in enumerate(lines[1:], start=1):
        toks = raw.strip().split()
        if not toks:
            continue
        if toks[0] == "format":
            if toks[1] != "ascii":
                raise DataError(f"{name}: only ascii PLY supported, got {toks[1]}")
        elif toks[0] == "element":
            current = toks[1]
            if current == "vertex":
                nv = int(toks[2])
            elif current == "face":
                nf = int(toks[2])
        elif toks[0] == "property" and current == "vertex" and toks[1] != "list":
            vertex_props.append(toks[-1])
        elif toks[0] == "end_header":
            body_at = i + 1
            break
    if body_at is None or nv is None or nf is None:
        raise DataError(f"{name}: incomplete PLY header")
    try:
        ix, iy, iz = (vertex_props.index(c) for c in ("x", "y", "z"))
    except ValueError:
        raise DataError(f"{name}: PLY vertex element lacks x/y/z properties") from None
    body = [ln for ln in lines[body_at:] if ln.strip()]
    if len(body) < nv + nf:
        raise DataError(f"{name}: truncated PLY body")
    verts = np.empty((nv, 3))
    try:
        for r in range(nv):
            toks = body[r].split()
            verts[r] = [float(toks[ix]), float(toks[iy]), float(toks[iz])]
        faces = []
        for r in range(nf):
            toks = body[nv + r].split()
            if int(toks[0]) != 3:
                raise DataError(f"{name}: only triangle faces supported")
            faces.append([int(toks[1]), int(toks[2]), int(toks[3])])
    except (ValueError, IndexError):
        raise DataError(f"{name}: malformed PLY body line") from None
    return verts, np.array(faces, dtype=np.int64).reshape(nf, 3)


def assemble_operators(mesh: Mesh) -> tuple[MassMatrix, StiffnessMatrix]:
    """Barycentric lumped mass and cotangent stiffness of a triangle mesh.

    Off-diagonal stiffness entries are -(cot a + cot b)/2 over the faces
    adjacent to each edge (a single term on boundary edges), the diagonal is
    minus the row sum. Negative weights from obtuse triangles are kept.
    """
    v, f = mesh.vertices, mesh.faces
    n = mesh.n_vertices
    if not len(f):
        raise MeshError("mesh has no faces; operators undefined")
    p0, p1, p2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    cross = np.cross(p1 - p0, p2 - p0)
    double_area = np.linalg.norm(cross, axis=1)
    edge_sq = np.maximum.reduce([((p1 - p0) ** 2).sum(1), ((p2 - p1) ** 2).sum(1),
                                 ((p0 - p2) ** 2).sum(1)])
    bad = np.flatnonzero(double_area <= 1e-14 * edge_sq)
    if bad.size:
        raise MeshError(f"zero-area face {int(bad[0])} "
                        f"(vertices {tuple(int(i) for i in f[bad[0]])})")

    # cotangent at each corner: (u . w) / |u x w|, shared |u x w| = 2A
    cot0 = ((p1 - p0) * (p2 - p0)).sum(1) / double_area
    cot1 = ((p2 - p1) * (p0 - p1)).sum(1) / double_area
    cot2 = ((p0 - p2) * (p1 - p2)).sum(1) / double_area

    rows = np.concatenate([f[:, 1], f[:, 2], f[:, 2], f[:, 0], f[:, 0], f[:, 1]])
    cols = np.concatenate([f[:, 2], f[:, 1], f[:, 0], f[:, 2], f[:, 1], f[:, 0]])
    vals = -0.5 * np.concatenate([cot0, cot0, cot1, cot1, cot2, cot2])
    off = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    stiff = (off + sparse.diags(diag)).tocsr()

    areas = np.zeros(n)
    np.add.at(areas, f.ravel(), np.repeat(double_area / 6.0, 3))
    if (areas <= 0).any():
        orphan = int(np.flatnonzero(areas <= 0)[0])
        raise MeshError(f"vertex {orphan} has zero lumped area "
                        "(not referenced by any face)")
    return MassMatrix(areas), StiffnessMatrix(stiff)


def _require_connected(mesh: Mesh, source: int):
    ncomp, labels = mesh.connected_components()
    if ncomp > 1:
        reachable = int((labels == labels[source]).sum())
        raise MeshError(
            f"mesh is disconnected: {mesh.n_vertices - reachable} of "
            f"{mesh.n_vertices} vertices unreachable from vertex {source}")


def geodesic_distances(mesh: Mesh, source: int) -> DistanceField:
    """Dijkstra shortest-path distances on the edge graph from one vertex."""
    if not 0 <= source < mesh.n_vertices:
        raise DataError(f"source vertex {source} out of range")
    _require_connected(mesh, source)
    d = csgraph.dijkstra(mesh.edge_graph(), directed=False, indices=source)
    return DistanceField(source=int(source), distances=d)


def geodesic_distances_multi(mesh: Mesh, sources) -> np.ndarray:
    """Distances from several sources at once; rows follow `sources` order."""
    sources = np.asarray(sources, dtype=np.int64)
    if sources.size == 0:
        return np.zeros((0, mesh.n_vertices))
    _require_connected(mesh, int(sources[0]))
    return csgraph.dijkstra(mesh.edge_graph(), directed=False, indices=sources)


def geodesic_diameter(mesh: Mesh, sample_count: int = 100, seed: int = 0) -> float:
    """Maximum geodesic distance over sampled source vertices.

    Deterministic given the seed; sampling all vertices gives the exact graph
    diameter.
    """
    if sample_count < 1:
        raise DataError("sample_count must be >= 1")
    n = mesh.n_vertices
    if sample_count >= n:
        sources = np.arange(n)
    else:
        rng = np.random.default_rng(seed)
        sources = np.sort(rng.choice(n, size=sample_count, replace=False))
    best = 0.0
    for start in range(0, len(sources), 256):
        block = geodesic_distances_multi(mesh, sources[start:start + 256])
        best = max(best, float(block.max()))
    return best
