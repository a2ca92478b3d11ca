"""Procedural meshes for tests, examples, and the selfcheck suite."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def equilateral_triangle() -> Mesh:
    """Single unit equilateral triangle in the z = 0 plane."""
    v = np.array([[0.0, 0.0, 0.0],
                  [1.0, 0.0, 0.0],
                  [0.5, np.sqrt(3.0) / 2.0, 0.0]])
    return Mesh(v, [[0, 1, 2]])


def chain_mesh(spacing: float = 1.0) -> Mesh:
    """Three collinear vertices joined by one (zero-area) face.

    Useful for geodesic tests on the edge graph; operator assembly rejects it.
    """
    v = np.array([[0.0, 0.0, 0.0],
                  [spacing, 0.0, 0.0],
                  [2.0 * spacing, 0.0, 0.0]])
    return Mesh(v, [[0, 1, 2]])


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> Mesh:
    """Icosahedron subdivided `subdivisions` times, projected to the sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    verts = list(verts)
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def midpt(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                p = verts[i] + verts[j]
                verts.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpt(a, b), midpt(b, c), midpt(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    return Mesh(np.array(verts) * radius, faces)


def _grid_faces(nx: int, ny: int) -> np.ndarray:
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = (i + 1) * ny + j
            faces += [[a, b, a + 1], [b, b + 1, a + 1]]
    return np.array(faces, dtype=np.int64)


def bumpy_strip(nx: int = 40, ny: int = 25, length: float = 2.0,
                width: float = 1.0, bump: float = 0.25) -> Mesh:
    """Rectangular strip with an off-center Gaussian bump.

    The bump breaks the mirror symmetries of the flat rectangle so spectral
    descriptors can disambiguate left from right.
    """
    x = np.linspace(0.0, length, nx)
    y = np.linspace(0.0, width, ny)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    cx, cy = 0.31 * length, 0.68 * width
    zz = bump * np.exp(-(((xx - cx) / (0.18 * length)) ** 2
                         + ((yy - cy) / (0.2 * width)) ** 2))
    v = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    return Mesh(v, _grid_faces(nx, ny))


def bent_strip_pair(nx: int = 40, ny: int = 25, length: float = 2.0,
                    width: float = 1.0, bump: float = 0.25,
                    angle: float = 2.0) -> tuple[Mesh, Mesh, np.ndarray]:
    """Near-isometric pair: a bumpy strip and a copy bent around a cylinder.

    Bending maps x to an arc of total angle `angle`, preserving arc length, so
    the intrinsic metric is nearly unchanged. Returns (flat, bent, ground
    truth) where ground truth is the identity vertex bijection.
    """
    flat = bumpy_strip(nx, ny, length, width, bump)
    radius = length / angle
    v = flat.vertices
    theta = v[:, 0] / radius
    # base cylinder arc plus bump height z carried along the bent normal
    # n(theta) = (-sin, 0, cos): point = arc + z * n
    bent = np.column_stack([
        (radius - v[:, 2]) * np.sin(theta),
        v[:, 1],
        radius * (1.0 - np.cos(theta)) + v[:, 2] * np.cos(theta),
    ])
    gt = np.arange(flat.n_vertices, dtype=np.int64)
    return flat, Mesh(bent, flat.faces), gt


def permuted_copy(mesh: Mesh, seed: int = 0) -> tuple[Mesh, np.ndarray]:
    """Vertex-permuted copy plus the map `perm` with new[perm[i]] = old[i].

    The returned array is the ground-truth pointwise map from the original
    mesh to the copy.
    """
    rng = np.random.default_rng(seed)
    perm = rng.permutation(mesh.n_vertices)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(mesh.n_vertices)
    verts = mesh.vertices[inv]
    faces = perm[mesh.faces]
    return Mesh(verts, faces), perm
