"""Grid-structured height-field triangle meshes.

Vertices are stored row-major: vertex ``(i, j)`` (column ``i`` along x, row
``j`` along y) has index ``j * nx + i``. Cell ``(i, j)`` has index
``j * (nx - 1) + i`` and is split along its ``v00 -> v11`` diagonal into
faces ``2c = (v00, v10, v11)`` and ``2c + 1 = (v00, v11, v01)``, both
counter-clockwise when projected onto the x-y plane.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DegenerateFaceError


@lru_cache(maxsize=32)
def grid_faces(nx: int, ny: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    i = i.ravel()
    j = j.ravel()
    v00 = j * nx + i
    v10 = v00 + 1
    v01 = v00 + nx
    v11 = v01 + 1
    faces = np.empty((2 * len(v00), 3), dtype=np.int64)
    faces[0::2] = np.stack([v00, v10, v11], axis=1)
    faces[1::2] = np.stack([v00, v11, v01], axis=1)
    faces.setflags(write=False)
    return faces


@lru_cache(maxsize=32)
def internal_edges(nx: int, ny: int) -> np.ndarray:
    """Pairs ``(i, j)`` of faces sharing an interior edge, ``i < j``."""
    f = grid_faces(nx, ny)
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    owner = np.tile(np.arange(len(f)), 3)
    edges = np.sort(edges, axis=1)
    key = edges[:, 0] * (nx * ny) + edges[:, 1]
    order = np.lexsort((owner, key))
    key = key[order]
    owner = owner[order]
    same = key[1:] == key[:-1]
    pairs = np.stack([owner[:-1][same], owner[1:][same]], axis=1)
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    pairs.setflags(write=False)
    return pairs


@lru_cache(maxsize=32)
def umbrella_operator(nx: int, ny: int) -> sp.csr_matrix:
    """Sparse map from vertex coordinates to interior umbrella vectors.

    Row ``r`` gives ``v_j - mean(neighbours of v_j)`` for the r-th interior
    vertex ``j``; neighbours follow the triangulation (six per vertex).
    """
    rows, cols, vals = [], [], []
    offsets = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1)]
    r = 0
    for j in range(1, ny - 1):
        for i in range(1, nx - 1):
            v = j * nx + i
            rows.append(r)
            cols.append(v)
            vals.append(1.0)
            for di, dj in offsets:
                rows.append(r)
                cols.append((j + dj) * nx + i + di)
                vals.append(-1.0 / len(offsets))
            r += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(r, nx * ny))


def boundary_frozen_mask(nx: int, ny: int) -> np.ndarray:
    """(n, 3) mask of frozen coordinates: x on left/right, y on bottom/top."""
    mask = np.zeros((ny, nx, 3), dtype=bool)
    mask[:, 0, 0] = mask[:, -1, 0] = True
    mask[0, :, 1] = mask[-1, :, 1] = True
    return mask.reshape(-1, 3)


@dataclass
class HeightFieldMesh:
    nx: int
    ny: int
    vertices: np.ndarray
    width: float
    height: float
    boundary_mask: np.ndarray = None
    # point-light parameterisation (x_front, y_front, z_back) per vertex
    front_params: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        if self.vertices.shape[0] != self.nx * self.ny:
            raise ConfigurationError("vertex count does not match grid")
        if self.boundary_mask is None:
            self.boundary_mask = boundary_frozen_mask(self.nx, self.ny)
        if self.front_params is not None:
            self.front_params = np.asarray(self.front_params, dtype=float).reshape(-1, 3)

    @property
    def faces(self) -> np.ndarray:
        return grid_faces(self.nx, self.ny)

    @property
    def n_faces(self) -> int:
        return 2 * (self.nx - 1) * (self.ny - 1)

    @property
    def domain_area(self) -> float:
        return self.width * self.height

    def copy(self) -> "HeightFieldMesh":
        return HeightFieldMesh(
            self.nx, self.ny, self.vertices.copy(), self.width, self.height,
            self.boundary_mask.copy(),
            None if self.front_params is None else self.front_params.copy(),
            dict(self.meta))

    def grid(self) -> np.ndarray:
        return self.vertices.reshape(self.ny, self.nx, 3)


def build_initial_mesh(W: float, H: float, nx: int, ny: int, z0: float = 0.0) -> HeightFieldMesh:
    if nx < 2 or ny < 2:
        raise ConfigurationError(f"grid needs at least 2x2 vertices, got {nx}x{ny}")
    if not (W > 0 and H > 0):
        raise ConfigurationError("domain sides must be positive")
    x = np.linspace(0.0, W, nx)
    y = np.linspace(0.0, H, ny)
    X, Y = np.meshgrid(x, y)
    V = np.stack([X.ravel(), Y.ravel(), np.full(nx * ny, float(z0))], axis=1)
    return HeightFieldMesh(nx, ny, V, float(W), float(H))


def face_normals(V: np.ndarray, F: np.ndarray) -> np.ndarray:
    p = V[F]
    c = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    norm = np.linalg.norm(c, axis=1)
    if np.any(norm == 0):
        raise DegenerateFaceError(f"zero-area face {int(np.argmin(norm))}")
    return c / norm[:, None]


def face_normal(mesh: HeightFieldMesh, face: int) -> np.ndarray:
    return face_normals(mesh.vertices, mesh.faces[face:face + 1])[0]


def projected_areas(V: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Signed areas of the faces projected onto the x-y plane."""
    p = V[F][..., :2]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def projected_signed_area(mesh: HeightFieldMesh, face: int) -> float:
    return float(projected_areas(mesh.vertices, mesh.faces[face:face + 1])[0])


def _refine_grid(G: np.ndarray) -> np.ndarray:
    """Linear refinement of an (ny, nx, k) grid consistent with the diagonal split."""
    ny, nx, k = G.shape
    out = np.empty((2 * ny - 1, 2 * nx - 1, k))
    out[::2, ::2] = G
    out[::2, 1::2] = 0.5 * (G[:, :-1] + G[:, 1:])
    out[1::2, ::2] = 0.5 * (G[:-1] + G[1:])
    # cell centre sits on the v00-v11 diagonal
    out[1::2, 1::2] = 0.5 * (G[:-1, :-1] + G[1:, 1:])
    return out


def subdivide(mesh: HeightFieldMesh) -> HeightFieldMesh:
    """Split every cell into four; the surface is unchanged as a point set."""
    nx2, ny2 = 2 * mesh.nx - 1, 2 * mesh.ny - 1
    V = _refine_grid(mesh.grid()).reshape(-1, 3)
    fp = None
    if mesh.front_params is not None:
        fp = _refine_grid(mesh.front_params.reshape(mesh.ny, mesh.nx, 3)).reshape(-1, 3)
    child = HeightFieldMesh(nx2, ny2, V, mesh.width, mesh.height,
                            boundary_frozen_mask(nx2, ny2), fp, dict(mesh.meta))
    return child


def parent_faces(nx: int, ny: int) -> np.ndarray:
    """For the mesh obtained by subdividing an (nx, ny) grid, parent face of each child."""
    nx2, ny2 = 2 * nx - 1, 2 * ny - 1
    I, J = np.meshgrid(np.arange(nx2 - 1), np.arange(ny2 - 1))
    I = I.ravel()
    J = J.ravel()
    pc = (J // 2) * (nx - 1) + I // 2
    a = (I % 2).astype(float)
    b = (J % 2).astype(float)
    out = np.empty(2 * len(I), dtype=np.int64)
    for t, (ox, oy) in enumerate([(2 / 3, 1 / 3), (1 / 3, 2 / 3)]):
        cx = (a + ox) / 2
        cy = (b + oy) / 2
        out[t::2] = 2 * pc + np.where(cx > cy, 0, 1)
    return out
