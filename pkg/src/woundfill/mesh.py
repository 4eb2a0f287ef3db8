"""Indexed triangle meshes and the geometric quantities the pipeline needs.

Units are millimetres throughout; volumes are in mm^3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MeshError(ValueError):
    """Invalid mesh data."""


class DegenerateGeometryError(MeshError):
    def __init__(self, face_index: int, message: str | None = None):
        self.face_index = int(face_index)
        super().__init__(message or f"face {self.face_index} has zero area")


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def validate(self, num_classes: int | None = None) -> "TriMesh":
        f = self.faces
        if f.size and (f.min() < 0 or f.max() >= self.n_vertices):
            bad = int(np.flatnonzero((f < 0).any(1) | (f >= self.n_vertices).any(1))[0])
            raise MeshError(f"face {bad} references a vertex outside 0..{self.n_vertices - 1}")
        repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if repeated.any():
            raise MeshError(f"face {int(np.flatnonzero(repeated)[0])} repeats a vertex index")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinate")
        if self.labels is not None:
            if len(self.labels) != self.n_faces:
                raise MeshError(f"{len(self.labels)} labels for {self.n_faces} faces")
            if self.labels.size and self.labels.min() < 0:
                raise MeshError("negative label")
            if num_classes is not None and self.labels.size and self.labels.max() >= num_classes:
                raise MeshError(f"label {int(self.labels.max())} >= class count {num_classes}")
        return self

    def copy(self) -> "TriMesh":
        return TriMesh(
            self.vertices.copy(),
            self.faces.copy(),
            None if self.labels is None else self.labels.copy(),
        )

    def flipped(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces[:, ::-1].copy(),
                       None if self.labels is None else self.labels.copy())

    def transformed(self, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "TriMesh":
        v = self.vertices @ np.asarray(rotation, dtype=np.float64).T + np.asarray(translation)
        return TriMesh(v, self.faces.copy(), None if self.labels is None else self.labels.copy())


@dataclass
class CellFeatures:
    """Per-face network inputs: M x 12 coordinates and M x 12 unit normals."""

    coords: np.ndarray
    normals: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.coords)


# geometry ------------------------------------------------------------------

def face_cross(mesh: TriMesh) -> np.ndarray:
    v = mesh.vertices
    a, b, c = v[mesh.faces[:, 0]], v[mesh.faces[:, 1]], v[mesh.faces[:, 2]]
    return np.cross(b - a, c - a)


def face_areas(mesh: TriMesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_cross(mesh), axis=1)


def degenerate_faces(mesh: TriMesh, rel_tol: float = 1e-12) -> np.ndarray:
    """Indices of faces whose area is zero relative to their longest edge."""
    v = mesh.vertices
    f = mesh.faces
    cross = np.linalg.norm(face_cross(mesh), axis=1)
    edges = np.stack([v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 1]], v[f[:, 0]] - v[f[:, 2]]], 1)
    longest_sq = (edges**2).sum(-1).max(1)
    repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    return np.flatnonzero(repeated | (cross <= rel_tol * longest_sq))


def face_normals(mesh: TriMesh) -> np.ndarray:
    cross = face_cross(mesh)
    norm = np.linalg.norm(cross, axis=1, keepdims=True)
    return np.divide(cross, norm, out=np.zeros_like(cross), where=norm > 0)


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Angle-weighted average of incident face normals, normalised."""
    v = mesh.vertices
    f = mesh.faces
    fn = face_normals(mesh)
    out = np.zeros_like(v)
    for corner in range(3):
        p = v[f[:, corner]]
        e1 = v[f[:, (corner + 1) % 3]] - p
        e2 = v[f[:, (corner + 2) % 3]] - p
        cos = (e1 * e2).sum(1) / np.maximum(np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1), 1e-300)
        angle = np.arccos(np.clip(cos, -1.0, 1.0))
        np.add.at(out, f[:, corner], fn * angle[:, None])
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    return np.divide(out, norm, out=np.zeros_like(out), where=norm > 0)


def cell_features(mesh: TriMesh) -> CellFeatures:
    bad = degenerate_faces(mesh)
    if bad.size:
        raise DegenerateGeometryError(bad[0])
    v = mesh.vertices
    f = mesh.faces
    corners = v[f]  # M x 3 x 3
    centroid = corners.mean(axis=1)
    coords = np.concatenate([corners.reshape(-1, 9), centroid], axis=1)
    vn = vertex_normals(mesh)
    normals = np.concatenate([vn[f].reshape(-1, 9), face_normals(mesh)], axis=1)
    return CellFeatures(coords=coords, normals=normals)


def mesh_volume(mesh: TriMesh) -> float:
    """Signed enclosed volume; positive for outward-oriented closed meshes."""
    v = mesh.vertices
    a, b, c = v[mesh.faces[:, 0]], v[mesh.faces[:, 1]], v[mesh.faces[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


@dataclass(frozen=True)
class WatertightReport:
    is_watertight: bool
    boundary_edge_count: int
    nonmanifold_edge_count: int
    misoriented_edge_count: int = 0

    def as_dict(self) -> dict:
        return {
            "is_watertight": self.is_watertight,
            "boundary_edge_count": self.boundary_edge_count,
            "nonmanifold_edge_count": self.nonmanifold_edge_count,
            "misoriented_edge_count": self.misoriented_edge_count,
        }


def _directed_edges(faces: np.ndarray) -> np.ndarray:
    return np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=0)


def check_watertight(mesh: TriMesh) -> WatertightReport:
    """Every undirected edge must be used by exactly two faces in opposite directions."""
    if mesh.n_faces == 0:
        return WatertightReport(False, 0, 0, 0)
    directed = _directed_edges(mesh.faces)
    undirected = np.sort(directed, axis=1)
    keys, inverse, counts = np.unique(undirected, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    boundary = int((counts == 1).sum())
    nonmanifold = int((counts > 2).sum())
    # for edges used twice, the two uses must run in opposite directions
    forward = (directed[:, 0] < directed[:, 1]).astype(np.int64)
    n_forward = np.bincount(inverse, weights=forward, minlength=len(keys))
    misoriented = int(((counts == 2) & (n_forward != 1)).sum())
    ok = boundary == 0 and nonmanifold == 0 and misoriented == 0
    return WatertightReport(ok, boundary, nonmanifold, misoriented)


def boundary_edges(faces: np.ndarray) -> np.ndarray:
    """Directed edges (as stored in ``faces``) whose undirected edge is used once."""
    directed = _directed_edges(faces)
    undirected = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(undirected, axis=0, return_inverse=True, return_counts=True)
    return directed[counts[inverse.reshape(-1)] == 1]


def boundary_loops(faces: np.ndarray) -> list[list[int]]:
    """Chain boundary edges into closed vertex loops.

    Each loop starts at its smallest vertex id and follows the face
    orientation. Where a vertex carries several outgoing boundary edges the
    smallest successor is taken first.
    """
    edges = boundary_edges(faces)
    succ: dict[int, list[int]] = {}
    for a, b in sorted(map(tuple, edges.tolist())):
        succ.setdefault(a, []).append(b)
    loops = []
    while succ:
        start = min(succ)
        loop = [start]
        cur = start
        while True:
            nxt_list = succ.get(cur)
            if not nxt_list:
                raise MeshError(f"open boundary chain at vertex {cur}")
            nxt = nxt_list.pop(0)
            if not nxt_list:
                del succ[cur]
            if nxt == start:
                break
            loop.append(nxt)
            cur = nxt
        loops.append(loop)
    return loops


def box_mesh(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TriMesh:
    """Axis-aligned box, 8 vertices and 12 outward-oriented triangles."""
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    v = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ])
    f = np.array([
        [0, 2, 1], [0, 3, 2],  # z0
        [4, 5, 6], [4, 6, 7],  # z1
        [0, 1, 5], [0, 5, 4],  # y0
        [3, 7, 6], [3, 6, 2],  # y1
        [0, 4, 7], [0, 7, 3],  # x0
        [1, 2, 6], [1, 6, 5],  # x1
    ])
    return TriMesh(v, f)


def submesh(mesh: TriMesh, face_ids: np.ndarray) -> tuple[TriMesh, np.ndarray]:
    """Extract faces ``face_ids``; returns the compact mesh and its source vertex ids."""
    faces = mesh.faces[np.asarray(face_ids, dtype=np.int64)]
    used, inverse = np.unique(faces, return_inverse=True)
    return TriMesh(mesh.vertices[used], inverse.reshape(-1, 3)), used


def concatenate(meshes: list[TriMesh]) -> TriMesh:
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.n_vertices
    return TriMesh(np.concatenate(verts), np.concatenate(faces))
