"""OBJ / PLY reading and OBJ / PLY / binary-STL writing, plus label sidecars."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .mesh import MeshError, TriMesh, face_normals

STL_HEADER = b"woundfill binary STL".ljust(80, b"\0")

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class MeshLoadError(MeshError):
    pass


def labels_path(mesh_path) -> Path:
    return Path(mesh_path).with_suffix(".labels")


def _format_of(path: Path, fmt: str | None) -> str:
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "stl":
        fmt = "stl-binary"
    return fmt


def load_mesh(path, fmt: str | None = None, labels: str | Path | None = None) -> TriMesh:
    """Read an OBJ, PLY or binary STL file; vertex and face order are kept as stored.

    STL corners with bit-identical coordinates are merged into one vertex.

    Labels come from ``labels`` if given, otherwise from ``<stem>.labels``
    next to the mesh when that file exists.
    """
    path = Path(path)
    fmt = _format_of(path, fmt)
    if not path.exists():
        raise MeshLoadError(f"{path}: no such file")
    if fmt == "obj":
        vertices, faces = _read_obj(path)
    elif fmt == "ply":
        vertices, faces = _read_ply(path)
    elif fmt == "stl-binary":
        vertices, faces = _stl_vertices(read_stl(path))
    else:
        raise MeshLoadError(f"{path}: unsupported input format {fmt!r}")
    mesh = TriMesh(vertices, faces)
    sidecar = Path(labels) if labels is not None else labels_path(path)
    if labels is not None or sidecar.exists():
        mesh.labels = read_labels(sidecar)
    try:
        mesh.validate()
    except MeshError as exc:
        raise MeshLoadError(f"{path}: {exc}") from None
    return mesh


def _read_obj(path: Path) -> tuple[np.ndarray, np.ndarray]:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    vertices.append([float(x) for x in parts[1:4]])
                    if len(vertices[-1]) != 3:
                        raise ValueError("vertex needs three coordinates")
                elif tag == "f":
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                    if len(idx) != 3:
                        raise MeshLoadError(f"{path}:{lineno}: face with {len(idx)} vertices, only triangles are supported")
                    n = len(vertices)
                    resolved = []
                    for i in idx:
                        j = i - 1 if i > 0 else n + i
                        if i == 0 or not 0 <= j < n:
                            raise MeshLoadError(f"{path}:{lineno}: vertex index {i} out of range (have {n})")
                        resolved.append(j)
                    faces.append(resolved)
            except MeshLoadError:
                raise
            except ValueError as exc:
                raise MeshLoadError(f"{path}:{lineno}: cannot parse {line.strip()!r} ({exc})") from None
    return np.array(vertices, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _read_ply(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise MeshLoadError(f"{path}: missing 'ply' magic")
        fmt = None
        elements: list[dict] = []
        while True:
            raw = fh.readline()
            if not raw:
                raise MeshLoadError(f"{path}: header not terminated")
            parts = raw.decode("ascii", "replace").split()
            if not parts:
                continue
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
            elif parts[0] == "property":
                if not elements:
                    raise MeshLoadError(f"{path}: property before element")
                if parts[1] == "list":
                    elements[-1]["props"].append((parts[4], "list", parts[2], parts[3]))
                else:
                    elements[-1]["props"].append((parts[2], parts[1]))
            elif parts[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise MeshLoadError(f"{path}: unsupported PLY format {fmt!r}")
        body = fh.read()

    vertices = faces = None
    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        for el in elements:
            rows = []
            for _ in range(el["count"]):
                row = {}
                for prop in el["props"]:
                    if prop[1] == "list":
                        n = int(tokens[pos]); pos += 1
                        row[prop[0]] = [int(t) for t in tokens[pos:pos + n]]; pos += n
                    else:
                        row[prop[0]] = float(tokens[pos]); pos += 1
                rows.append(row)
            if el["name"] == "vertex":
                vertices = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=np.float64)
            elif el["name"] == "face":
                faces = _ply_faces(path, [r[el["props"][0][0]] for r in rows])
    else:
        pos = 0
        for el in elements:
            scalar = all(p[1] != "list" for p in el["props"])
            if scalar:
                dt = np.dtype([(p[0], "<" + _PLY_TYPES[p[1]]) for p in el["props"]])
                arr = np.frombuffer(body, dtype=dt, count=el["count"], offset=pos)
                pos += dt.itemsize * el["count"]
                if el["name"] == "vertex":
                    vertices = np.stack([arr["x"], arr["y"], arr["z"]], 1).astype(np.float64)
            else:
                lists = []
                for _ in range(el["count"]):
                    for prop in el["props"]:
                        if prop[1] == "list":
                            ct = np.dtype("<" + _PLY_TYPES[prop[2]])
                            it = np.dtype("<" + _PLY_TYPES[prop[3]])
                            n = int(np.frombuffer(body, ct, 1, pos)[0]); pos += ct.itemsize
                            lists.append(np.frombuffer(body, it, n, pos).tolist()); pos += it.itemsize * n
                        else:
                            pos += np.dtype(_PLY_TYPES[prop[1]]).itemsize
                if el["name"] == "face":
                    faces = _ply_faces(path, lists)
    if vertices is None:
        raise MeshLoadError(f"{path}: no vertex element")
    if faces is None:
        faces = np.zeros((0, 3), dtype=np.int64)
    if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise MeshLoadError(f"{path}: face index out of range (have {len(vertices)} vertices)")
    return vertices, faces


def _ply_faces(path: Path, lists) -> np.ndarray:
    for i, f in enumerate(lists):
        if len(f) != 3:
            raise MeshLoadError(f"{path}: face {i} has {len(f)} vertices, only triangles are supported")
    return np.array(lists, dtype=np.int64).reshape(-1, 3)


def read_labels(path) -> np.ndarray:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8").split()
        return np.array([int(t) for t in text], dtype=np.int64)
    except (OSError, ValueError) as exc:
        raise MeshLoadError(f"{path}: cannot read labels ({exc})") from None


def write_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{int(x)}\n" for x in labels), encoding="utf-8")


def save_mesh(mesh: TriMesh, path, fmt: str | None = None) -> None:
    """Write ``mesh``; output bytes depend only on the mesh content.

    OBJ output also writes the ``.labels`` sidecar when the mesh has labels.
    """
    path = Path(path)
    fmt = _format_of(path, fmt)
    if fmt == "obj":
        _write_obj(mesh, path)
        if mesh.labels is not None:
            write_labels(labels_path(path), mesh.labels)
    elif fmt == "ply":
        _write_ply(mesh, path)
        if mesh.labels is not None:
            write_labels(labels_path(path), mesh.labels)
    elif fmt == "stl-binary":
        write_stl(mesh, path)
    else:
        raise ValueError(f"unsupported output format {fmt!r}")


def _write_obj(mesh: TriMesh, path: Path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}\n" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.faces.tolist()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def _write_ply(mesh: TriMesh, path: Path) -> None:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    faces = np.zeros(mesh.n_faces, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    faces["n"] = 3
    faces["idx"] = mesh.faces
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(mesh.vertices.astype("<f8").tobytes())
        fh.write(faces.tobytes())


STL_RECORD = np.dtype([
    ("normal", "<f4", (3,)),
    ("v0", "<f4", (3,)),
    ("v1", "<f4", (3,)),
    ("v2", "<f4", (3,)),
    ("attr", "<u2"),
])


def stl_size(n_triangles: int) -> int:
    return 84 + 50 * n_triangles


def write_stl(mesh: TriMesh, path) -> None:
    rec = np.zeros(mesh.n_faces, dtype=STL_RECORD)
    rec["normal"] = face_normals(mesh)
    tri = mesh.vertices[mesh.faces]
    rec["v0"], rec["v1"], rec["v2"] = tri[:, 0], tri[:, 1], tri[:, 2]
    with open(path, "wb") as fh:
        fh.write(STL_HEADER)
        fh.write(struct.pack("<I", mesh.n_faces))
        fh.write(rec.tobytes())


def _stl_vertices(records: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    corners = np.stack([records["v0"], records["v1"], records["v2"]], axis=1).reshape(-1, 3)
    unique, inverse = np.unique(corners, axis=0, return_inverse=True)
    return unique.astype(np.float64), inverse.reshape(-1, 3).astype(np.int64)


def read_stl(path) -> np.ndarray:
    """Structured array of STL records (normal, v0, v1, v2, attr)."""
    data = Path(path).read_bytes()
    if len(data) < 84:
        raise MeshLoadError(f"{path}: truncated STL header")
    (n,) = struct.unpack_from("<I", data, 80)
    if len(data) != stl_size(n):
        raise MeshLoadError(f"{path}: expected {stl_size(n)} bytes for {n} triangles, found {len(data)}")
    return np.frombuffer(data, dtype=STL_RECORD, count=n, offset=84)
