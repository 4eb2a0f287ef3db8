"""Seeded synthetic heads with craters: paired healthy/wounded meshes that
share vertex order, plus per-face wound labels."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .mesh import TriMesh, vertex_normals

MAX_LEVEL = 6


class InfeasiblePackingError(ValueError):
    pass


@dataclass
class SynthConfig:
    level: int = 3
    bases: int = 4
    wound_count: int = 3  # wounded variants per healthy base
    craters_per_mesh: int = 1
    radius_range: tuple[float, float] = (20.0, 30.0)
    depth_range: tuple[float, float] = (8.0, 15.0)
    base_radius: float = 50.0
    roughness: float = 0.05  # relative to depth
    shape_jitter: float = 0.08  # per-axis ellipsoid scaling of each base
    seed: int = 0

    def __post_init__(self):
        self.radius_range = tuple(float(x) for x in self.radius_range)
        self.depth_range = tuple(float(x) for x in self.depth_range)
        if not 0 <= self.level <= MAX_LEVEL:
            raise ValueError(f"level must be within 0..{MAX_LEVEL}")
        if self.bases < 1 or self.wound_count < 0 or self.craters_per_mesh < 1:
            raise ValueError("bases >= 1, wound_count >= 0, craters_per_mesh >= 1 required")
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise ValueError("radius range must be positive and ordered")
        dlo, dhi = self.depth_range
        if not 0 <= dlo <= dhi < self.base_radius:
            raise ValueError("depth range must be ordered and below the base radius")
        if not 0 <= self.roughness <= 0.05:
            raise ValueError("roughness is capped at 5% of depth")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["radius_range"] = list(self.radius_range)
        d["depth_range"] = list(self.depth_range)
        return d


@dataclass
class SamplePair:
    sample_id: str
    healthy: TriMesh
    wounded: TriMesh
    labels: np.ndarray
    base: int
    craters: list[dict]

    @property
    def is_wounded(self) -> bool:
        return bool(self.craters)


# icosphere -----------------------------------------------------------------

def generate_icosphere(level: int, radius: float = 1.0) -> TriMesh:
    """Subdivided icosahedron on a sphere; vertex order depends only on ``level``."""
    if not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"level must be within 0..{MAX_LEVEL}")
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    f = faces
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                p = v[a] + v[b]
                v.append(p / np.linalg.norm(p))
                cache[key] = len(v) - 1
            return cache[key]

        new_faces = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = new_faces
    return TriMesh(np.array(v) * radius, np.array(f, dtype=np.int64))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_direction(rng: np.random.Generator) -> np.ndarray:
    d = rng.normal(size=3)
    return d / np.linalg.norm(d)


def make_base(cfg: SynthConfig, rng: np.random.Generator) -> TriMesh:
    """Icosphere squashed into a random ellipsoid so that bases differ."""
    sphere = generate_icosphere(cfg.level, cfg.base_radius)
    scale = 1.0 + cfg.shape_jitter * rng.uniform(-1.0, 1.0, size=3)
    return TriMesh(sphere.vertices * scale, sphere.faces)


# craters ---------------------------------------------------------------------

def crater_profile(dist: np.ndarray, radius: float) -> np.ndarray:
    """cos^2 falloff: 1 at the centre, 0 (with zero slope) at the rim."""
    inside = dist < radius
    return np.where(inside, np.cos(np.pi * dist / (2.0 * radius)) ** 2, 0.0)


def surface_distance(mesh: TriMesh, center_dir, base_radius: float) -> np.ndarray:
    """Arc length on the base sphere between each vertex direction and ``center_dir``."""
    c = np.asarray(center_dir, dtype=np.float64)
    c = c / np.linalg.norm(c)
    dirs = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
    return base_radius * np.arccos(np.clip(dirs @ c, -1.0, 1.0))


def carve_wound(mesh: TriMesh, center_dir, radius: float, depth: float, seed: int,
                base_radius: float | None = None, roughness: float = 0.05,
                existing: np.ndarray | None = None) -> tuple[TriMesh, np.ndarray]:
    """Push vertices inside the crater inwards along their normals.

    Returns the wounded mesh (same vertex order) and 0/1 face labels, where a
    face is wound iff one of its vertices lies inside the crater.
    ``existing`` holds labels of earlier craters; touching them is an error.
    """
    if radius <= 0 or depth < 0:
        raise ValueError("radius must be > 0 and depth >= 0")
    if not 0 <= roughness <= 0.05:
        raise ValueError("roughness is capped at 5% of depth")
    base_radius = base_radius or float(np.linalg.norm(mesh.vertices, axis=1).mean())
    dist = surface_distance(mesh, center_dir, base_radius)
    inside = dist < radius
    if not inside.any():
        raise ValueError("crater contains no vertex; increase the radius or mesh level")
    labels = inside[mesh.faces].any(axis=1).astype(np.int64)
    if existing is not None and np.any((existing == 1) & (labels == 1)):
        raise InfeasiblePackingError("crater overlaps an existing wound")
    rng = np.random.default_rng(seed)
    jitter = 1.0 + roughness * rng.uniform(-1.0, 1.0, size=mesh.n_vertices)
    offset = depth * crater_profile(dist, radius) * jitter
    normals = vertex_normals(mesh)
    verts = mesh.vertices.copy()
    verts[inside] -= offset[inside, None] * normals[inside]
    return TriMesh(verts, mesh.faces.copy(), labels), labels


def _place_craters(cfg: SynthConfig, rng: np.random.Generator, n: int) -> list[dict]:
    craters: list[dict] = []
    for _ in range(n):
        for _attempt in range(200):
            direction = random_direction(rng)
            radius = float(rng.uniform(*cfg.radius_range))
            ok = all(
                cfg.base_radius * math.acos(float(np.clip(direction @ np.array(c["direction"]), -1, 1)))
                > radius + c["radius"] + 2.0 * _edge_length(cfg)
                for c in craters
            )
            if ok:
                break
        else:
            raise InfeasiblePackingError(f"could not place {n} non-overlapping craters")
        craters.append({
            "direction": direction.tolist(),
            "radius": radius,
            "depth": float(rng.uniform(*cfg.depth_range)),
            "seed": int(rng.integers(2**31)),
        })
    return craters


def _edge_length(cfg: SynthConfig) -> float:
    # icosahedron edge on the unit sphere is ~1.0515, halved per level
    return 1.0515 * cfg.base_radius / 2**cfg.level


def generate_dataset(cfg: SynthConfig) -> list[SamplePair]:
    """``bases`` healthy heads, each followed by ``wound_count`` wounded variants."""
    root = np.random.SeedSequence(cfg.seed)
    samples = []
    for b, child in enumerate(root.spawn(cfg.bases)):
        rng = np.random.default_rng(child)
        healthy = make_base(cfg, rng)
        zeros = np.zeros(healthy.n_faces, dtype=np.int64)
        samples.append(SamplePair(f"base{b:03d}_healthy", healthy,
                                  TriMesh(healthy.vertices.copy(), healthy.faces.copy(), zeros.copy()),
                                  zeros, b, []))
        for w in range(cfg.wound_count):
            craters = _place_craters(cfg, rng, cfg.craters_per_mesh)
            wounded = healthy
            labels = np.zeros(healthy.n_faces, dtype=np.int64)
            for c in craters:
                wounded, lab = carve_wound(wounded, c["direction"], c["radius"], c["depth"], c["seed"],
                                           cfg.base_radius, cfg.roughness, existing=labels)
                labels = labels | lab
            wounded = TriMesh(wounded.vertices, wounded.faces, labels)
            samples.append(SamplePair(f"base{b:03d}_wound{w:02d}", healthy, wounded, labels, b, craters))
    return samples


def write_dataset(samples: list[SamplePair], out_dir, cfg: SynthConfig) -> dict:
    """Write OBJ + ``.labels`` per sample and a ``manifest.json``."""
    from .meshio import labels_path, save_mesh

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    healthy_files: dict[int, str] = {}
    for s in samples:
        if not s.is_wounded:
            name = f"{s.sample_id}.obj"
            save_mesh(s.wounded, out / name)
            healthy_files[s.base] = name
    for s in samples:
        name = f"{s.sample_id}.obj"
        if s.is_wounded:
            save_mesh(s.wounded, out / name)
        entries.append({
            "id": s.sample_id,
            "kind": "wounded" if s.is_wounded else "healthy",
            "base": s.base,
            "mesh": name,
            "labels": labels_path(name).name,
            "healthy": healthy_files[s.base],
            "craters": s.craters,
        })
    manifest = {"seed": cfg.seed, "config": cfg.to_dict(), "samples": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def read_dataset(root) -> tuple[dict, list[SamplePair]]:
    """Load a dataset written by :func:`write_dataset`."""
    from .meshio import load_mesh

    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    cache: dict[str, TriMesh] = {}
    samples = []
    for e in manifest["samples"]:
        wounded = load_mesh(root / e["mesh"], labels=root / e["labels"])
        if e["healthy"] not in cache:
            cache[e["healthy"]] = load_mesh(root / e["healthy"])
        healthy = cache[e["healthy"]]
        samples.append(SamplePair(e["id"], TriMesh(healthy.vertices, healthy.faces), wounded,
                                  wounded.labels, e["base"], e.get("craters", [])))
    return manifest, samples
