"""Independent reference computations used by the tests.

They read package containers (TriMesh, parameter objects) but reuse none of
the package's computations.
"""

from __future__ import annotations

import numpy as np

from woundfill.mesh import TriMesh


def rotation_to_z(direction) -> np.ndarray:
    """Proper rotation taking the unit vector ``direction`` to +z."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(d, z)
    c = float(d @ z)
    if np.linalg.norm(v) < 1e-12:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def _raster_heights(tri: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Height of a height-field surface above each grid column (NaN where missed).

    ``tri`` is T x 3 x 3; columns are centred at (xs[i], ys[j]).
    """
    h = np.full((len(xs), len(ys)), np.nan)
    x0, y0 = xs[0], ys[0]
    step = xs[1] - xs[0]
    for (ax, ay, az), (bx, by, bz), (cx, cy, cz) in tri:
        lo_i = max(int(np.floor((min(ax, bx, cx) - x0) / step)), 0)
        hi_i = min(int(np.ceil((max(ax, bx, cx) - x0) / step)), len(xs) - 1)
        lo_j = max(int(np.floor((min(ay, by, cy) - y0) / step)), 0)
        hi_j = min(int(np.ceil((max(ay, by, cy) - y0) / step)), len(ys) - 1)
        if hi_i < lo_i or hi_j < lo_j:
            continue
        px, py = np.meshgrid(xs[lo_i:hi_i + 1], ys[lo_j:hi_j + 1], indexing="ij")
        det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
        if abs(det) < 1e-15:
            continue
        l1 = ((by - cy) * (px - cx) + (cx - bx) * (py - cy)) / det
        l2 = ((cy - ay) * (px - cx) + (ax - cx) * (py - cy)) / det
        l3 = 1.0 - l1 - l2
        inside = (l1 >= 0) & (l2 >= 0) & (l3 >= 0)
        z = l1 * az + l2 * bz + l3 * cz
        block = h[lo_i:hi_i + 1, lo_j:hi_j + 1]
        block[inside] = z[inside]
    return h


def voxel_volume_between(upper: TriMesh, lower: TriMesh, faces: np.ndarray, axis,
                         spacing: float = 0.05) -> float:
    """Volume between two surfaces that share the faces ``faces``.

    Both patches are rotated so ``axis`` points along +z, where each is a
    height field.  Space is cut into cubic voxels of edge ``spacing``; a voxel
    counts when its centre lies below the upper and above the lower surface.
    """
    rot = rotation_to_z(axis)
    up = (upper.vertices @ rot.T)[faces]
    lo = (lower.vertices @ rot.T)[faces]
    pts = np.concatenate([up, lo]).reshape(-1, 3)
    xmin, ymin = pts[:, :2].min(0) - spacing
    xmax, ymax = pts[:, :2].max(0) + spacing
    # voxel centres sit at (i + 1/2) * spacing on each axis
    xs = (np.arange(np.floor(xmin / spacing), np.ceil(xmax / spacing)) + 0.5) * spacing
    ys = (np.arange(np.floor(ymin / spacing), np.ceil(ymax / spacing)) + 0.5) * spacing
    z_up = _raster_heights(up, xs, ys)
    z_lo = _raster_heights(lo, xs, ys)
    ok = ~np.isnan(z_up) & ~np.isnan(z_lo)
    top = np.floor(z_up[ok] / spacing - 0.5)  # highest centre index <= z_up
    bottom = np.ceil(z_lo[ok] / spacing - 0.5)  # lowest centre index >= z_lo
    count = np.clip(top - bottom + 1, 0, None).sum()
    return float(count * spacing**3)


def brute_force_displaced(a: TriMesh, b: TriMesh, threshold: float) -> set[int]:
    """Vertices whose position differs by more than ``threshold``, one at a time."""
    out = set()
    for i in range(a.n_vertices):
        d = 0.0
        for p, q in zip(a.vertices[i].tolist(), b.vertices[i].tolist()):
            d += (p - q) ** 2
        if d ** 0.5 > threshold:
            out.add(i)
    return out


def symmetric_difference_accuracy(pred, gt, total: int) -> float:
    """Per-vertex membership comparison by exhaustive loop."""
    pred, gt = set(map(int, pred)), set(map(int, gt))
    agree = sum((v in pred) == (v in gt) for v in range(total))
    return agree / total


def finite_difference(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function with respect to every entry of ``x``."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn()
        flat[i] = keep - h
        down = fn()
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * h)
    return g


# straightforward second implementation of the network layers -------------------

def mlp_numpy(mlp, x: np.ndarray) -> np.ndarray:
    """Row-wise MLP in plain numpy (no normalisation layers)."""
    h = np.asarray(x, dtype=np.float64)
    for layer in mlp.layers:
        h = h @ layer.weight.data + layer.bias.data
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
        elif layer.activation == "sigmoid":
            h = 1.0 / (1.0 + np.exp(-h))
    return h


def attention_layer_loops(layer, F: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    m, k = neighbors.shape
    out = []
    for i in range(m):
        cal = [mlp_numpy(layer.calibrate, np.concatenate([F[i], F[j]])[None])[0] for j in neighbors[i]]
        logit = [mlp_numpy(layer.attend, np.concatenate([F[i] - F[j], F[j]])[None])[0] for j in neighbors[i]]
        logit = np.array(logit)
        w = np.exp(logit - logit.max(0))
        w = w / w.sum(0)
        out.append(sum(w[n] * cal[n] for n in range(k)))
    return np.array(out)


def maxpool_layer_loops(layer, F: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    out = []
    for i in range(len(F)):
        cal = [mlp_numpy(layer.calibrate, np.concatenate([F[i], F[j]])[None])[0] for j in neighbors[i]]
        out.append(np.max(cal, axis=0))
    return np.array(out)


def fusion_loops(params, c_feats, n_feats) -> np.ndarray:
    Fc = mlp_numpy(params.fuse_c, np.concatenate(c_feats, axis=1))
    Fn = mlp_numpy(params.fuse_n, np.concatenate(n_feats, axis=1))
    probs = []
    for fc, fn in zip(Fc, Fn):
        a, b = np.sqrt(np.sum(fc**2)), np.sqrt(np.sum(fn**2))
        tc, tn = (b / (a + b), a / (a + b)) if a + b > 0 else (0.5, 0.5)
        joined = np.concatenate([tc * fc, tn * fn])
        beta = mlp_numpy(params.att, joined[None])[0]
        logits = mlp_numpy(params.head, (beta * joined)[None])[0]
        e = np.exp(logits - logits.max())
        probs.append(e / e.sum())
    return np.array(probs)
