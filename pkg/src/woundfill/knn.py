"""Exact k-nearest-neighbour graphs over node feature rows.

Rows are ordered by squared Euclidean distance, ties going to the lower node
index; a node is never its own neighbour. ``build_knn`` shortlists candidates
with the Gram-matrix expansion and then re-scores them with the same
sequential sum of squares the brute-force oracle uses, so both produce the
same graph bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_BLOCK = 256


@dataclass(frozen=True)
class KnnGraph:
    k: int
    neighbors: np.ndarray  # M x k, int64

    @property
    def n_nodes(self) -> int:
        return len(self.neighbors)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, KnnGraph)
            and self.k == other.k
            and np.array_equal(self.neighbors, other.neighbors)
        )

    __hash__ = None


def _check(features, k) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError(f"features must be an M x d matrix, got shape {x.shape}")
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    if k >= len(x):
        raise ValueError(f"k={k} must be smaller than the node count {len(x)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    return x


def _sqdist_sequential(xt: np.ndarray, rows: np.ndarray, cand: np.ndarray) -> np.ndarray:
    """sum_j (x[row]_j - x[cand]_j)^2 accumulated left to right over feature dims.

    ``xt`` is the transposed (d x M) feature matrix.
    """
    acc = np.zeros(cand.shape, dtype=np.float64)
    for col in xt:
        diff = col[rows][:, None] - col[cand]
        acc += diff * diff
    return acc


def _rank(dist: np.ndarray, cand: np.ndarray, k: int) -> np.ndarray:
    order = np.lexsort((cand, dist), axis=-1)[..., :k]
    return np.take_along_axis(cand, order, axis=-1)


def build_knn(features, k: int) -> KnnGraph:
    x = _check(features, k)
    m, d = x.shape
    # shortlist in the caller's precision, re-score exactly in float64
    work_dtype = np.float32 if np.asarray(features).dtype == np.float32 else np.float64
    xw = x.astype(work_dtype)
    xt = np.ascontiguousarray(x.T)
    sq = np.einsum("ij,ij->i", xw, xw)
    n_cand = min(m - 1, k + max(8, k))
    eps = float(np.finfo(work_dtype).eps)
    out = np.empty((m, k), dtype=np.int64)
    for start in range(0, m, _BLOCK):
        rows = np.arange(start, min(start + _BLOCK, m))
        approx = sq[rows, None] + sq[None, :] - 2.0 * (xw[rows] @ xw.T)
        approx[np.arange(len(rows)), rows] = np.inf
        # bound on the rounding error of the expansion
        tol = 4.0 * (d + 2) * eps * (sq[rows] + sq.max()) + 1e-30
        if n_cand < m - 1:
            part = np.argpartition(approx, n_cand, axis=1)
            cand = part[:, :n_cand]
            kth = np.partition(np.take_along_axis(approx, cand, axis=1), k - 1, axis=1)[:, k - 1]
            first_out = np.take_along_axis(approx, part[:, n_cand:n_cand + 1], axis=1)[:, 0]
            safe = first_out > kth + 2.0 * tol
        else:
            cand = np.argsort(approx, axis=1, kind="stable")[:, : m - 1]
            safe = np.ones(len(rows), dtype=bool)
        exact = _sqdist_sequential(xt, rows, cand)
        out[rows] = _rank(exact, cand, k)
        for r in np.flatnonzero(~safe):
            i = rows[r]
            others = np.delete(np.arange(m), i)
            dist = _sqdist_sequential(xt, np.array([i]), others[None, :])[0]
            out[i] = _rank(dist, others, k)
    return KnnGraph(k=int(k), neighbors=out)


def knn_oracle(features, k: int) -> KnnGraph:
    """Exhaustive all-pairs reference in plain Python."""
    x = _check(features, k)
    rows = x.tolist()
    m = len(rows)
    out = []
    for i in range(m):
        scored = []
        for j in range(m):
            if j == i:
                continue
            s = 0.0
            for a, b in zip(rows[i], rows[j]):
                s += (a - b) * (a - b)
            scored.append((s, j))
        scored.sort()
        out.append([j for _, j in scored[:k]])
    return KnnGraph(k=int(k), neighbors=np.array(out, dtype=np.int64).reshape(m, k))
