"""Deterministic dense kernels, activations, clustering and seeded randomness.

Every matrix in the package is a C-ordered ``float64`` numpy array.  The
reductions here use a fixed left-to-right accumulation order so results are
bitwise reproducible from run to run and independent of the BLAS build.
"""
from __future__ import annotations

import math

import numpy as np


class SeededRng:
    """Single-owner random stream built on numpy's PCG64 bit generator.

    PCG64 is platform independent, so the same seed yields the same stream
    everywhere.  Use :meth:`spawn` to hand independent child streams to
    parallel workers instead of sharing one instance.
    """

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed))
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self, n: int = 1) -> list["SeededRng"]:
        return [SeededRng(s) for s in self._seq.spawn(n)]

    def uniform(self, low, high, size) -> np.ndarray:
        return self.gen.uniform(low, high, size)

    def normal(self, loc, scale, size) -> np.ndarray:
        return self.gen.normal(loc, scale, size)

    def random(self) -> float:
        return float(self.gen.random())

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and promote ``x`` to a finite 2-D float64 array."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed summation order.

    Entry ``(i, j)`` is accumulated as ``((0 + a[i,0]b[0,j]) + a[i,1]b[1,j]) + ...``,
    exactly what a naive triple loop produces.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def colsum(x: np.ndarray) -> np.ndarray:
    """Sum over axis 0, accumulated row by row in index order."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape[1:])
    for row in x:
        out += row
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, evaluated without overflow for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax_t(scores, gamma: float = 1.0) -> np.ndarray:
    """Softmax of ``gamma * scores`` using max-subtraction."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("softmax_t needs a non-empty 1-D score vector")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    z = gamma * s
    e = np.exp(z - z.max())
    return e / colsum(e[:, None])[0]


def _dot(u: np.ndarray, v: np.ndarray) -> float:
    acc = 0.0
    for a, b in zip(u.tolist(), v.tolist()):
        acc += a * b
    return acc


def cosine(u, v) -> float:
    """Cosine similarity; a zero-norm argument gives 0 by convention."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = math.sqrt(_dot(u, u))
    nv = math.sqrt(_dot(v, v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return min(1.0, max(-1.0, _dot(u, v) / (nu * nv)))


def cosine_matrix(f: np.ndarray) -> np.ndarray:
    """All-pairs cosine between the rows of ``f``; exactly symmetric.

    Matches :func:`cosine` entry by entry, including the zero-norm rule.
    """
    g = matmul(f, f.T)
    norms = np.sqrt(np.diag(g).copy())
    denom = norms[:, None] * norms[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(denom > 0, g / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(c, -1.0, 1.0)


def sample_without_replacement(pool: int, n: int, rng: SeededRng) -> list[int]:
    if n < 0 or n > pool:
        raise ValueError(f"cannot draw {n} distinct items from a pool of {pool}")
    if n == 0:
        return []
    return [int(i) for i in rng.permutation(pool)[:n]]


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.sum(diff * diff, axis=2)


def _kmeans_pp(points: np.ndarray, k: int, rng: SeededRng) -> np.ndarray:
    m = points.shape[0]
    chosen = [int(rng.gen.integers(m))]
    d2 = _sq_dists(points, points[chosen])[:, 0]
    for _ in range(1, k):
        total = float(d2.sum())
        if total > 0:
            cdf = np.cumsum(d2 / total)
            idx = int(np.searchsorted(cdf, rng.random(), side="right"))
            idx = min(idx, m - 1)
            # guard against landing on a zero-mass point through rounding
            while d2[idx] == 0 and idx > 0:
                idx -= 1
        else:
            rest = [i for i in range(m) if i not in chosen]
            idx = rest[int(rng.gen.integers(len(rest)))]
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(points, points[idx : idx + 1])[:, 0])
    return points[chosen].copy()


def kmeans(
    points,
    k: int,
    max_iters: int,
    rng: SeededRng,
    history: list[float] | None = None,
) -> np.ndarray:
    """Lloyd's algorithm seeded with k-means++.

    Stops after ``max_iters`` updates or once assignments no longer change.
    A cluster that ends up empty is re-seeded on the point farthest from its
    current centroid, so every returned centroid owns at least one point.
    If ``history`` is given, the within-cluster SSE after each assignment
    step is appended to it.
    """
    pts = as_matrix(points, "points")
    m = pts.shape[0]
    if k <= 0:
        raise ValueError("k must be positive")
    if k > m:
        raise ValueError(f"k={k} exceeds the number of points ({m})")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    centroids = _kmeans_pp(pts, k, rng)
    assign = None
    for _ in range(max_iters):
        d2 = _sq_dists(pts, centroids)
        new_assign = np.argmin(d2, axis=1)
        if history is not None:
            history.append(float(d2[np.arange(m), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = pts[assign == j]
            if len(members):
                # shifted mean: exact when all members coincide
                centroids[j] = members[0] + colsum(members - members[0]) / len(members)
        # re-seed empties; each re-seed claims a distinct point
        for j in range(k):
            if not np.any(assign == j):
                own = _sq_dists(pts, centroids)[np.arange(m), assign]
                far = int(np.argmax(own))
                centroids[j] = pts[far]
                assign[far] = j
    return centroids
