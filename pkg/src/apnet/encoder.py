"""Expert-module encoding of class attribute vectors into node features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import SeededRng, as_matrix, kmeans, matmul, relu


@dataclass(frozen=True)
class CentroidSet:
    """k-means centroids of the seen-class attribute space; never trained."""

    C: np.ndarray

    @property
    def k(self) -> int:
        return self.C.shape[0]


@dataclass
class ExpertParams:
    """``k`` affine maps attr_dim -> feat_dim, stacked as (k, feat, attr) and (k, feat)."""

    weight: np.ndarray
    bias: np.ndarray

    @property
    def k(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, k: int, attr_dim: int, feat_dim: int, rng: SeededRng) -> "ExpertParams":
        bound = 1.0 / np.sqrt(attr_dim)
        return cls(
            weight=rng.uniform(-bound, bound, (k, feat_dim, attr_dim)),
            bias=np.zeros((k, feat_dim)),
        )


def normalize_rows(s: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.sum(s * s, axis=1, keepdims=True))
    return s / np.where(norms > 0, norms, 1.0)


def fit_centroids(seen_attributes, k: int, rng: SeededRng, max_iters: int = 100) -> CentroidSet:
    """Cluster seen-class attribute vectors only; unseen rows must not be passed."""
    C = kmeans(as_matrix(seen_attributes, "seen_attributes"), k, max_iters, rng)
    C.setflags(write=False)
    return CentroidSet(C)


def expert_preactivations(S: np.ndarray, centroids: CentroidSet, experts: ExpertParams) -> list[np.ndarray]:
    """Per-expert ``(S - C_i) Theta_i^T + b_i``, one (n, feat_dim) block per expert."""
    if experts.k != centroids.k:
        raise ValueError(f"{experts.k} experts but {centroids.k} centroids")
    if S.shape[1] != centroids.C.shape[1] or S.shape[1] != experts.weight.shape[2]:
        raise ValueError(
            f"attribute dim {S.shape[1]} does not match centroids {centroids.C.shape[1]}"
            f" / experts {experts.weight.shape[2]}"
        )
    return [
        matmul(S - centroids.C[i], experts.weight[i].T) + experts.bias[i]
        for i in range(experts.k)
    ]


def encode_batch(S, centroids: CentroidSet, experts: ExpertParams) -> np.ndarray:
    """Encode every row of ``S``; returns the (n, feat_dim) initial node features."""
    S = as_matrix(S, "attributes")
    pre = expert_preactivations(S, centroids, experts)
    out = np.zeros_like(pre[0])
    for p in pre:
        out += relu(p)
    return out


def encode(s_y, centroids: CentroidSet, experts: ExpertParams) -> np.ndarray:
    return encode_batch(np.asarray(s_y, dtype=np.float64)[None, :], centroids, experts)[0]
