"""Class-graph construction and attention propagation of node features.

The edge *support* is decided once from the step-0 features and then held
fixed, while the attention *values* are recomputed from the current features
at every step.  Self-loops are always present, so every node has at least one
neighbour and the row softmax is always defined.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import SeededRng, as_matrix, colsum, cosine_matrix, matmul

MODES = ("learned", "fixed_hop", "none")
COS_40 = math.cos(math.radians(40.0))


@dataclass
class EdgeTransformParams:
    """Affine map feat_dim -> edge_dim shared by both sides of the similarity."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def init(cls, feat_dim: int, edge_dim: int, rng: SeededRng) -> "EdgeTransformParams":
        bound = 1.0 / np.sqrt(feat_dim)
        return cls(rng.uniform(-bound, bound, (edge_dim, feat_dim)), np.zeros(edge_dim))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return matmul(x, self.weight.T) + self.bias


@dataclass(frozen=True)
class EdgeSet:
    adjacency: np.ndarray

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def edge_list(self) -> list[tuple[int, int]]:
        ys, zs = np.nonzero(self.adjacency)
        return list(zip(ys.tolist(), zs.tolist()))


@dataclass
class PropagationConfig:
    epsilon: float = COS_40
    gamma1: float = 10.0
    steps: int = 2
    mode: str = "learned"
    edge_dim: int | None = None

    def validate(self) -> None:
        if not -1.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [-1, 1], got {self.epsilon}")
        if self.gamma1 <= 0:
            raise ValueError("gamma1 must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def build_edges(x0, f: EdgeTransformParams, epsilon: float) -> EdgeSet:
    x0 = as_matrix(x0, "x0")
    adj = cosine_matrix(f.apply(x0)) >= epsilon
    np.fill_diagonal(adj, True)
    return EdgeSet(adj)


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row softmax restricted to ``mask``; zero outside. Every row needs a True entry."""
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / colsum(e.T)[:, None]


def attention_weights(x_t, f: EdgeTransformParams, edges: EdgeSet, gamma1: float) -> np.ndarray:
    x_t = as_matrix(x_t, "x_t")
    if x_t.shape[0] != edges.n:
        raise ValueError(f"{x_t.shape[0]} nodes but edge set over {edges.n}")
    return masked_softmax(gamma1 * cosine_matrix(f.apply(x_t)), edges.adjacency)


def propagate_step(x_t, weights) -> np.ndarray:
    return matmul(weights, x_t)


def fixed_hop_weights(dist) -> np.ndarray:
    """Row-normalised inverse hop distances with unit self-weight."""
    d = as_matrix(dist, "dist")
    n = d.shape[0]
    if d.shape != (n, n):
        raise ValueError(f"distance matrix must be square, got {d.shape}")
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] <= 0):
        raise ValueError("off-diagonal hop distances must be positive")
    raw = np.ones((n, n))
    raw[off] = 1.0 / d[off]
    return raw / colsum(raw.T)[:, None]


def propagate(x0, f: EdgeTransformParams, cfg: PropagationConfig, dist=None) -> np.ndarray:
    """Run ``cfg.steps`` propagation steps in the configured mode."""
    cfg.validate()
    x = as_matrix(x0, "x0")
    if cfg.mode == "none" or cfg.steps == 0:
        if cfg.mode == "fixed_hop" and dist is None:
            raise ValueError("fixed_hop propagation needs a hop-distance matrix")
        return x.copy()
    if cfg.mode == "fixed_hop":
        if dist is None:
            raise ValueError("fixed_hop propagation needs a hop-distance matrix")
        a = fixed_hop_weights(dist)
        for _ in range(cfg.steps):
            x = propagate_step(x, a)
        return x
    edges = build_edges(x, f, cfg.epsilon)
    for _ in range(cfg.steps):
        x = propagate_step(x, attention_weights(x, f, edges, cfg.gamma1))
    return x
