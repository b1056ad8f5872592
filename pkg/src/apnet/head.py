"""Additive-attention similarity between class features and image features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import SeededRng, as_matrix, matmul, sigmoid, softmax_t


@dataclass
class HeadParams:
    W1: np.ndarray  # (hidden, feat_dim)
    W2: np.ndarray  # (hidden, image_dim)
    b1: np.ndarray  # (hidden,)
    w: np.ndarray  # (hidden,)
    b: np.ndarray  # shape (1,), kept as an array so it updates in place

    @classmethod
    def init(cls, feat_dim: int, image_dim: int, hidden_dim: int, rng: SeededRng) -> "HeadParams":
        b1_, b2_ = 1.0 / np.sqrt(feat_dim), 1.0 / np.sqrt(image_dim)
        return cls(
            W1=rng.uniform(-b1_, b1_, (hidden_dim, feat_dim)),
            W2=rng.uniform(-b2_, b2_, (hidden_dim, image_dim)),
            b1=np.zeros(hidden_dim),
            w=np.zeros(hidden_dim),
            b=np.zeros(1),
        )


@dataclass
class HeadConfig:
    gamma2: float = 30.0
    hidden_dim: int = 1024

    def validate(self) -> None:
        if self.gamma2 <= 0:
            raise ValueError("gamma2 must be positive")


def score(attr, image, p: HeadParams) -> float:
    attr = np.asarray(attr, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if attr.shape != (p.W1.shape[1],) or image.shape != (p.W2.shape[1],):
        raise ValueError(
            f"expected attr dim {p.W1.shape[1]} and image dim {p.W2.shape[1]},"
            f" got {attr.shape} and {image.shape}"
        )
    return float(score_matrix(attr[None, :], image[None, :], p)[0, 0])


def hidden_activations(attrs: np.ndarray, images: np.ndarray, p: HeadParams) -> np.ndarray:
    """Sigmoid hidden layer for every (image, class) pair: shape (q, n, hidden)."""
    if attrs.shape[1] != p.W1.shape[1]:
        raise ValueError(f"attr dim {attrs.shape[1]} != W1 input dim {p.W1.shape[1]}")
    if images.shape[1] != p.W2.shape[1]:
        raise ValueError(f"image dim {images.shape[1]} != W2 input dim {p.W2.shape[1]}")
    pa = matmul(attrs, p.W1.T)
    pb = matmul(images, p.W2.T)
    return sigmoid(pb[:, None, :] + pa[None, :, :] + p.b1)


def score_matrix(attrs, images, p: HeadParams) -> np.ndarray:
    """Scores ``h(attr_c, image_q)`` as a (q, n) matrix."""
    g = hidden_activations(np.asarray(attrs, float), np.asarray(images, float), p)
    q, n, hid = g.shape
    return matmul(g.reshape(q * n, hid), p.w[:, None]).reshape(q, n) + p.b[0]


def predict_proba(attrs, image, p: HeadParams, cfg: HeadConfig) -> np.ndarray:
    attrs = as_matrix(attrs, "attrs")
    if attrs.shape[0] == 0:
        raise ValueError("empty candidate set")
    s = score_matrix(attrs, np.asarray(image, float)[None, :], p)[0]
    return softmax_t(s, cfg.gamma2)


def predict(attrs, image, p: HeadParams, cfg: HeadConfig) -> int:
    # np.argmax returns the first maximum, i.e. the lowest index on ties
    return int(np.argmax(predict_proba(attrs, image, p, cfg)))


def predict_batch(attrs, images, p: HeadParams, chunk: int = 256) -> np.ndarray:
    """Arg-max class index for each image row, chunked to bound memory."""
    attrs = as_matrix(attrs, "attrs")
    images = as_matrix(images, "images")
    if attrs.shape[0] == 0:
        raise ValueError("empty candidate set")
    out = np.empty(images.shape[0], dtype=np.int64)
    for lo in range(0, images.shape[0], chunk):
        out[lo : lo + chunk] = np.argmax(score_matrix(attrs, images[lo : lo + chunk], p), axis=1)
    return out
