"""Episodic training: loss, hand-written backward pass, Adam, and the loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .encoder import expert_preactivations
from .graph import PropagationConfig, build_edges, fixed_hop_weights, masked_softmax
from .head import HeadConfig
from .model import DECAYED, EncoderConfig, ModelParams, init_params
from .numerics import SeededRng, colsum, cosine_matrix, matmul, sample_without_replacement, sigmoid

log = logging.getLogger(__name__)

Gradients = dict  # name -> ndarray, keyed like ModelParams.tensors()


@dataclass
class TrainConfig:
    n_way: int = 30
    k_shot: int = 1
    epochs: int = 360
    lr: float = 2e-5
    lr_decay: float = 0.1
    lr_decay_every: int = 240
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    grad_clip: float | None = None
    episodic: bool = True

    def validate(self) -> None:
        if self.n_way < 1 or self.k_shot < 1:
            raise ValueError("n_way and k_shot must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0 or self.lr_decay <= 0 or self.lr_decay_every <= 0:
            raise ValueError("learning-rate settings must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)


@dataclass
class Episode:
    class_ids: list[int]
    features: np.ndarray  # (N*K, image_dim)
    labels: np.ndarray  # local labels in [0, N)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def iterations_per_epoch(n_train: int, n_way: int, k_shot: int) -> int:
    return n_train // (n_way * k_shot)


def rows_by_class(dataset: Dataset) -> dict[int, np.ndarray]:
    rows = np.asarray(dataset.train_seen, dtype=np.int64)
    labels = dataset.labels[rows]
    return {y: rows[labels == y] for y in dataset.seen}


def sample_episode(dataset: Dataset, cfg: TrainConfig, rng: SeededRng, by_class=None) -> Episode:
    """N classes, then K images per class, each uniformly without replacement."""
    by_class = by_class if by_class is not None else rows_by_class(dataset)
    short = [y for y in dataset.seen if len(by_class[y]) < cfg.k_shot]
    if short:
        raise ValueError(f"classes with fewer than K={cfg.k_shot} training images: {short}")
    if cfg.n_way > len(dataset.seen):
        raise ValueError(f"n_way={cfg.n_way} exceeds {len(dataset.seen)} seen classes")
    picks = sample_without_replacement(len(dataset.seen), cfg.n_way, rng)
    class_ids = [dataset.seen[i] for i in picks]
    rows, labels = [], []
    for local, y in enumerate(class_ids):
        pool = by_class[y]
        for j in sample_without_replacement(len(pool), cfg.k_shot, rng):
            rows.append(pool[j])
            labels.append(local)
    return Episode(class_ids, dataset.image_features[rows], np.asarray(labels, dtype=np.int64))


def sample_minibatch(dataset: Dataset, cfg: TrainConfig, rng: SeededRng) -> Episode:
    """Plain minibatch: N*K training images over the full seen-class set."""
    n = cfg.n_way * cfg.k_shot
    rows = np.asarray(dataset.train_seen, dtype=np.int64)
    if n > len(rows):
        raise ValueError(f"batch of {n} exceeds {len(rows)} training images")
    picked = rows[sample_without_replacement(len(rows), n, rng)]
    local = {y: i for i, y in enumerate(dataset.seen)}
    labels = np.asarray([local[int(y)] for y in dataset.labels[picked]], dtype=np.int64)
    return Episode(list(dataset.seen), dataset.image_features[picked], labels)


# -- forward / backward ----------------------------------------------------


def _forward(params: ModelParams, S, queries, labels, prop: PropagationConfig, head: HeadConfig, dist):
    c = {"S": params.prepare_attributes(np.asarray(S, float))}
    pre = expert_preactivations(c["S"], params.centroids, params.experts)
    x = np.zeros_like(pre[0])
    for p in pre:
        x += np.maximum(p, 0.0)
    c["pre"] = pre
    xs = [x]
    steps = []
    ef = params.edge_f
    if prop.mode == "learned" and prop.steps > 0:
        support = build_edges(x, ef, prop.epsilon).adjacency
        for _ in range(prop.steps):
            F = matmul(x, ef.weight.T) + ef.bias
            norms = np.sqrt(np.sum(F * F, axis=1))
            U = F / np.where(norms > 0, norms, 1.0)[:, None]
            A = masked_softmax(prop.gamma1 * cosine_matrix(F), support)
            x = matmul(A, x)
            steps.append((A, U, norms))
            xs.append(x)
    elif prop.mode == "fixed_hop" and prop.steps > 0:
        if dist is None:
            raise ValueError("fixed_hop propagation needs a hop-distance matrix")
        A = fixed_hop_weights(dist)
        for _ in range(prop.steps):
            x = matmul(A, x)
            steps.append((A, None, None))
            xs.append(x)
    c["xs"], c["steps"] = xs, steps

    hp = params.head
    pa = matmul(x, hp.W1.T)
    pb = matmul(queries, hp.W2.T)
    G = sigmoid(pb[:, None, :] + pa[None, :, :] + hp.b1)
    q, n, hid = G.shape
    H = matmul(G.reshape(q * n, hid), hp.w[:, None]).reshape(q, n) + hp.b[0]
    z = head.gamma2 * H
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    loss = -colsum(logp[np.arange(q), labels][:, None])[0] / q
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite episode loss; check initialisation and learning rate")
    c.update(G=G, P=np.exp(logp), queries=queries, labels=labels)
    return loss, c


def _backward(params: ModelParams, c, prop: PropagationConfig, head: HeadConfig) -> Gradients:
    hp, ef = params.head, params.edge_f
    G, P, labels, queries = c["G"], c["P"], c["labels"], c["queries"]
    q, n, hid = G.shape
    dH = P.copy()
    dH[np.arange(q), labels] -= 1.0
    dH *= head.gamma2 / q

    g = {}
    g["b"] = colsum(dH.reshape(-1, 1))
    g["w"] = matmul(dH.reshape(1, -1), G.reshape(q * n, hid))[0]
    dZ = dH[:, :, None] * hp.w * G * (1.0 - G)
    g["b1"] = colsum(dZ.reshape(q * n, hid))
    dpa = colsum(dZ)  # (n, hid), summed over queries
    dpb = colsum(dZ.transpose(1, 0, 2))  # (q, hid), summed over classes
    xs = c["xs"]
    g["W1"] = matmul(dpa.T, xs[-1])
    g["W2"] = matmul(dpb.T, queries)
    dx = matmul(dpa, hp.W1)

    dWf = np.zeros_like(ef.weight)
    dbf = np.zeros_like(ef.bias)
    for t in range(len(c["steps"]) - 1, -1, -1):
        A, U, norms = c["steps"][t]
        x_t = xs[t]
        dA = matmul(dx, x_t.T)
        dx_prev = matmul(A.T, dx)
        if U is not None:
            # softmax over the fixed support; A is exactly zero off-support
            dlog = A * (dA - np.sum(A * dA, axis=1, keepdims=True))
            dC = prop.gamma1 * dlog
            dU = matmul(dC + dC.T, U)
            radial = np.sum(U * dU, axis=1, keepdims=True)
            inv = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)[:, None]
            dF = (dU - U * radial) * inv
            dWf += matmul(dF.T, x_t)
            dbf += colsum(dF)
            dx_prev += matmul(dF, ef.weight)
        dx = dx_prev
    g["edge_weight"], g["edge_bias"] = dWf, dbf

    D = [c["S"] - params.centroids.C[i] for i in range(params.experts.k)]
    dW = np.zeros_like(params.experts.weight)
    db = np.zeros_like(params.experts.bias)
    for i, p in enumerate(c["pre"]):
        dp = dx * (p > 0)
        dW[i] = matmul(dp.T, D[i])
        db[i] = colsum(dp)
    g["expert_weight"], g["expert_bias"] = dW, db
    return {k: g[k] for k in params.tensors()}


def _episode_inputs(episode: Episode, dataset: Dataset, prop: PropagationConfig):
    S = dataset.class_attributes(episode.class_ids)
    dist = dataset.class_distances(episode.class_ids) if prop.mode == "fixed_hop" else None
    return S, dist


def forward_loss(episode: Episode, params: ModelParams, prop: PropagationConfig, head: HeadConfig, dataset: Dataset) -> float:
    """Mean cross-entropy of the episode queries over the episode's classes."""
    S, dist = _episode_inputs(episode, dataset, prop)
    return _forward(params, S, episode.features, episode.labels, prop, head, dist)[0]


def loss_and_grads(episode, params, prop, head, dataset) -> tuple[float, Gradients]:
    S, dist = _episode_inputs(episode, dataset, prop)
    loss, cache = _forward(params, S, episode.features, episode.labels, prop, head, dist)
    return loss, _backward(params, cache, prop, head)


def backward(episode, params, prop, head, dataset) -> Gradients:
    """Analytic gradients for every learnable tensor (centroids excluded).

    The thresholded edge support is treated as a constant.
    """
    return loss_and_grads(episode, params, prop, head, dataset)[1]


def central_differences(fn, tensors: dict[str, np.ndarray], h: float) -> Gradients:
    """``(fn(x+h) - fn(x-h)) / 2h`` for each scalar entry, perturbing in place."""
    if h <= 0:
        raise ValueError("h must be positive")
    out = {}
    for name, arr in tensors.items():
        grad = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn()
            flat[i] = orig - h
            down = fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out[name] = grad
    return out


def finite_diff_grads(episode, params, prop, head, dataset, h: float = 1e-5) -> Gradients:
    """Central-difference oracle; cost is two forward passes per scalar."""
    work = params.copy()
    return central_differences(
        lambda: forward_loss(episode, work, prop, head, dataset), work.tensors(), h
    )


# -- optimisation ----------------------------------------------------------


def clip_gradients(grads: Gradients, max_norm: float) -> Gradients:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def adam_step(params: ModelParams, grads: Gradients, state: AdamState, cfg: TrainConfig, epoch: int):
    """One Adam update with decoupled weight decay on non-bias tensors."""
    lr = cfg.lr_at(epoch)
    state.step += 1
    bc1 = 1.0 - cfg.beta1**state.step
    bc2 = 1.0 - cfg.beta2**state.step
    for name, theta in params.tensors().items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        if name in DECAYED and cfg.weight_decay:
            theta -= lr * cfg.weight_decay * theta
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
    return params, state


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float
    wall_time: float


def train(
    dataset: Dataset,
    train_cfg: TrainConfig,
    enc_cfg: EncoderConfig,
    prop_cfg: PropagationConfig,
    head_cfg: HeadConfig,
    on_epoch=None,
) -> tuple[ModelParams, list[EpochRecord]]:
    """Train from scratch; identical configs give bitwise-identical parameters."""
    train_cfg.validate()
    prop_cfg.validate()
    head_cfg.validate()
    if not dataset.seen or not dataset.train_seen:
        raise ValueError("dataset has no seen-class training images")
    if prop_cfg.mode == "fixed_hop" and dataset.distances is None:
        raise ValueError("fixed_hop propagation needs dataset distances")

    init_rng, sample_rng = SeededRng(train_cfg.seed).spawn(2)
    params = init_params(
        dataset.class_attributes(dataset.seen), dataset.image_dim, enc_cfg, prop_cfg, head_cfg, init_rng
    )
    state = AdamState()
    by_class = rows_by_class(dataset)
    iters = iterations_per_epoch(len(dataset.train_seen), train_cfg.n_way, train_cfg.k_shot)
    history: list[EpochRecord] = []
    start = time.perf_counter()
    for epoch in range(train_cfg.epochs):
        total = 0.0
        for _ in range(iters):
            if train_cfg.episodic:
                ep = sample_episode(dataset, train_cfg, sample_rng, by_class)
            else:
                ep = sample_minibatch(dataset, train_cfg, sample_rng)
            loss, grads = loss_and_grads(ep, params, prop_cfg, head_cfg, dataset)
            if train_cfg.grad_clip:
                grads = clip_gradients(grads, train_cfg.grad_clip)
            adam_step(params, grads, state, train_cfg, epoch)
            total += loss
        rec = EpochRecord(epoch, total / max(iters, 1), train_cfg.lr_at(epoch), time.perf_counter() - start)
        history.append(rec)
        log.debug("epoch %d loss %.5f lr %.2e", rec.epoch, rec.mean_loss, rec.lr)
        if on_epoch is not None:
            on_epoch(rec)
    return params, history
