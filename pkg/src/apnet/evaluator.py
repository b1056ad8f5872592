"""Per-class accuracy, harmonic mean, and the ZSL / GZSL evaluation protocols."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .graph import PropagationConfig
from .head import predict_batch
from .model import ModelParams, class_features


class EvaluationError(ValueError):
    pass


def per_class_accuracy(predictions, truths, class_set) -> float:
    """Mean over ``class_set`` of the within-class hit rate."""
    return float(np.mean(list(per_class_hits(predictions, truths, class_set).values())))


def per_class_hits(predictions, truths, class_set) -> dict[int, float]:
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape:
        raise EvaluationError("predictions and truths differ in length")
    classes = [int(c) for c in class_set]
    if not classes:
        raise EvaluationError("empty class set")
    members = set(classes)
    stray = {int(t) for t in truths} - members
    if stray:
        raise EvaluationError(f"truth labels outside the class set: {sorted(stray)}")
    correct, total = defaultdict(int), defaultdict(int)
    for p, t in zip(predictions.tolist(), truths.tolist()):
        total[t] += 1
        correct[t] += p == t
    empty = [c for c in classes if total[c] == 0]
    if empty:
        raise EvaluationError(f"classes without test samples: {empty}")
    return {c: correct[c] / total[c] for c in classes}


def harmonic_mean(s: float, u: float) -> float:
    if s < 0 or u < 0:
        raise ValueError("accuracies must be non-negative")
    if s + u == 0:
        return 0.0
    return 2.0 * s * u / (s + u)


@dataclass
class EvalReport:
    setting: str
    graph_scope: str
    per_class_acc: dict[int, float] = field(default_factory=dict)
    acc_seen: float | None = None
    acc_unseen: float | None = None
    harmonic: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_acc"] = {str(k): v for k, v in sorted(self.per_class_acc.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["per_class_acc"] = {int(k): v for k, v in d.get("per_class_acc", {}).items()}
        return cls(**d)

    def summary(self) -> str:
        fmt = lambda v: "-" if v is None else f"{v:.1f}"
        if self.setting == "zsl":
            return f"ZSL ({self.graph_scope} graph) ACC={fmt(self.acc_unseen)}"
        return f"GZSL S={fmt(self.acc_seen)} U={fmt(self.acc_unseen)} H={fmt(self.harmonic)}"


def _rows(dataset: Dataset, name: str) -> np.ndarray:
    idx = getattr(dataset, name)
    if not idx:
        raise EvaluationError(f"split {name} is empty")
    return np.asarray(idx, dtype=np.int64)


def _predict_classes(params, dataset, prop, graph_ids, candidate_ids, rows) -> np.ndarray:
    """Global class id predicted for each row; propagation runs over ``graph_ids``."""
    dist = dataset.class_distances(graph_ids) if prop.mode == "fixed_hop" else None
    x = class_features(params, dataset.class_attributes(graph_ids), prop, dist)
    pos = {y: i for i, y in enumerate(graph_ids)}
    cand = np.asarray(candidate_ids)
    local = predict_batch(x[[pos[y] for y in candidate_ids]], dataset.image_features[rows], params.head)
    return cand[local]


def _check_dims(params: ModelParams, dataset: Dataset) -> None:
    if params.attr_dim != dataset.attr_dim or params.image_dim != dataset.image_dim:
        raise EvaluationError(
            f"checkpoint expects attr_dim={params.attr_dim}, image_dim={params.image_dim};"
            f" dataset has {dataset.attr_dim}, {dataset.image_dim}"
        )


def evaluate_zsl(params: ModelParams, dataset: Dataset, prop: PropagationConfig, graph_scope: str = "unseen") -> EvalReport:
    """Unseen test images against unseen candidates only.

    ``graph_scope`` picks the propagation node set: the unseen classes, or all
    classes (candidates are unseen either way).
    """
    _check_dims(params, dataset)
    if graph_scope not in ("unseen", "all"):
        raise ValueError("graph_scope must be 'unseen' or 'all'")
    rows = _rows(dataset, "test_unseen")
    graph_ids = dataset.unseen if graph_scope == "unseen" else dataset.seen + dataset.unseen
    pred = _predict_classes(params, dataset, prop, graph_ids, dataset.unseen, rows)
    hits = per_class_hits(pred, dataset.labels[rows], dataset.unseen)
    acc = 100.0 * float(np.mean(list(hits.values())))
    return EvalReport("zsl", graph_scope, hits, acc_unseen=acc)


def evaluate_gzsl(params: ModelParams, dataset: Dataset, prop: PropagationConfig) -> EvalReport:
    """Seen and unseen test images against all classes on one shared graph."""
    _check_dims(params, dataset)
    seen_rows = _rows(dataset, "test_seen")
    unseen_rows = _rows(dataset, "test_unseen")
    all_ids = dataset.seen + dataset.unseen
    pred_s = _predict_classes(params, dataset, prop, all_ids, all_ids, seen_rows)
    pred_u = _predict_classes(params, dataset, prop, all_ids, all_ids, unseen_rows)
    hits_s = per_class_hits(pred_s, dataset.labels[seen_rows], dataset.seen)
    hits_u = per_class_hits(pred_u, dataset.labels[unseen_rows], dataset.unseen)
    s = 100.0 * float(np.mean(list(hits_s.values())))
    u = 100.0 * float(np.mean(list(hits_u.values())))
    return EvalReport("gzsl", "all", {**hits_s, **hits_u}, s, u, harmonic_mean(s, u))
