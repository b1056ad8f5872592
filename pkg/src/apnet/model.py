"""Parameter container, end-to-end class-feature pipeline, and checkpoints."""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .encoder import CentroidSet, ExpertParams, encode_batch, fit_centroids, normalize_rows
from .graph import EdgeTransformParams, PropagationConfig, build_edges, propagate
from .head import HeadConfig, HeadParams
from .numerics import SeededRng

# Tensors that receive weight decay; biases are exempt.
DECAYED = frozenset({"expert_weight", "edge_weight", "W1", "W2", "w"})


@dataclass
class EncoderConfig:
    k: int = 3
    feat_dim: int = 2048
    normalize_attributes: bool = False
    kmeans_iters: int = 100


@dataclass
class ModelParams:
    experts: ExpertParams
    edge_f: EdgeTransformParams
    head: HeadParams
    centroids: CentroidSet
    normalize_attributes: bool = False

    def tensors(self) -> dict[str, np.ndarray]:
        """Learnable tensors in a stable order; the arrays are live views."""
        return {
            "expert_weight": self.experts.weight,
            "expert_bias": self.experts.bias,
            "edge_weight": self.edge_f.weight,
            "edge_bias": self.edge_f.bias,
            "W1": self.head.W1,
            "W2": self.head.W2,
            "b1": self.head.b1,
            "w": self.head.w,
            "b": self.head.b,
        }

    def copy(self) -> "ModelParams":
        t = {k: v.copy() for k, v in self.tensors().items()}
        return ModelParams(
            ExpertParams(t["expert_weight"], t["expert_bias"]),
            EdgeTransformParams(t["edge_weight"], t["edge_bias"]),
            HeadParams(t["W1"], t["W2"], t["b1"], t["w"], t["b"]),
            self.centroids,
            self.normalize_attributes,
        )

    @property
    def attr_dim(self) -> int:
        return self.experts.weight.shape[2]

    @property
    def image_dim(self) -> int:
        return self.head.W2.shape[1]

    def prepare_attributes(self, S: np.ndarray) -> np.ndarray:
        return normalize_rows(S) if self.normalize_attributes else S


def init_params(
    seen_attributes: np.ndarray,
    image_dim: int,
    enc: EncoderConfig,
    prop: PropagationConfig,
    head: HeadConfig,
    rng: SeededRng,
) -> ModelParams:
    """Fit centroids on the seen-class attributes and draw initial weights."""
    km_rng, exp_rng, edge_rng, head_rng = rng.spawn(4)
    S = normalize_rows(seen_attributes) if enc.normalize_attributes else seen_attributes
    centroids = fit_centroids(S, enc.k, km_rng, enc.kmeans_iters)
    attr_dim = S.shape[1]
    edge_dim = prop.edge_dim or enc.feat_dim
    return ModelParams(
        experts=ExpertParams.init(enc.k, attr_dim, enc.feat_dim, exp_rng),
        edge_f=EdgeTransformParams.init(enc.feat_dim, edge_dim, edge_rng),
        head=HeadParams.init(enc.feat_dim, image_dim, head.hidden_dim, head_rng),
        centroids=centroids,
        normalize_attributes=enc.normalize_attributes,
    )


def class_features(params: ModelParams, S, prop: PropagationConfig, dist=None) -> np.ndarray:
    """Encode and propagate the attribute rows ``S`` of one candidate class set."""
    x0 = encode_batch(params.prepare_attributes(np.asarray(S, float)), params.centroids, params.experts)
    return propagate(x0, params.edge_f, prop, dist)


def class_graph(params: ModelParams, S, prop: PropagationConfig):
    """Edge set the learned mode would use for ``S``."""
    x0 = encode_batch(params.prepare_attributes(np.asarray(S, float)), params.centroids, params.experts)
    return build_edges(x0, params.edge_f, prop.epsilon)


# -- checkpoints -----------------------------------------------------------

_FIXED_TIME = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path, params: ModelParams, config: dict | None = None) -> None:
    """Write a zip of ``.npy`` tensors plus ``config.json``.

    Entry timestamps are pinned, so identical parameters give identical bytes.
    """
    entries = {f"{k}.npy": _npy_bytes(v) for k, v in params.tensors().items()}
    entries["centroids.npy"] = _npy_bytes(params.centroids.C)
    meta = {"normalize_attributes": params.normalize_attributes, "config": config or {}}
    entries["config.json"] = (json.dumps(meta, indent=1, sort_keys=True) + "\n").encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            zf.writestr(zipfile.ZipInfo(name, date_time=_FIXED_TIME), entries[name])


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        t = {
            n[:-4]: np.load(io.BytesIO(zf.read(n)), allow_pickle=False)
            for n in zf.namelist()
            if n.endswith(".npy")
        }
        meta = json.loads(zf.read("config.json"))
    C = t.pop("centroids")
    C.setflags(write=False)
    params = ModelParams(
        ExpertParams(t["expert_weight"], t["expert_bias"]),
        EdgeTransformParams(t["edge_weight"], t["edge_bias"]),
        HeadParams(t["W1"], t["W2"], t["b1"], t["w"], t["b"]),
        CentroidSet(C),
        bool(meta.get("normalize_attributes", False)),
    )
    return params, meta.get("config", {})


def config_dict(**cfgs) -> dict:
    return {name: asdict(c) for name, c in cfgs.items()}
