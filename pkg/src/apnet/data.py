"""Dataset container, the on-disk directory format, and synthetic ZSL data.

Directory layout::

    meta.json       {m, c, image_dim, attr_dim, seen, unseen,
                     train_seen, test_seen, test_unseen}
    features.bin    m x image_dim float32, little-endian, row-major
    labels.bin      m uint32, little-endian
    attributes.bin  c x attr_dim float32, little-endian, row-major
    distances.bin   optional, c x c float32 hop distances
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import minimum_spanning_tree, shortest_path

from .numerics import SeededRng, matmul

F32 = np.dtype("<f4")
U32 = np.dtype("<u4")


class DatasetError(ValueError):
    """Raised when a dataset directory or value violates the format contract."""


@dataclass
class Dataset:
    image_features: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    seen: list[int]
    unseen: list[int]
    train_seen: list[int]
    test_seen: list[int]
    test_unseen: list[int]
    distances: np.ndarray | None = None

    def __post_init__(self):
        self.image_features = np.ascontiguousarray(self.image_features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        self.attributes = np.ascontiguousarray(self.attributes, dtype=np.float64)
        if self.distances is not None:
            self.distances = np.ascontiguousarray(self.distances, dtype=np.float64)
        for name in ("seen", "unseen", "train_seen", "test_seen", "test_unseen"):
            setattr(self, name, [int(i) for i in getattr(self, name)])
        self.validate()

    @property
    def m(self) -> int:
        return self.image_features.shape[0]

    @property
    def c(self) -> int:
        return self.attributes.shape[0]

    @property
    def image_dim(self) -> int:
        return self.image_features.shape[1]

    @property
    def attr_dim(self) -> int:
        return self.attributes.shape[1]

    def validate(self) -> None:
        if self.image_features.ndim != 2 or self.attributes.ndim != 2:
            raise DatasetError("features and attributes must be 2-D")
        if self.labels.shape != (self.m,):
            raise DatasetError(f"{self.labels.shape[0]} labels for {self.m} feature rows")
        for name, arr in (("features", self.image_features), ("attributes", self.attributes)):
            if not np.all(np.isfinite(arr)):
                raise DatasetError(f"{name} contain non-finite values")
        if self.m and (self.labels.min() < 0 or self.labels.max() >= self.c):
            raise DatasetError(f"labels must lie in [0, {self.c})")
        seen, unseen = set(self.seen), set(self.unseen)
        if len(seen) != len(self.seen) or len(unseen) != len(self.unseen):
            raise DatasetError("duplicate class ids in split definition")
        if seen & unseen:
            raise DatasetError(f"seen and unseen classes overlap: {sorted(seen & unseen)}")
        if any(not 0 <= y < self.c for y in seen | unseen):
            raise DatasetError(f"split class ids must lie in [0, {self.c})")
        for name, allowed in (
            ("train_seen", seen),
            ("test_seen", seen),
            ("test_unseen", unseen),
        ):
            idx = getattr(self, name)
            if any(not 0 <= i < self.m for i in idx):
                raise DatasetError(f"{name} holds a row index outside [0, {self.m})")
            bad = {int(self.labels[i]) for i in idx} - allowed
            if bad:
                raise DatasetError(f"{name} contains labels outside its class set: {sorted(bad)}")
        if self.distances is not None:
            if self.distances.shape != (self.c, self.c):
                raise DatasetError(f"distances must be {self.c}x{self.c}")
            if not np.all(np.isfinite(self.distances)):
                raise DatasetError("distances contain non-finite values")

    def class_attributes(self, class_ids) -> np.ndarray:
        return self.attributes[np.asarray(class_ids, dtype=np.int64)]

    def class_distances(self, class_ids) -> np.ndarray | None:
        if self.distances is None:
            return None
        ids = np.asarray(class_ids, dtype=np.int64)
        return self.distances[np.ix_(ids, ids)]

    def with_float32_storage(self) -> "Dataset":
        """Copy whose values went through the 32-bit on-disk representation."""
        return Dataset(
            self.image_features.astype(F32),
            self.labels,
            self.attributes.astype(F32),
            self.seen,
            self.unseen,
            self.train_seen,
            self.test_seen,
            self.test_unseen,
            None if self.distances is None else self.distances.astype(F32),
        )


def _read_bin(path: Path, dtype: np.dtype, count: int) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing dataset file: {path}")
    raw = path.read_bytes()
    if len(raw) != count * dtype.itemsize:
        raise DatasetError(
            f"{path.name}: expected {count} values ({count * dtype.itemsize} bytes),"
            f" found {len(raw)} bytes"
        )
    return np.frombuffer(raw, dtype=dtype)


def load_dataset(dir_path) -> Dataset:
    root = Path(dir_path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"missing dataset file: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    try:
        m, c = int(meta["m"]), int(meta["c"])
        image_dim, attr_dim = int(meta["image_dim"]), int(meta["attr_dim"])
        splits = {k: meta[k] for k in ("seen", "unseen", "train_seen", "test_seen", "test_unseen")}
    except KeyError as exc:
        raise DatasetError(f"meta.json lacks field {exc}") from None

    feats = _read_bin(root / "features.bin", F32, m * image_dim).reshape(m, image_dim)
    labels = _read_bin(root / "labels.bin", U32, m)
    attrs = _read_bin(root / "attributes.bin", F32, c * attr_dim).reshape(c, attr_dim)
    dist = None
    if (root / "distances.bin").is_file():
        dist = _read_bin(root / "distances.bin", F32, c * c).reshape(c, c)
    return Dataset(feats, labels, attrs, distances=dist, **splits)


def save_dataset(dataset: Dataset, dir_path) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "m": dataset.m,
        "c": dataset.c,
        "image_dim": dataset.image_dim,
        "attr_dim": dataset.attr_dim,
        "seen": dataset.seen,
        "unseen": dataset.unseen,
        "train_seen": dataset.train_seen,
        "test_seen": dataset.test_seen,
        "test_unseen": dataset.test_unseen,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    (root / "features.bin").write_bytes(dataset.image_features.astype(F32).tobytes())
    (root / "labels.bin").write_bytes(dataset.labels.astype(U32).tobytes())
    (root / "attributes.bin").write_bytes(dataset.attributes.astype(F32).tobytes())
    dist_path = root / "distances.bin"
    if dataset.distances is not None:
        dist_path.write_bytes(dataset.distances.astype(F32).tobytes())
    elif dist_path.exists():
        dist_path.unlink()


@dataclass
class SyntheticConfig:
    n_seen: int = 20
    n_unseen: int = 5
    attr_dim: int = 16
    image_dim: int = 32
    images_per_class: int = 50
    noise_std: float = 0.1
    seed: int = 0
    test_fraction: float = 0.2
    with_distances: bool = True

    def validate(self) -> None:
        for name in ("n_seen", "n_unseen", "attr_dim", "image_dim", "images_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")


def tree_hop_distances(points: np.ndarray) -> np.ndarray:
    """Hop counts on the Euclidean minimum spanning tree of ``points``.

    Stands in for a taxonomy such as WordNet when none is available.
    """
    diff = points[:, None, :] - points[None, :, :]
    w = np.sqrt(np.sum(diff * diff, axis=2))
    tree = minimum_spanning_tree(w).toarray() > 0
    hops = shortest_path(tree | tree.T, unweighted=True, directed=False)
    return hops


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Linear attribute-to-image data with Gaussian noise.

    One random map ``M`` is shared by all classes, so what is learnt on seen
    classes carries over to unseen ones.  Class ids ``0..n_seen-1`` are seen.
    """
    cfg.validate()
    rng = SeededRng(cfg.seed)
    c = cfg.n_seen + cfg.n_unseen
    attrs = rng.uniform(0.0, 1.0, (c, cfg.attr_dim))
    M = rng.normal(0.0, 1.0 / np.sqrt(cfg.attr_dim), (cfg.image_dim, cfg.attr_dim))
    protos = matmul(attrs, M.T)

    per = cfg.images_per_class
    labels = np.repeat(np.arange(c), per)
    noise = rng.normal(0.0, 1.0, (c * per, cfg.image_dim)) * cfg.noise_std
    feats = protos[labels] + noise

    n_test = int(round(per * cfg.test_fraction))
    train_seen, test_seen = [], []
    for y in range(cfg.n_seen):
        rows = [y * per + int(i) for i in rng.permutation(per)]
        test_seen += sorted(rows[:n_test])
        train_seen += sorted(rows[n_test:])
    test_unseen = list(range(cfg.n_seen * per, c * per))

    return Dataset(
        feats,
        labels,
        attrs,
        seen=list(range(cfg.n_seen)),
        unseen=list(range(cfg.n_seen, c)),
        train_seen=train_seen,
        test_seen=test_seen,
        test_unseen=test_unseen,
        distances=tree_hop_distances(attrs) if cfg.with_distances else None,
    )
