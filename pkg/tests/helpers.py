from apnet.data import SyntheticConfig, generate_synthetic
from apnet.graph import PropagationConfig
from apnet.head import HeadConfig
from apnet.model import EncoderConfig, init_params
from apnet.numerics import SeededRng
from apnet.trainer import TrainConfig, sample_episode


def tiny_setup(seed, n_classes=5, k_shot=2, scale=0.5, prop=None):
    """5 classes, attr_dim=6, feat_dim=8, edge_dim=8, hidden_dim=8, params jittered off init.

    The jitter matters: at init ``w`` is zero, which zeroes every upstream gradient.
    """
    ds = generate_synthetic(
        SyntheticConfig(n_seen=n_classes, n_unseen=1, attr_dim=6, image_dim=7, images_per_class=4, seed=seed)
    )
    enc = EncoderConfig(k=3, feat_dim=8)
    prop = prop or PropagationConfig(edge_dim=8, steps=2)
    head = HeadConfig(hidden_dim=8)
    init_rng, jitter_rng = SeededRng(seed).spawn(2)
    params = init_params(ds.class_attributes(ds.seen), ds.image_dim, enc, prop, head, init_rng)
    for t in params.tensors().values():
        t += jitter_rng.normal(0.0, scale, t.shape)
    ep = sample_episode(ds, TrainConfig(n_way=n_classes, k_shot=k_shot), SeededRng(seed + 100))
    return ds, params, ep, prop, head

