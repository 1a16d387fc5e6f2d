"""End-to-end finite-difference check of encoder + decoder + losses on a micro model."""
from __future__ import annotations

import numpy as np

from .. import numerics as nx
from ..losses import LossWeights, soft_boundary, total_loss
from ..masking import apply_mask
from ..model import ModelConfig, condition_select, decoder_forward, encoder_forward, init_params

MICRO = ModelConfig(feature_dim=4, num_classes=3, enc_layers=2, dec_layers=2, enc_dim=6, dec_dim=4,
                    w_max=3, cond_layer_ids=(1, 2))
# every loss term switched on, including the encoder boundary term
ALL_TERMS = LossWeights(ce_enc=0.5, smo_enc=0.1, bd_enc=0.1, ce_dec=0.5, smo_dec=0.1, bd_dec=0.1)


def model_gradcheck(seed: int, cfg: ModelConfig = MICRO, T: int = 8, n_samples: int | None = None,
                    h: float = 1e-6) -> float:
    """Max relative error for one random problem (float64 throughout)."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng, np.float64)
    # perturb the zero-initialized biases and bias tables so their gradients are generic
    arrays = {
        k: v.data + (rng.normal(0, 0.1, v.shape) if k.endswith((".b", ".relbias")) else 0.0)
        for k, v in params.items()
    }
    feats = rng.normal(size=(T, cfg.feature_dim))
    labels = rng.integers(0, cfg.num_classes, T)
    onehot = np.eye(cfg.num_classes)[labels]
    mask = (rng.random(T) > 0.3).astype(np.int8)
    a_s = rng.normal(size=(T, cfg.num_classes)) * 0.5
    bd = soft_boundary(labels)
    s = int(rng.integers(1, 100))

    def fn(P):
        enc = encoder_forward(apply_mask(feats, mask, P["mask_token"]), P, cfg)
        dec = decoder_forward(a_s, s, condition_select(enc, P, cfg), P, cfg)
        return total_loss(onehot, enc.probs, dec.probs, bd, ALL_TERMS)[0]

    return nx.finite_diff_check(fn, arrays, h=h, n_samples=n_samples, rng=rng)


def run_gradcheck(seeds=range(20), n_samples: int | None = 2, **kw) -> float:
    """Worst error over ``seeds``."""
    return max(model_gradcheck(s, n_samples=n_samples, **kw) for s in seeds)
