"""Training configuration and named hyperparameter profiles."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..losses import LossWeights
from ..masking import MASK_TYPES, TRAIN_ALPHAS, RandomMaskSpec
from ..model import ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 4
    lr: float = 2e-3
    weight_decay: float = 0.0
    seed: int = 0
    S: int = 100
    inference_steps: int = 10
    # linear betas rescaled by 1000 / S so that alpha_bar(S) is ~5e-5 at S=100
    beta_start: float = 1e-3
    beta_end: float = 0.2
    weights: LossWeights = field(default_factory=LossWeights)
    alphas: tuple = TRAIN_ALPHAS
    random_mask: RandomMaskSpec = field(default_factory=lambda: RandomMaskSpec(clip_size=10, n_masked=10))
    mask_types: tuple = MASK_TYPES
    # how long a training video is kept under an anticipative mask:
    # "full" keeps all T frames, "gt" keeps N_O + ceil(beta T) with beta drawn
    # from ant_betas, "rectified" keeps N_O + ceil(ant_r N_O); always capped at T
    ant_horizon: str = "gt"
    ant_betas: tuple = (0.1, 0.2, 0.3, 0.5)
    ant_r: float = 4.0
    boundary_sigma: float = 1.0
    smooth_tau: float = 4.0
    use_enc_loss: bool = True
    dec_loss_observed: bool = True
    precision: str = "f32"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.S < 1 or self.inference_steps < 2:
            raise ValueError("epochs, batch_size, S and inference_steps must be positive (steps >= 2)")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be 'f32' or 'f64'")
        if self.ant_horizon not in ("full", "gt", "rectified"):
            raise ValueError("ant_horizon must be 'full', 'gt' or 'rectified'")
        unknown = set(self.mask_types) - set(MASK_TYPES)
        if unknown or not self.mask_types:
            raise ValueError(f"invalid mask types {self.mask_types}")

    @property
    def dtype(self):
        import numpy as np

        return np.float32 if self.precision == "f32" else np.float64

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        d["ant_betas"] = list(self.ant_betas)
        d["mask_types"] = list(self.mask_types)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "random_mask" in d:
            d["random_mask"] = RandomMaskSpec(**d["random_mask"])
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        for key in ("alphas", "ant_betas", "mask_types"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def with_updates(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def desk_profile(**kw) -> TrainConfig:
    """Minutes-scale CPU profile for the synthetic grammar benchmark."""
    return TrainConfig(**kw)


def salads50_profile(feature_dim: int = 2048, num_classes: int = 19) -> TrainConfig:
    """Full-scale hyperparameters for the 50 Salads setting."""
    return TrainConfig(
        epochs=5000,
        batch_size=4,
        lr=0.0005,
        weight_decay=0.0,
        S=1000,
        inference_steps=25,
        beta_start=1e-4,
        beta_end=0.02,
        weights=LossWeights(ce_enc=0.5, smo_enc=0.1, bd_enc=0.0, ce_dec=0.5, smo_dec=0.1, bd_dec=0.1),
        random_mask=RandomMaskSpec(clip_size=10, n_masked=25),
        model=ModelConfig(
            feature_dim=feature_dim, num_classes=num_classes, enc_layers=10, dec_layers=8,
            enc_dim=64, dec_dim=24, w_max=100, cond_layer_ids=(5, 7, 9),
        ),
    )


PROFILES = {"desk": desk_profile, "50salads": salads50_profile}


def load_config(path) -> TrainConfig:
    """Read a JSON config; a ``"profile"`` key selects the base profile."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    base = PROFILES[raw.pop("profile", "desk")]().to_dict()
    for key, value in raw.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    return TrainConfig.from_dict(base)
