"""Frame-visibility masks, the mask-token substitution and anticipation inputs.

A mask is an int8 vector of length T with 1 for visible frames and 0 for frames
whose features are replaced by the learnable mask token.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import Tensor, add, mul

MASK_TYPES = ("none", "ant", "random", "boundary", "rel")

# observation ratios used for training-time anticipative masks
TRAIN_ALPHAS = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)


@dataclass(frozen=True)
class RandomMaskSpec:
    clip_size: int = 10
    n_masked: int = 25

    def __post_init__(self):
        if self.clip_size < 1 or self.n_masked < 0:
            raise ValueError(f"invalid random mask spec {self}")


@dataclass(frozen=True)
class AnticipationSpec:
    alpha: float
    beta: float
    r: float = 4.0
    use_gt_length: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0 - self.alpha + 1e-12:
            raise ValueError("beta must lie in [0, 1 - alpha]")
        if self.r <= 0:
            raise ValueError("r must be positive")


def n_observed(T: int, alpha: float) -> int:
    # ceil with a small guard so that e.g. 0.3 * 10 is 3, not 4
    return int(math.ceil(alpha * T - 1e-9))


def n_anticipated(T: int, beta: float) -> int:
    return int(math.ceil(beta * T - 1e-9))


def rectified_horizon(n_obs: int, r: float) -> int:
    """Prediction length derived only from the observed frame count."""
    return max(1, int(math.ceil(r * n_obs - 1e-9)))


def mask_none(T: int) -> np.ndarray:
    return np.ones(T, dtype=np.int8)


def mask_anticipative(T: int, n_obs: int) -> np.ndarray:
    if not 0 <= n_obs <= T:
        raise ValueError(f"n_obs={n_obs} outside [0, {T}]")
    m = np.zeros(T, dtype=np.int8)
    m[:n_obs] = 1
    return m


def mask_random(T: int, spec: RandomMaskSpec, rng: np.random.Generator | None = None, clips=None) -> np.ndarray:
    """Hide ``spec.n_masked`` distinct clips of ``spec.clip_size`` frames.

    ``clips`` (0-based clip indices) fixes the draw; otherwise clips are drawn
    without replacement from ``rng``. The last clip may be shorter.
    """
    n_clips = math.ceil(T / spec.clip_size)
    if clips is None:
        if spec.n_masked > n_clips:
            raise ValueError(f"cannot mask {spec.n_masked} of {n_clips} clips")
        clips = rng.choice(n_clips, size=spec.n_masked, replace=False)
    m = np.ones(T, dtype=np.int8)
    for c in clips:
        if not 0 <= c < n_clips:
            raise ValueError(f"clip index {c} outside [0, {n_clips})")
        m[c * spec.clip_size: (c + 1) * spec.clip_size] = 0
    return m


def mask_relation(labels: np.ndarray, rng: np.random.Generator, spec: RandomMaskSpec | None = None,
                  chosen: int | None = None) -> np.ndarray:
    """Hide every frame of one action class present in the video.

    Videos with a single class fall back to a random clip mask, since hiding
    that class would hide the whole video.
    """
    labels = np.asarray(labels)
    present = np.unique(labels)
    if chosen is None:
        if len(present) < 2:
            spec = spec or RandomMaskSpec()
            n = min(spec.n_masked, math.ceil(len(labels) / spec.clip_size))
            return mask_random(len(labels), RandomMaskSpec(spec.clip_size, n), rng)
        chosen = int(rng.choice(present))
    return (labels != chosen).astype(np.int8)


def mask_boundary(soft_boundary: np.ndarray) -> np.ndarray:
    return (np.asarray(soft_boundary) < 0.5).astype(np.int8)


@dataclass
class MaskContext:
    """Everything a training-mask draw may need for one video."""

    T: int
    labels: np.ndarray
    soft_boundary: np.ndarray
    random_spec: RandomMaskSpec = field(default_factory=RandomMaskSpec)
    alphas: tuple = TRAIN_ALPHAS
    mask_types: tuple = MASK_TYPES


def choose_training_mask(rng: np.random.Generator, ctx: MaskContext) -> tuple[str, np.ndarray]:
    """Uniformly pick one of the enabled mask types and build it."""
    kind = ctx.mask_types[int(rng.integers(len(ctx.mask_types)))]
    if kind == "none":
        return kind, mask_none(ctx.T)
    if kind == "ant":
        alpha = ctx.alphas[int(rng.integers(len(ctx.alphas)))]
        return kind, mask_anticipative(ctx.T, n_observed(ctx.T, alpha))
    if kind == "random":
        spec = ctx.random_spec
        n = min(spec.n_masked, math.ceil(ctx.T / spec.clip_size))
        return kind, mask_random(ctx.T, RandomMaskSpec(spec.clip_size, n), rng)
    if kind == "rel":
        return kind, mask_relation(ctx.labels, rng, ctx.random_spec)
    if kind == "boundary":
        return kind, mask_boundary(ctx.soft_boundary)
    raise ValueError(f"unknown mask type {kind!r}")


def apply_mask(features, mask: np.ndarray, token) -> Tensor:
    """Replace hidden rows of ``features`` (T, C) by the token (C,)."""
    features = features if isinstance(features, Tensor) else Tensor(np.asarray(features))
    token = token if isinstance(token, Tensor) else Tensor(np.asarray(token))
    T, C = features.shape
    mask = np.asarray(mask)
    if mask.shape != (T,) or token.shape != (C,):
        raise ValueError(f"shape mismatch: features {features.shape}, mask {mask.shape}, token {token.shape}")
    m = mask.astype(features.dtype)[:, None]
    return add(mul(features, m), mul(token, 1.0 - m))


def build_anticipation_input(features_obs: np.ndarray, n_future: int, token: np.ndarray):
    """Observed rows followed by ``n_future`` mask-token rows, with its mask."""
    features_obs = np.asarray(features_obs)
    if features_obs.ndim != 2 or features_obs.shape[0] == 0:
        raise ValueError("need a non-empty (N_O, C) observation")
    if n_future < 1:
        raise ValueError("n_future must be >= 1")
    n_obs, C = features_obs.shape
    token = np.asarray(token, dtype=features_obs.dtype)
    full = np.concatenate([features_obs, np.broadcast_to(token, (n_future, C))], axis=0)
    return full, mask_anticipative(n_obs + n_future, n_obs)
