"""Frame-wise classification, smoothing and boundary-alignment losses.

All losses take probability tensors (rows on the simplex) and are built from
tape primitives, so they differentiate through :mod:`actdiff.numerics`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor

PROB_FLOOR = 1e-8


@dataclass(frozen=True)
class LossWeights:
    ce_enc: float = 0.5
    smo_enc: float = 0.1
    bd_enc: float = 0.0
    ce_dec: float = 0.5
    smo_dec: float = 0.1
    bd_dec: float = 0.1

    def __post_init__(self):
        if any(v < 0 for v in asdict(self).values()):
            raise ValueError("loss weights must be non-negative")


def soft_boundary(labels: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Gaussian-smoothed action-change indicator, peak-normalized to 1.

    Both frames adjacent to a label change are seeded with 1; the kernel is
    truncated at 3 sigma.
    """
    labels = np.asarray(labels)
    T = len(labels)
    seed = np.zeros(T)
    change = np.nonzero(labels[1:] != labels[:-1])[0]
    seed[change] = 1.0
    seed[change + 1] = 1.0
    if not change.size:
        return seed
    radius = max(1, int(np.ceil(3 * sigma)))
    x = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    smoothed = np.convolve(seed, kernel, mode="same") if T >= len(kernel) else _convolve_short(seed, kernel)
    return np.clip(smoothed / smoothed.max(), 0.0, 1.0)


def _convolve_short(seed, kernel):
    full = np.convolve(seed, kernel, mode="full")
    r = (len(kernel) - 1) // 2
    return full[r: r + len(seed)]


def _as_target(a, like: Tensor) -> np.ndarray:
    return np.asarray(a, dtype=like.dtype)


def ce_loss(onehot, probs: Tensor, frames: np.ndarray | None = None) -> Tensor:
    """Mean over frames of ``-sum_k onehot * log(probs)``.

    ``frames`` optionally restricts the mean to a boolean frame selection.
    """
    target = _as_target(onehot, probs)
    if target.shape != probs.shape:
        raise ValueError(f"shape mismatch: {target.shape} vs {probs.shape}")
    logp = nx.log(nx.clamp(probs, PROB_FLOOR, None))
    weight = target
    n = probs.shape[0]
    if frames is not None:
        weight = target * np.asarray(frames, dtype=probs.dtype)[:, None]
        n = int(np.count_nonzero(frames))
        if n == 0:
            return Tensor(np.zeros((), dtype=probs.dtype))
    return nx.scale(nx.tensor_sum(nx.mul(logp, weight)), -1.0 / n)


def _pair_weights(T: int, frames, dtype):
    if frames is None:
        return None
    f = np.asarray(frames, dtype=bool)
    return (f[:-1] & f[1:]).astype(dtype)


def smooth_loss(probs: Tensor, tau: float = 4.0, frames: np.ndarray | None = None) -> Tensor:
    """Truncated squared difference of adjacent log-probabilities."""
    T, K = probs.shape
    if T < 2:
        return Tensor(np.zeros((), dtype=probs.dtype))
    logp = nx.log(nx.clamp(probs, PROB_FLOOR, None))
    delta = nx.sub(nx.rows(logp, 0, T - 1), nx.rows(logp, 1, T))
    sq = nx.square(nx.clamp(delta, -tau, tau))
    w = _pair_weights(T, frames, probs.dtype)
    if w is None:
        return nx.tensor_mean(sq)
    n = w.sum()
    if n == 0:
        return Tensor(np.zeros((), dtype=probs.dtype))
    return nx.scale(nx.tensor_sum(nx.mul(sq, w[:, None])), 1.0 / (n * K))


def boundary_loss(soft_bd: np.ndarray, probs: Tensor, frames: np.ndarray | None = None) -> Tensor:
    """Binary cross-entropy between the soft boundary and adjacent-frame dissimilarity."""
    T = probs.shape[0]
    if T < 2:
        return Tensor(np.zeros((), dtype=probs.dtype))
    b = np.asarray(soft_bd, dtype=probs.dtype)[: T - 1]
    p = nx.row_sum(nx.mul(nx.rows(probs, 0, T - 1), nx.rows(probs, 1, T)))
    p = nx.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    one_minus = nx.sub(np.ones(T - 1, dtype=probs.dtype), p)
    terms = nx.add(nx.mul(nx.log(one_minus), -b), nx.mul(nx.log(p), -(1.0 - b)))
    w = _pair_weights(T, frames, probs.dtype)
    if w is None:
        return nx.tensor_mean(terms)
    n = w.sum()
    if n == 0:
        return Tensor(np.zeros((), dtype=probs.dtype))
    return nx.scale(nx.tensor_sum(nx.mul(terms, w)), 1.0 / n)


def total_loss(
    onehot,
    enc_probs: Tensor | None,
    dec_probs: Tensor,
    soft_bd: np.ndarray,
    weights: LossWeights,
    tau: float = 4.0,
    dec_frames: np.ndarray | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted encoder + decoder loss and its per-term breakdown.

    The breakdown holds the unweighted term values; ``enc_probs=None`` drops
    the encoder terms entirely. ``dec_frames`` restricts decoder terms to a
    frame selection.
    """
    terms: dict[str, Tensor] = {}
    if enc_probs is not None:
        terms["ce_enc"] = ce_loss(onehot, enc_probs)
        terms["smo_enc"] = smooth_loss(enc_probs, tau)
        terms["bd_enc"] = boundary_loss(soft_bd, enc_probs)
    terms["ce_dec"] = ce_loss(onehot, dec_probs, dec_frames)
    terms["smo_dec"] = smooth_loss(dec_probs, tau, dec_frames)
    terms["bd_dec"] = boundary_loss(soft_bd, dec_probs, dec_frames)

    w = asdict(weights)
    total = None
    for name, t in terms.items():
        if w[name] == 0:
            continue
        piece = nx.scale(t, w[name])
        total = piece if total is None else nx.add(total, piece)
    if total is None:
        total = Tensor(np.zeros((), dtype=dec_probs.dtype))
    breakdown = {name: float(t.data) for name, t in terms.items()}
    breakdown["total"] = float(total.data)
    return total, breakdown
