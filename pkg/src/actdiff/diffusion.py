"""Noise schedule, closed-form forward noising and deterministic DDIM sampling."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "Schedule",
    "make_schedule",
    "scale_labels",
    "unscale_labels",
    "forward_noise",
    "ddim_step",
    "inference_times",
    "denoise_loop",
]


@dataclass(frozen=True)
class Schedule:
    """Linear-beta variance schedule over steps 1..S.

    Arrays are stored 0-based (``beta[0]`` is step 1). :meth:`alpha_bar_at`
    takes the 1-based step and treats step 0 as noiseless.
    """

    S: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def alpha_bar_at(self, s: int) -> float:
        if s == 0:
            return 1.0
        if not 1 <= s <= self.S:
            raise ValueError(f"time step {s} outside [1, {self.S}]")
        return float(self.alpha_bar[s - 1])


def make_schedule(S: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> Schedule:
    if S < 1:
        raise ValueError("S must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, S, dtype=np.float64)
    alpha = 1.0 - beta
    return Schedule(S=S, beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def scale_labels(onehot: np.ndarray, scale: float = 1.0, strict: bool = True) -> np.ndarray:
    """Map one-hot rows from {0, 1} to {-scale, +scale}."""
    onehot = np.asarray(onehot)
    ok = np.isin(onehot, (0, 1)).all() and np.all(onehot.sum(axis=-1) == 1)
    if not ok:
        if strict:
            raise ValueError("scale_labels expects one-hot rows")
        warnings.warn("scale_labels received rows that are not one-hot", stacklevel=2)
    return (onehot * 2.0 - 1.0) * scale


def unscale_labels(scaled: np.ndarray, scale: float = 1.0) -> np.ndarray:
    return (np.asarray(scaled) / scale + 1.0) / 2.0


def forward_noise(a0: np.ndarray, s: int, eps: np.ndarray, sched: Schedule) -> np.ndarray:
    ab = sched.alpha_bar_at(s)
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


def _ddim_update(a_s, a0_hat, ab_now: float, ab_next: float | None):
    if ab_next is None:
        return a0_hat
    resid = a_s - np.sqrt(ab_now) * a0_hat
    if ab_now >= 1.0:
        if np.any(resid != 0):
            raise ZeroDivisionError("alpha_bar(t_now) = 1 with a nonzero residual")
        eps_hat = np.zeros_like(a_s)
    else:
        eps_hat = resid / np.sqrt(1.0 - ab_now)
    return np.sqrt(ab_next) * a0_hat + np.sqrt(1.0 - ab_next) * eps_hat


def ddim_step(a_s: np.ndarray, a0_hat: np.ndarray, t_now: int, t_next: int, sched: Schedule) -> np.ndarray:
    """One eta=0 DDIM move from ``t_now`` to ``t_next`` (``-1`` ends the chain)."""
    if t_next >= t_now:
        raise ValueError(f"t_next ({t_next}) must be below t_now ({t_now})")
    ab_next = None if t_next < 0 else sched.alpha_bar_at(t_next)
    return _ddim_update(a_s, a0_hat, sched.alpha_bar_at(t_now), ab_next)


def inference_times(S: int, steps: int) -> list[tuple[int, int]]:
    """Consecutive (t_now, t_next) pairs from S down to -1."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    times = np.rint(np.linspace(-1, S, steps)).astype(int)
    uniq = []
    for t in times[::-1]:
        if not uniq or t != uniq[-1]:
            uniq.append(int(t))
    return list(zip(uniq[:-1], uniq[1:]))


def denoise_loop(
    decode_fn: Callable[[np.ndarray, int], np.ndarray],
    T: int,
    K: int,
    steps: int,
    sched: Schedule,
    rng: np.random.Generator,
    scale: float = 1.0,
    dtype=np.float64,
) -> np.ndarray:
    """Run DDIM from standard normal noise and return the final x0 estimate.

    ``decode_fn(a_s, t)`` returns the model's x0 prediction for the noisy
    labels ``a_s`` at step ``t``; the encoder conditioning is captured by the
    closure. Inputs and predictions are clamped to ``[-scale, scale]``.
    """
    a_s = rng.standard_normal((T, K)).astype(dtype)
    a0_hat = None
    for t_now, t_next in inference_times(sched.S, steps):
        a0_hat = np.clip(decode_fn(np.clip(a_s, -scale, scale), t_now), -scale, scale)
        a_s = ddim_step(a_s, a0_hat, t_now, t_next, sched)
    return a0_hat
