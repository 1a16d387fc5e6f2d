"""Training loop, TAS/LTA inference and split-level evaluation."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nx
from ..data import VideoRecord
from ..diffusion import Schedule, denoise_loop, forward_noise, make_schedule, scale_labels
from ..losses import soft_boundary, total_loss
from ..masking import MaskContext, apply_mask, n_anticipated, rectified_horizon, build_anticipation_input, choose_training_mask, mask_none
from ..metrics import EvalProtocol, MetricsReport, eval_lta_grid, tas_report
from ..model import condition_select, decoder_forward, encoder_forward, init_params
from .config import TrainConfig
from .optim import AdamState, adam_update

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainState:
    """Everything needed to resume training exactly."""

    config: TrainConfig
    params: dict
    adam: AdamState
    rng: np.random.Generator
    epoch: int = 0
    history: list = field(default_factory=list)  # per-epoch mean loss breakdowns
    step_losses: list = field(default_factory=list)

    @classmethod
    def fresh(cls, config: TrainConfig) -> "TrainState":
        rng = np.random.default_rng(config.seed)
        params = init_params(config.model, rng, config.dtype)
        return cls(config, params, AdamState.zeros_like(params), rng)


@dataclass
class PreparedVideo:
    video: VideoRecord
    onehot: np.ndarray
    soft_bd: np.ndarray


def prepare(video: VideoRecord, config: TrainConfig) -> PreparedVideo:
    K = config.model.num_classes
    onehot = np.eye(K, dtype=config.dtype)[video.labels]
    return PreparedVideo(video, onehot, soft_boundary(video.labels, config.boundary_sigma))


def anticipation_horizon(config: TrainConfig, T: int, n_obs: int, rng: np.random.Generator) -> int:
    """Future length appended after the observed prefix for a training-time anticipative mask."""
    if config.ant_horizon == "rectified":
        return rectified_horizon(n_obs, config.ant_r)
    beta = config.ant_betas[int(rng.integers(len(config.ant_betas)))]
    return max(1, n_anticipated(T, beta))


def video_loss(pv: PreparedVideo, params: dict, sched: Schedule, config: TrainConfig, rng: np.random.Generator):
    """Forward one video under a random mask and time step; returns (loss, breakdown, mask type)."""
    cfg = config.model
    T = pv.video.T
    ctx = MaskContext(T, pv.video.labels, pv.soft_bd, config.random_mask, config.alphas, config.mask_types)
    kind, mask = choose_training_mask(rng, ctx)
    feats = np.asarray(pv.video.features, dtype=config.dtype)
    onehot, soft_bd = pv.onehot, pv.soft_bd
    if kind == "ant" and config.ant_horizon != "full":
        n_obs = int(mask.sum())
        keep = min(T, n_obs + anticipation_horizon(config, T, n_obs, rng))
        feats, onehot, soft_bd, mask = feats[:keep], onehot[:keep], soft_bd[:keep], mask[:keep]
    x = apply_mask(feats, mask, params["mask_token"])
    enc = encoder_forward(x, params, cfg)
    cond = condition_select(enc, params, cfg)
    a0 = scale_labels(onehot, cfg.signal_scale)
    s = int(rng.integers(1, sched.S + 1))
    eps = rng.standard_normal(a0.shape)
    a_s = forward_noise(a0, s, eps, sched).astype(config.dtype)
    dec = decoder_forward(a_s, s, cond, params, cfg, sched.S)
    dec_frames = None if config.dec_loss_observed else mask == 0
    loss, parts = total_loss(
        onehot, enc.probs if config.use_enc_loss else None, dec.probs, soft_bd,
        config.weights, config.smooth_tau, dec_frames,
    )
    parts["mask"] = kind
    parts["s"] = s
    return loss, parts


def train_step(batch: list, state: TrainState, sched: Schedule) -> list:
    """Accumulate gradients over ``batch`` (one video at a time), then take one Adam step."""
    config = state.config
    acc = {k: np.zeros_like(p.data) for k, p in state.params.items()}
    parts_all = []
    for pv in batch:
        with nx.Tape() as tape:
            loss, parts = video_loss(pv, state.params, sched, config, state.rng)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite loss on {pv.video.id}: {parts}")
        if loss.requires_grad:
            grads = tape.backward(loss, state.params)
            for k, g in grads.items():
                acc[k] += g
        parts_all.append(parts)
    n = len(batch)
    for k in acc:
        acc[k] /= n
    adam_update(state.params, acc, state.adam, config.lr, config.weight_decay)
    return parts_all


_LOSS_KEYS = ("ce_enc", "smo_enc", "bd_enc", "ce_dec", "smo_dec", "bd_dec", "total")


def run_epoch(videos: list, state: TrainState, sched: Schedule) -> dict:
    config = state.config
    order = state.rng.permutation(len(videos))
    sums = {k: 0.0 for k in _LOSS_KEYS}
    counts = {k: 0 for k in _LOSS_KEYS}
    for start in range(0, len(order), config.batch_size):
        batch = [videos[i] for i in order[start: start + config.batch_size]]
        for parts in train_step(batch, state, sched):
            state.step_losses.append(parts["total"])
            for k in _LOSS_KEYS:
                if k in parts:
                    sums[k] += parts[k]
                    counts[k] += 1
    state.epoch += 1
    summary = {k: sums[k] / counts[k] for k in _LOSS_KEYS if counts[k]}
    summary["epoch"] = state.epoch
    state.history.append(summary)
    return summary


def train(videos, state: TrainState, epochs: int | None = None, callback=None) -> TrainState:
    """Train until ``state.epoch`` reaches ``epochs`` (default: the config's)."""
    config = state.config
    sched = schedule_for(config)
    prepared = [prepare(v, config) for v in videos]
    target = config.epochs if epochs is None else epochs
    while state.epoch < target:
        summary = run_epoch(prepared, state, sched)
        log.info("epoch %d total %.4f", state.epoch, summary["total"])
        if callback is not None:
            callback(state)
    return state


def schedule_for(config: TrainConfig) -> Schedule:
    return make_schedule(config.S, config.beta_start, config.beta_end)


# -- inference --------------------------------------------------------------


def _denoise(features: np.ndarray, mask: np.ndarray, params: dict, config: TrainConfig, rng, sched=None) -> np.ndarray:
    cfg = config.model
    sched = sched or schedule_for(config)
    feats = np.asarray(features, dtype=config.dtype)
    enc = encoder_forward(apply_mask(feats, mask, params["mask_token"]), params, cfg)
    cond = condition_select(enc, params, cfg)
    last = {}

    def decode(a_s, t):
        probs = decoder_forward(a_s, t, cond, params, cfg, sched.S).probs.data
        last["probs"] = probs
        return (probs * 2.0 - 1.0) * cfg.signal_scale

    T = feats.shape[0]
    denoise_loop(decode, T, cfg.num_classes, config.inference_steps, sched, rng, cfg.signal_scale, config.dtype)
    return last["probs"]


def infer_tas(features: np.ndarray, params: dict, config: TrainConfig, rng: np.random.Generator, sched=None) -> np.ndarray:
    """Frame labels for a fully observed video."""
    probs = _denoise(features, mask_none(len(features)), params, config, rng, sched)
    return probs.argmax(axis=1)


def infer_lta(observed: np.ndarray, n_future: int, params: dict, config: TrainConfig, rng: np.random.Generator,
              sched=None) -> np.ndarray:
    """Labels for the observed frames followed by ``n_future`` anticipated frames."""
    full, mask = build_anticipation_input(observed, n_future, params["mask_token"].data)
    probs = _denoise(full, mask, params, config, rng, sched)
    return probs.argmax(axis=1)


def encoder_labels(features: np.ndarray, params: dict, config: TrainConfig) -> np.ndarray:
    feats = np.asarray(features, dtype=config.dtype)
    return encoder_forward(feats, params, config.model).probs.data.argmax(axis=1)


def video_rng(seed: int, index: int, purpose: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, purpose, index])


def evaluate_tas(videos, params: dict, config: TrainConfig, seed: int | None = None, background=()) -> tuple[dict, list]:
    seed = config.seed if seed is None else seed
    sched = schedule_for(config)
    preds = [infer_tas(v.features, params, config, video_rng(seed, i, 1), sched) for i, v in enumerate(videos)]
    return tas_report(preds, [v.labels for v in videos], background), preds


def lta_predictor(params: dict, config: TrainConfig, seed: int | None = None):
    """Predictor closure for :func:`eval_lta_grid`; receives only the observed rows and the horizon."""
    seed = config.seed if seed is None else seed
    sched = schedule_for(config)
    calls = [0]

    def predict(observed, n_future):
        rng = video_rng(seed, calls[0], 2)
        calls[0] += 1
        return infer_lta(observed, n_future, params, config, rng, sched)

    return predict


def evaluate_lta(videos, params: dict, config: TrainConfig, protocol: EvalProtocol, seed: int | None = None,
                 split: str = "test") -> MetricsReport:
    return eval_lta_grid(videos, lta_predictor(params, config, seed), protocol, split)


# -- run report -------------------------------------------------------------


@dataclass
class RunReport:
    seed: int
    config: dict
    history: list
    tas: dict
    lta: list
    wall_clock: float = 0.0

    def to_json(self) -> str:
        """Canonical serialization; wall-clock time is left out so equal runs give equal bytes."""
        body = {"seed": self.seed, "config": self.config, "history": self.history, "tas": self.tas, "lta": self.lta}
        return json.dumps(body, indent=2, sort_keys=True)

    def lta_moc(self, alpha, beta) -> float:
        for row in self.lta:
            if row["metric"] == "moc" and row["alpha"] == alpha and row["beta"] == beta:
                return row["value"]
        raise KeyError((alpha, beta))


def run_training(train_videos, test_videos, config: TrainConfig, protocol: EvalProtocol | None = None,
                 state: TrainState | None = None) -> tuple[TrainState, RunReport]:
    """Train from scratch (or resume ``state``) and evaluate both tasks on ``test_videos``."""
    t0 = time.perf_counter()
    state = state or TrainState.fresh(config)
    train(train_videos, state)
    tas, _ = evaluate_tas(test_videos, state.params, config)
    lta = evaluate_lta(test_videos, state.params, config, protocol or EvalProtocol())
    report = RunReport(config.seed, config.to_dict(), state.history, tas, lta.rows, time.perf_counter() - t0)
    return state, report
