"""Masked encoder and denoising decoder built from dilated conv + local attention layers.

Parameters live in a flat ``dict[str, Tensor]`` so the optimizer, checkpoints
and gradient checks can treat them uniformly.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import numerics as nx
from .numerics import RelPosBias, Tensor


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 16
    num_classes: int = 6
    enc_layers: int = 7
    dec_layers: int = 5
    enc_dim: int = 16
    dec_dim: int = 8
    w_max: int = 64
    cond_layer_ids: tuple = (3, 5, 7)
    signal_scale: float = 1.0
    kernel_size: int = 3
    norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "cond_layer_ids", tuple(int(i) for i in self.cond_layer_ids))
        dims = (self.feature_dim, self.num_classes, self.enc_dim, self.dec_dim, self.enc_layers, self.dec_layers, self.w_max)
        if min(dims) < 1:
            raise ValueError("model dimensions and layer counts must be >= 1")
        if not self.cond_layer_ids:
            raise ValueError("cond_layer_ids must not be empty")
        if any(not 1 <= i <= self.enc_layers for i in self.cond_layer_ids):
            raise ValueError(f"cond_layer_ids {self.cond_layer_ids} outside [1, {self.enc_layers}]")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cond_layer_ids"] = list(self.cond_layer_ids)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class EncoderOutput(NamedTuple):
    layer_embeddings: list
    embedding: Tensor
    logits: Tensor
    probs: Tensor


class DecoderOutput(NamedTuple):
    logits: Tensor
    probs: Tensor


def layer_span(i: int, T: int, w_max: int) -> int:
    """Dilation and attention window of 1-based layer ``i`` for a length-T input."""
    return max(1, min(2 ** i, T, 2 * w_max))


def _layer_shapes(prefix: str, dim: int, qk_in: int, k: int, w_max: int) -> dict:
    return {
        f"{prefix}.conv.w": (k, dim, dim),
        f"{prefix}.conv.b": (dim,),
        f"{prefix}.q.w": (qk_in, dim),
        f"{prefix}.q.b": (dim,),
        f"{prefix}.k.w": (qk_in, dim),
        f"{prefix}.k.b": (dim,),
        f"{prefix}.v.w": (dim, dim),
        f"{prefix}.v.b": (dim,),
        f"{prefix}.o.w": (dim, dim),
        f"{prefix}.o.b": (dim,),
        f"{prefix}.relbias": (2 * w_max + 1,),
        f"{prefix}.ff1.w": (dim, dim),
        f"{prefix}.ff1.b": (dim,),
        f"{prefix}.ff2.w": (dim, dim),
        f"{prefix}.ff2.b": (dim,),
    }


def param_shapes(cfg: ModelConfig) -> dict:
    """Ordered name -> shape table for every learnable tensor."""
    C, K, De, Dd, k = cfg.feature_dim, cfg.num_classes, cfg.enc_dim, cfg.dec_dim, cfg.kernel_size
    shapes = {
        "mask_token": (C,),
        "enc.in.w": (C, De),
        "enc.in.b": (De,),
    }
    for i in range(1, cfg.enc_layers + 1):
        shapes.update(_layer_shapes(f"enc.{i}", De, De, k, cfg.w_max))
    shapes["enc.head.w"] = (De, K)
    shapes["enc.head.b"] = (K,)
    shapes["cond.w"] = (len(cfg.cond_layer_ids) * De, Dd)
    shapes["cond.b"] = (Dd,)
    shapes["dec.in.w"] = (K, Dd)
    shapes["dec.in.b"] = (Dd,)
    shapes["dec.time.w"] = (Dd, Dd)
    shapes["dec.time.b"] = (Dd,)
    for i in range(1, cfg.dec_layers + 1):
        shapes.update(_layer_shapes(f"dec.{i}", Dd, 2 * Dd, k, cfg.w_max))
    shapes["dec.head.w"] = (Dd, K)
    shapes["dec.head.b"] = (K,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    """Fan-in scaled uniform weights, zero biases and bias tables, N(0, 0.02^2) mask token."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name == "mask_token":
            arr = rng.normal(0.0, 0.02, size=shape)
        elif name.endswith(".b") or name.endswith(".relbias"):
            arr = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = 1.0 / np.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


def _lin(x, params, name):
    return nx.linear(x, params[name + ".w"], params[name + ".b"])


def _layer(x: Tensor, params: dict, prefix: str, span: int, cfg: ModelConfig, cond: Tensor | None = None) -> Tensor:
    c = nx.relu(nx.conv1d_dilated(x, params[prefix + ".conv.w"], params[prefix + ".conv.b"], span))
    n = nx.instance_norm(c, cfg.norm_eps)
    qk_in = n if cond is None else nx.concat([n, cond], axis=1)
    bias = RelPosBias(params[prefix + ".relbias"], cfg.w_max)
    att = nx.windowed_attention(_lin(qk_in, params, prefix + ".q"), _lin(qk_in, params, prefix + ".k"),
                                _lin(n, params, prefix + ".v"), span, bias)
    h = nx.add(c, _lin(att, params, prefix + ".o"))
    ff = _lin(nx.relu(_lin(h, params, prefix + ".ff1")), params, prefix + ".ff2")
    return nx.add(x, ff)


def encoder_forward(features, params: dict, cfg: ModelConfig) -> EncoderOutput:
    """Encode (already masked) features of shape (T, C)."""
    x = features if isinstance(features, Tensor) else Tensor(np.asarray(features))
    T = x.shape[0]
    h = _lin(x, params, "enc.in")
    layers = []
    for i in range(1, cfg.enc_layers + 1):
        h = _layer(h, params, f"enc.{i}", layer_span(i, T, cfg.w_max), cfg)
        layers.append(h)
    logits = _lin(h, params, "enc.head")
    return EncoderOutput(layers, h, logits, nx.softmax(logits))


def condition_select(enc: EncoderOutput, params: dict, cfg: ModelConfig) -> Tensor:
    """Concatenate the configured encoder layers and project to the decoder width."""
    picked = [enc.layer_embeddings[i - 1] for i in cfg.cond_layer_ids]
    cat = picked[0] if len(picked) == 1 else nx.concat(picked, axis=1)
    return _lin(cat, params, "cond")


def timestep_embedding(s: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal embedding of an integer time step."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = s * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb.astype(dtype)


def decoder_forward(a_s, s: int, cond: Tensor, params: dict, cfg: ModelConfig, S: int | None = None) -> DecoderOutput:
    """Predict clean label probabilities from noisy scaled labels ``a_s`` at step ``s``."""
    a = a_s if isinstance(a_s, Tensor) else Tensor(np.asarray(a_s, dtype=cond.dtype))
    T, K = a.shape
    if K != cfg.num_classes or cond.shape != (T, cfg.dec_dim):
        raise ValueError(f"shape mismatch: a_s {a.shape}, cond {cond.shape}")
    if s < 0 or (S is not None and s > S):
        raise ValueError(f"time step {s} out of range")
    a = nx.clamp(a, -cfg.signal_scale, cfg.signal_scale)
    temb = Tensor(timestep_embedding(s, cfg.dec_dim, cond.dtype)[None, :])
    h = nx.add(_lin(a, params, "dec.in"), _lin(temb, params, "dec.time"))
    for i in range(1, cfg.dec_layers + 1):
        h = _layer(h, params, f"dec.{i}", layer_span(i, T, cfg.w_max), cfg, cond=cond)
    logits = _lin(h, params, "dec.head")
    return DecoderOutput(logits, nx.softmax(logits))
