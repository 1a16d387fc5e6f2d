"""Synthetic activity-grammar videos and on-disk feature/label formats.

File formats
------------
AFT1 feature file
    4-byte magic ``b"AFT1"``, uint32 LE frame count T, uint32 LE feature dim C,
    then T*C float32 LE values in frame-major order.
Label file
    UTF-8, one class name per line, T lines.
Mapping file
    UTF-8, lines of ``<id> <name>``.
Manifest
    UTF-8 JSON ``{"videos": {id: {"features": path, "labels": path}},
    "splits": {name: [ids]}, "mapping": path}``; relative paths resolve
    against the manifest's directory.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

AFT_MAGIC = b"AFT1"
_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class VideoRecord:
    id: str
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError(f"{self.id}: {len(self.features)} feature rows vs {len(self.labels)} labels")

    @property
    def T(self) -> int:
        return len(self.labels)


class LabelMap:
    """Bijection between class names and ids 0..K-1."""

    def __init__(self, names):
        names = list(names)
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        self.names = names
        self._ids = {n: i for i, n in enumerate(names)}

    def __len__(self):
        return len(self.names)

    def id(self, name: str) -> int:
        return self._ids[name]

    def name(self, i: int) -> str:
        return self.names[i]

    def __contains__(self, name):
        return name in self._ids

    @classmethod
    def default(cls, K: int) -> "LabelMap":
        return cls([f"action_{i}" for i in range(K)])


@dataclass(frozen=True)
class GrammarSpec:
    num_classes: int = 6
    feature_dim: int = 16
    templates: tuple = ((0, 1, 2, 3, 4), (1, 3, 5, 2, 0, 4), (2, 4, 0, 5, 1, 3, 5), (3, 0, 4, 1, 2, 5))
    durations: tuple = (20, 60)  # inclusive range in frames
    noise: float = 0.5
    smoothing: int = 5
    prototype_seed: int = 0

    def __post_init__(self):
        if not self.templates or any(len(t) == 0 for t in self.templates):
            raise ValueError("templates must be non-empty")
        if any(c < 0 or c >= self.num_classes for t in self.templates for c in t):
            raise ValueError("template class ids out of range")
        lo, hi = self.durations
        if lo < 1 or hi < lo:
            raise ValueError("durations must satisfy 1 <= min <= max")

    def prototypes(self) -> np.ndarray:
        return np.random.default_rng(self.prototype_seed).normal(size=(self.num_classes, self.feature_dim))


def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x
    kernel = np.ones(width) / width
    pad = width // 2
    xp = np.pad(x, ((pad, width - 1 - pad), (0, 0)), mode="edge")
    return np.stack([np.convolve(xp[:, c], kernel, mode="valid") for c in range(x.shape[1])], axis=1)


def generate_video(spec: GrammarSpec, rng: np.random.Generator, vid: str, template: int | None = None) -> VideoRecord:
    if template is None:
        template = int(rng.integers(len(spec.templates)))
    order = spec.templates[template]
    lo, hi = spec.durations
    lengths = rng.integers(lo, hi + 1, size=len(order))
    labels = np.repeat(np.asarray(order, dtype=np.int64), lengths)
    protos = spec.prototypes()
    feats = protos[labels] + rng.normal(0.0, spec.noise, size=(len(labels), spec.feature_dim)) if spec.noise > 0 else protos[labels]
    if spec.noise > 0:
        feats = _smooth(feats, spec.smoothing)
    return VideoRecord(vid, feats.astype(np.float32), labels)


def generate_dataset(spec: GrammarSpec, n_videos: int, rng: np.random.Generator, n_test: int | None = None):
    """Return (videos, splits); the last ``n_test`` videos form the test split (default 25%)."""
    videos = [generate_video(spec, rng, f"video_{i:03d}") for i in range(n_videos)]
    if n_test is None:
        n_test = n_videos // 4
    ids = [v.id for v in videos]
    splits = {"train": ids[: n_videos - n_test], "test": ids[n_videos - n_test:]}
    return videos, splits


def template_of(labels, spec: GrammarSpec) -> int | None:
    """Index of the template whose class order matches ``labels``' segments."""
    runs = tuple(s.label for s in _runs(labels))
    for i, t in enumerate(spec.templates):
        if tuple(t) == runs:
            return i
    return None


# -- grammar oracle ---------------------------------------------------------


def _duration_pmf(spec: GrammarSpec) -> np.ndarray:
    lo, hi = spec.durations
    pmf = np.zeros(hi + 1)
    pmf[lo:] = 1.0 / (hi - lo + 1)
    return pmf


def grammar_posterior(observed_labels, horizon: int, spec: GrammarSpec) -> np.ndarray:
    """Exact per-frame class posterior for the next ``horizon`` frames.

    Sums over every template consistent with the observed segment order,
    weighting by the likelihood of the completed segment durations and of the
    current segment lasting at least as long as observed. Future segment
    boundaries are propagated by convolving duration distributions. Rows may
    sum to less than 1 where the video is likely to have ended.
    """
    obs = np.asarray(observed_labels)
    runs = [s.label for s in _runs(obs)]
    lengths = [s.end - s.start for s in _runs(obs)]
    K = spec.num_classes
    lo, hi = spec.durations
    pmf = _duration_pmf(spec)
    elapsed = lengths[-1]
    post = np.zeros((horizon, K))
    total_w = 0.0
    for template in spec.templates:
        template = list(template)
        n = len(runs)
        if n > len(template) or template[:n] != runs:
            continue
        if any(not lo <= d <= hi for d in lengths[:-1]) or elapsed > hi:
            continue
        surv = pmf[elapsed:].sum()
        weight = float(np.prod([pmf[d] for d in lengths[:-1]])) * surv
        # remaining frames of the current segment, 0..hi-elapsed
        rem = pmf[elapsed:] / surv
        start = np.zeros(horizon)
        start[0] = 1.0
        for j, cls in enumerate(template[n - 1:]):
            dur = rem if j == 0 else pmf
            tail = np.zeros(horizon)
            m = min(horizon, len(dur))
            tail[:m] = 1.0 - np.cumsum(dur)[:m]  # P(duration > k)
            post[:, cls] += weight * np.convolve(start, tail)[:horizon]
            start = np.convolve(start, dur)[:horizon]
        total_w += weight
    if total_w == 0:
        post[:, int(obs[-1])] = 1.0
        return post
    return post / total_w


def _runs(labels):
    from .metrics import extract_segments

    return extract_segments(labels)


def grammar_oracle_predict(observed_labels, horizon: int, spec: GrammarSpec) -> np.ndarray:
    """Frame-wise MAP continuation under the grammar; full sequence returned."""
    post = grammar_posterior(observed_labels, horizon, spec)
    return np.concatenate([np.asarray(observed_labels), post.argmax(axis=1)])


# -- file formats -----------------------------------------------------------


class FormatError(ValueError):
    pass


def save_features(path, features: np.ndarray):
    features = np.asarray(features)
    if features.ndim != 2:
        raise ValueError("features must be (T, C)")
    T, C = features.shape
    payload = np.ascontiguousarray(features, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(AFT_MAGIC, T, C) + payload)


def load_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, T, C = _HEADER.unpack_from(raw)
    if magic != AFT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    need = T * C * 4
    body = raw[_HEADER.size:]
    if len(body) < need:
        raise FormatError(f"{path}: truncated payload ({len(body)} of {need} bytes)")
    if len(body) > need:
        raise FormatError(f"{path}: {len(body) - need} trailing bytes")
    arr = np.frombuffer(body, dtype="<f4").reshape(T, C).astype(np.float32)
    if not np.isfinite(arr).all():
        raise FormatError(f"{path}: non-finite feature values")
    return arr


def save_labels(path, labels, mapping: LabelMap):
    Path(path).write_text("".join(mapping.name(int(i)) + "\n" for i in labels), encoding="utf-8")


def load_labels(path, mapping: LabelMap) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    ids = []
    for lineno, name in enumerate(lines, start=1):
        name = name.rstrip("\r")
        if name not in mapping:
            raise FormatError(f"{path}:{lineno}: unknown label {name!r}")
        ids.append(mapping.id(name))
    return np.asarray(ids, dtype=np.int64)


def save_mapping(path, mapping: LabelMap):
    Path(path).write_text("".join(f"{i} {n}\n" for i, n in enumerate(mapping.names)), encoding="utf-8")


def load_mapping(path) -> LabelMap:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        idx, _, name = line.strip().partition(" ")
        if not name:
            raise FormatError(f"{path}:{lineno}: expected '<id> <name>'")
        pairs.append((int(idx), name))
    pairs.sort()
    if [i for i, _ in pairs] != list(range(len(pairs))):
        raise FormatError(f"{path}: ids must be exactly 0..K-1")
    return LabelMap([n for _, n in pairs])


def write_dataset(root, videos, splits: dict, mapping: LabelMap) -> Path:
    """Write features, labels, mapping and a manifest under ``root``."""
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    save_mapping(root / "mapping.txt", mapping)
    entries = {}
    for v in videos:
        save_features(root / "features" / f"{v.id}.aft", v.features)
        save_labels(root / "labels" / f"{v.id}.txt", v.labels, mapping)
        entries[v.id] = {"features": f"features/{v.id}.aft", "labels": f"labels/{v.id}.txt"}
    manifest = {"mapping": "mapping.txt", "videos": entries, "splits": {k: list(ids) for k, ids in splits.items()}}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_dataset(manifest_path):
    """Return (videos by id, splits, mapping) from a manifest file."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    mapping = load_mapping(root / manifest["mapping"])
    videos = {}
    for vid, entry in manifest["videos"].items():
        feats = load_features(root / entry["features"])
        labels = load_labels(root / entry["labels"], mapping)
        videos[vid] = VideoRecord(vid, feats, labels)
    return videos, manifest["splits"], mapping


def subsample(video: VideoRecord, rate: int) -> VideoRecord:
    """Keep frames 0, rate, 2*rate, ... of features and labels alike."""
    if rate < 1:
        raise ValueError("rate must be >= 1")
    return VideoRecord(video.id, video.features[::rate], video.labels[::rate])


def expected_length(T: int, rate: int) -> int:
    return math.ceil(T / rate)
