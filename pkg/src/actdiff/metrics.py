"""Segmentation and anticipation metrics: accuracy, edit, F1@k, MoC, and the LTA grid."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .masking import n_anticipated, n_observed, rectified_horizon

log = logging.getLogger(__name__)


class Segment(NamedTuple):
    label: int
    start: int
    end: int  # exclusive


def extract_segments(labels) -> list[Segment]:
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cuts = np.nonzero(labels[1:] != labels[:-1])[0] + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [len(labels)]])
    return [Segment(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def _segments(labels, background) -> list[Segment]:
    bg = set(background or ())
    return [s for s in extract_segments(labels) if s.label not in bg]


def frame_accuracy(pred, gt) -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    return 100.0 * float(np.mean(pred == gt))


def levenshtein(a, b) -> int:
    m, n = len(a), len(b)
    d = np.zeros((m + 1, n + 1), dtype=int)
    d[:, 0] = np.arange(m + 1)
    d[0, :] = np.arange(n + 1)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + cost)
    return int(d[m, n])


def edit_score(pred, gt, background=()) -> float:
    p = [s.label for s in _segments(pred, background)]
    g = [s.label for s in _segments(gt, background)]
    if not p and not g:
        return 100.0
    if not p or not g:
        return 0.0
    return 100.0 * (1.0 - levenshtein(p, g) / max(len(p), len(g)))


def _iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    return inter / (max(a.end, b.end) - min(a.start, b.start))


def _augment(p: int, adj, match_gt, seen) -> bool:
    for g in adj[p]:
        if g in seen:
            continue
        seen.add(g)
        if match_gt[g] is None or _augment(match_gt[g], adj, match_gt, seen):
            match_gt[g] = p
            return True
    return False


def f1_counts(pred, gt, k: float, background=(), greedy_only: bool = False) -> tuple[int, int, int]:
    """(TP, FP, FN) at IoU threshold ``k`` percent.

    Predicted segments are first matched greedily in temporal order to their
    best-IoU same-class ground-truth segment. Unless ``greedy_only``, the
    matching is then completed to maximum cardinality with augmenting paths,
    which only changes the result when one predicted segment clears the
    threshold against two ground-truth segments (possible for k < 50).
    """
    if not 0 < k <= 100:
        raise ValueError("k must lie in (0, 100]")
    thr = k / 100.0
    P, G = _segments(pred, background), _segments(gt, background)
    adj = [[j for j, g in enumerate(G) if g.label == p.label and _iou(p, g) >= thr] for p in P]
    match_gt: list = [None] * len(G)
    for i, p in enumerate(P):
        same = [(j, _iou(p, g)) for j, g in enumerate(G) if g.label == p.label]
        if not same:
            continue
        j, best = max(same, key=lambda t: t[1])
        if best >= thr and match_gt[j] is None:
            match_gt[j] = i
    if not greedy_only:
        matched = {i for i in match_gt if i is not None}
        for i in range(len(P)):
            if i not in matched and adj[i] and _augment(i, adj, match_gt, set()):
                matched.add(i)
    tp = sum(m is not None for m in match_gt)
    return tp, len(P) - tp, len(G) - tp


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp + fp + fn == 0:
        return 100.0
    return 100.0 * 2 * tp / (2 * tp + fp + fn)


def f1_at_k(pred, gt, k: float, background=(), greedy_only: bool = False) -> tuple[float, tuple[int, int, int]]:
    counts = f1_counts(pred, gt, k, background, greedy_only)
    return f1_from_counts(*counts), counts


def moc(pred, gt, n_obs: int, eval_len: int) -> float:
    """Mean over classes of frame accuracy on frames ``n_obs .. n_obs + eval_len - 1``.

    ``pred`` may be the full sequence or longer/shorter; its future part is
    cropped, or padded by repeating its last label.
    """
    if eval_len < 1:
        raise ValueError("empty evaluation window")
    gt = np.asarray(gt)
    if len(gt) < n_obs + eval_len:
        raise ValueError("ground truth shorter than the evaluation window")
    window = fit_length(np.asarray(pred)[n_obs:], eval_len)
    truth = gt[n_obs: n_obs + eval_len]
    accs = [np.mean(window[truth == c] == c) for c in np.unique(truth)]
    return 100.0 * float(np.mean(accs))


def fit_length(pred, n: int) -> np.ndarray:
    pred = np.asarray(pred)
    if len(pred) >= n:
        return pred[:n]
    if len(pred) == 0:
        raise ValueError("cannot pad an empty prediction")
    return np.concatenate([pred, np.full(n - len(pred), pred[-1], dtype=pred.dtype)])


# -- TAS aggregation --------------------------------------------------------


def tas_report(preds: Iterable, gts: Iterable, background=(), ks=(10, 25, 50)) -> dict:
    """Split-level TAS metrics: pooled frame accuracy and F1 counts, mean edit."""
    correct = total = 0
    edits = []
    counts = {k: np.zeros(3, dtype=int) for k in ks}
    for p, g in zip(preds, gts):
        p, g = np.asarray(p), np.asarray(g)
        correct += int(np.sum(p == g))
        total += len(g)
        edits.append(edit_score(p, g, background))
        for k in ks:
            counts[k] += f1_counts(p, g, k, background)
    report = {"accuracy": 100.0 * correct / max(total, 1), "edit": float(np.mean(edits)) if edits else 0.0}
    for k in ks:
        report[f"f1@{k}"] = f1_from_counts(*counts[k])
    return report


# -- LTA protocol -----------------------------------------------------------


@dataclass(frozen=True)
class EvalProtocol:
    alphas: tuple = (0.2, 0.3)
    betas: tuple = (0.1, 0.2, 0.3, 0.5)
    r: float = 4.0
    use_gt_length: bool = True
    background: tuple = ()

    def __post_init__(self):
        if not self.alphas or not self.betas:
            raise ValueError("evaluation grids must be non-empty")
        if self.r <= 0:
            raise ValueError("r must be positive")


def prediction_horizon(protocol: EvalProtocol, n_obs: int, T: int | None = None) -> int:
    """Number of future frames the model is asked for.

    Under the rectified protocol only ``n_obs`` and ``r`` are consulted.
    """
    if protocol.use_gt_length:
        raise TypeError("use gt_horizon() when the ground-truth length is allowed")
    return rectified_horizon(n_obs, protocol.r)


def gt_horizon(T: int, beta: float) -> int:
    return max(1, n_anticipated(T, beta))


# predictor(observed_features, n_future) -> labels for observed + future frames
Predictor = Callable[[np.ndarray, int], np.ndarray]


@dataclass
class MetricsReport:
    """Metric cells keyed by (split, alpha, beta, metric)."""

    rows: list = field(default_factory=list)
    skipped: dict = field(default_factory=dict)

    def add(self, split: str, alpha, beta, metric: str, value: float):
        self.rows.append({"split": split, "alpha": alpha, "beta": beta, "metric": metric, "value": float(value)})

    def get(self, metric: str, alpha=None, beta=None, split=None) -> float:
        for r in self.rows:
            if r["metric"] == metric and r["alpha"] == alpha and r["beta"] == beta and (split is None or r["split"] == split):
                return r["value"]
        raise KeyError((metric, alpha, beta, split))

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "skipped": self.skipped}, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["split", "alpha", "beta", "metric", "value"], lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in w.fieldnames})
        return buf.getvalue()


def eval_lta_grid(videos, predict: Predictor, protocol: EvalProtocol, split: str = "test",
                  report: MetricsReport | None = None) -> MetricsReport:
    """MoC for every (alpha, beta) cell, averaged over videos.

    ``videos`` yields objects with ``features`` (T, C) and ``labels`` (T,).
    The predictor only ever receives the observed feature rows and the
    requested horizon.
    """
    report = report if report is not None else MetricsReport()
    videos = list(videos)
    for alpha in protocol.alphas:
        for beta in protocol.betas:
            scores, skipped = [], 0
            for v in videos:
                T = len(v.labels)
                n_obs = n_observed(T, alpha)
                eval_len = n_anticipated(T, beta)
                if n_obs < 1 or eval_len < 1 or n_obs + eval_len > T:
                    skipped += 1
                    continue
                observed = np.asarray(v.features[:n_obs])
                if protocol.use_gt_length:
                    horizon = gt_horizon(T, beta)
                else:
                    horizon = prediction_horizon(protocol, n_obs)
                full = np.asarray(predict(observed, horizon))
                if len(full) != n_obs + horizon:
                    raise ValueError(f"predictor returned {len(full)} labels, expected {n_obs + horizon}")
                scores.append(moc(full, v.labels, n_obs, eval_len))
            if skipped:
                log.info("alpha=%s beta=%s: skipped %d videos with too short a window", alpha, beta, skipped)
                report.skipped[f"{alpha},{beta}"] = skipped
            report.add(split, alpha, beta, "moc", float(np.mean(scores)) if scores else math.nan)
    return report
