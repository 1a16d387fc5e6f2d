import itertools
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actdiff.metrics import (EvalProtocol, MetricsReport, Segment, edit_score, eval_lta_grid, extract_segments,
                             f1_at_k, f1_counts, frame_accuracy, levenshtein, moc, prediction_horizon)

A, B, C = 0, 1, 2


# -- oracles ------------------------------------------------------------------------


def edit_oracle(a: tuple, b: tuple) -> int:
    """Plain exponential recursion, no table."""
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def iou(p, g):
    inter = max(0, min(p.end, g.end) - max(p.start, g.start))
    return inter / (max(p.end, g.end) - min(p.start, g.start))


def best_matching(P, G, thr):
    """Exhaustive maximum one-to-one matching of same-class pairs with IoU >= thr."""
    best = 0
    for perm in itertools.permutations(range(len(G)) if len(G) >= len(P) else range(len(P))):
        if len(G) >= len(P):
            pairs = zip(range(len(P)), perm)
        else:
            pairs = zip(perm, range(len(G)))
        n = sum(1 for i, j in pairs if P[i].label == G[j].label and iou(P[i], G[j]) >= thr)
        best = max(best, n)
    return best


def random_labels(rng, max_segments, n_classes=3):
    n = int(rng.integers(1, max_segments + 1))
    labels, prev = [], -1
    for _ in range(n):
        c = int(rng.integers(n_classes))
        while c == prev and n_classes > 1:
            c = int(rng.integers(n_classes))
        labels += [c] * int(rng.integers(1, 6))
        prev = c
    return np.array(labels)


# -- segments and accuracy ----------------------------------------------------------


def test_extract_segments():
    assert extract_segments([A, A, B, B, A]) == [Segment(A, 0, 2), Segment(B, 2, 4), Segment(A, 4, 5)]
    assert len(extract_segments([C] * 6)) == 1


@given(st.lists(st.integers(0, 3), min_size=1, max_size=40))
def test_segments_round_trip(labels):
    rebuilt = [s.label for s in extract_segments(labels) for _ in range(s.end - s.start)]
    assert rebuilt == labels


def test_frame_accuracy():
    assert frame_accuracy([A, B], [A, B]) == 100.0
    assert frame_accuracy([A, A], [B, B]) == 0.0
    assert frame_accuracy([A, B, B], [A, A, B]) == pytest.approx(66.667, abs=1e-3)


# -- edit score ---------------------------------------------------------------------


def test_edit_examples():
    assert edit_score([A, A, B], [A, A, B]) == 100.0
    assert edit_score([A, B, B, C], [A, A, C]) == pytest.approx(100 * (1 - 1 / 3))


def test_edit_matches_recursion_exhaustively():
    seqs = [s for n in range(1, 7) for s in itertools.product(range(3), repeat=n)
            if all(x != y for x, y in zip(s, s[1:]))]
    for a in seqs[::7]:
        for b in seqs[::5]:
            assert levenshtein(a, b) == edit_oracle(a, b)
            frames_a = np.repeat(a, 2)
            frames_b = np.repeat(b, 3)
            assert edit_score(frames_a, frames_b) == pytest.approx(100 * (1 - edit_oracle(a, b) / max(len(a), len(b))))


@given(st.lists(st.integers(0, 2), min_size=1, max_size=30), st.lists(st.integers(0, 2), min_size=1, max_size=30))
def test_edit_symmetric(a, b):
    assert edit_score(a, b) == edit_score(b, a)


def test_edit_background_excluded():
    assert edit_score([A, A, C, C, B], [A, B], background=(C,)) == 100.0


# -- F1 -----------------------------------------------------------------------------


def test_f1_identity():
    labels = [A, A, B, B, B, C]
    for k in (10, 25, 50, 75, 100):
        assert f1_at_k(labels, labels, k)[0] == 100.0


def test_f1_half_overlap():
    # predicted A covers the first half of the gt A segment: IoU exactly 0.5
    gt = [A, A, A, A]
    pred = [A, A, B, B]
    assert f1_counts(pred, gt, 50) == (1, 1, 0)
    assert f1_counts(pred, gt, 51) == (0, 2, 1)


def test_f1_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(500):
        pred, gt = random_labels(rng, 3), random_labels(rng, 3)
        n = max(len(pred), len(gt))
        pred = np.concatenate([pred, np.full(n - len(pred), pred[-1])])
        gt = np.concatenate([gt, np.full(n - len(gt), gt[-1])])
        k = float(rng.choice([10, 25, 50, 75]))
        P, G = extract_segments(pred), extract_segments(gt)
        tp = best_matching(P, G, k / 100)
        assert f1_counts(pred, gt, k) == (tp, len(P) - tp, len(G) - tp)


def test_f1_augmenting_path_case():
    # the first predicted A prefers the long gt A, leaving the second prediction unmatched
    # under greedy matching; the maximum matching reassigns and finds both
    gt = [A, B, A, A, A, A, A, A]
    pred = [A, A, A, A, A, C, A, A]
    assert f1_counts(pred, gt, 20, greedy_only=True) == (1, 2, 2)
    assert f1_counts(pred, gt, 20) == (2, 1, 1)
    P, G = extract_segments(pred), extract_segments(gt)
    assert best_matching(P, G, 0.2) == 2


# -- MoC ----------------------------------------------------------------------------


def test_moc_cases():
    assert moc([A, A, B], [A, A, B], 0, 3) == 100.0
    assert moc([A, B, B], [A, A, B], 0, 3) == 75.0
    # observed prefix ignored, only the window counts
    assert moc([C, C, A, B, B], [A, A, A, A, B], 2, 3) == pytest.approx(100 * (0.5 + 1) / 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_moc_label_permutation(seed):
    rng = np.random.default_rng(seed)
    gt, pred = rng.integers(0, 4, 20), rng.integers(0, 4, 20)
    perm = rng.permutation(4)
    assert moc(perm[pred], perm[gt], 5, 10) == pytest.approx(moc(pred, gt, 5, 10))


# -- LTA grid -----------------------------------------------------------------------


class Video:
    def __init__(self, labels, C=2):
        self.labels = np.asarray(labels)
        self.features = np.random.default_rng(len(labels)).normal(size=(len(labels), C))


def _lookup_oracle(videos):
    """Predictor that knows the answers; recovers the video from its observed rows."""
    table = {v.features[:3].tobytes(): v.labels for v in videos}

    def predict(observed, n_future):
        labels = table[observed[:3].tobytes()]
        full = labels[: len(observed) + n_future]
        return np.concatenate([full, np.full(len(observed) + n_future - len(full), full[-1])])

    return predict


def test_lta_perfect_oracle_scores_100():
    videos = [Video(np.repeat([0, 1, 2, 1], n)) for n in (10, 12, 15)]
    rep = eval_lta_grid(videos, _lookup_oracle(videos), EvalProtocol())
    assert len(rep.rows) == 8 and all(r["value"] == 100.0 for r in rep.rows)
    rect = eval_lta_grid(videos, _lookup_oracle(videos), EvalProtocol(use_gt_length=False))
    assert all(r["value"] == 100.0 for r in rect.rows)


def test_lta_protocol_audit():
    """The predictor sees only observed rows; toggling the protocol changes only the horizon."""
    videos = [Video(np.repeat([0, 1, 2], n)) for n in (20, 31)]
    seen = {True: [], False: []}
    windows = []

    def make(flag):
        def predict(observed, n_future):
            seen[flag].append((observed.copy(), n_future))
            return np.zeros(len(observed) + n_future, dtype=int)
        return predict

    import actdiff.metrics as M
    orig = M.moc

    def spy(pred, gt, n_obs, eval_len):
        windows.append((n_obs, eval_len))
        return orig(pred, gt, n_obs, eval_len)

    M.moc = spy
    try:
        for flag in (True, False):
            eval_lta_grid(videos, make(flag), EvalProtocol(use_gt_length=flag))
    finally:
        M.moc = orig
    half = len(windows) // 2
    assert windows[:half] == windows[half:]
    for (obs_t, h_t), (obs_f, h_f) in zip(seen[True], seen[False]):
        np.testing.assert_array_equal(obs_t, obs_f)
        assert h_f == prediction_horizon(EvalProtocol(use_gt_length=False), len(obs_f))


def test_rectified_horizon_only_depends_on_prefix():
    proto = EvalProtocol(use_gt_length=False, r=4)
    assert prediction_horizon(proto, 30) == 120
    with pytest.raises(TypeError):
        prediction_horizon(EvalProtocol(), 30)


def test_lta_skips_short_windows():
    videos = [Video([0, 1])]
    rep = eval_lta_grid(videos, lambda o, n: np.zeros(len(o) + n, int), EvalProtocol(alphas=(0.5,), betas=(0.5,)))
    assert rep.skipped == {}
    rep = eval_lta_grid(videos, lambda o, n: np.zeros(len(o) + n, int), EvalProtocol(alphas=(0.8,), betas=(0.5,)))
    assert rep.skipped == {"0.8,0.5": 1} and np.isnan(rep.rows[0]["value"])


def test_report_csv_schema():
    rep = MetricsReport()
    rep.add("test", 0.3, 0.2, "moc", 61.5)
    rep.add("test", None, None, "accuracy", 90.0)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "split,alpha,beta,metric,value"
    assert lines[1] == "test,0.3,0.2,moc,61.5" and lines[2] == "test,,,accuracy,90.0"
    assert rep.get("moc", 0.3, 0.2) == 61.5
