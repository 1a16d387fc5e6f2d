"""Train the desk model on synthetic activities and look at what it predicts.

Usage: python 02_segment_and_anticipate.py [epochs] [out_dir]

The synthetic videos follow a small grammar of action orderings, so the best
possible anticipation is known exactly. The script reports segmentation
metrics, compares anticipation against repeating the last observed label and
against that exact posterior, and writes SVG timelines.
"""
import sys
from pathlib import Path

import numpy as np

from actdiff.data import GrammarSpec, generate_dataset, grammar_oracle_predict
from actdiff.engine.config import desk_profile
from actdiff.engine.plot import timeline_svg
from actdiff.engine.training import infer_lta, infer_tas, run_training, video_rng
from actdiff.masking import n_anticipated, n_observed
from actdiff.metrics import moc

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

spec = GrammarSpec()
videos, _ = generate_dataset(spec, 80, np.random.default_rng(0), n_test=20)
train_v, test_v = videos[:60], videos[60:]
config = desk_profile(epochs=epochs)
print(f"training {epochs} epochs on {len(train_v)} videos ...")
state, report = run_training(train_v, test_v, config)
print("segmentation:", {k: round(v, 1) for k, v in report.tas.items()})

alpha, beta = 0.3, 0.2
scores = {"model": [report.lta_moc(alpha, beta)], "persistence": [], "bayes": []}
for v in test_v:
    n_obs, n_a = n_observed(v.T, alpha), n_anticipated(v.T, beta)
    obs = v.labels[:n_obs]
    scores["persistence"].append(moc(np.r_[obs, np.full(n_a, obs[-1])], v.labels, n_obs, n_a))
    scores["bayes"].append(moc(grammar_oracle_predict(obs, n_a, spec), v.labels, n_obs, n_a))
print(f"MoC at alpha={alpha}, beta={beta}: " + ", ".join(f"{k} {np.mean(s):.1f}" for k, s in scores.items()))

for i, v in enumerate(test_v[:3]):
    n_obs = n_observed(v.T, alpha)
    rows = {
        "GT": v.labels,
        "TAS": infer_tas(v.features, state.params, config, video_rng(0, i, 1)),
        "LTA": infer_lta(v.features[:n_obs], v.T - n_obs, state.params, config, video_rng(0, i, 2)),
    }
    (out / f"{v.id}.svg").write_text(timeline_svg(rows, n_obs=n_obs, title=v.id), encoding="utf-8")
print(f"timelines written to {out}/")
