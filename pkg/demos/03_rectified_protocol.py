"""Anticipation without knowing the video length.

The usual protocol sizes the prediction from the full video length, which a
deployed system would not know. The rectified protocol predicts r * N_O frames
from the N_O observed ones and is scored on the very same ground-truth window.

Usage: python 03_rectified_protocol.py [epochs]
"""
import sys

import numpy as np

from actdiff.data import GrammarSpec, generate_dataset
from actdiff.engine.config import desk_profile
from actdiff.engine.training import TrainState, evaluate_lta, train
from actdiff.metrics import EvalProtocol

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
videos, _ = generate_dataset(GrammarSpec(), 80, np.random.default_rng(0), n_test=20)
state = train(videos[:60], TrainState.fresh(desk_profile(epochs=epochs)))

grids = {}
for name, protocol in [("gt length", EvalProtocol()),
                       ("r = 2", EvalProtocol(use_gt_length=False, r=2.0)),
                       ("r = 4", EvalProtocol(use_gt_length=False, r=4.0))]:
    grids[name] = {(row["alpha"], row["beta"]): row["value"]
                   for row in evaluate_lta(videos[60:], state.params, state.config, protocol).rows}

cells = sorted(next(iter(grids.values())))
print("alpha beta  " + "  ".join(f"{n:>9}" for n in grids))
for cell in cells:
    print(f"{cell[0]:5} {cell[1]:4}  " + "  ".join(f"{g[cell]:9.1f}" for g in grids.values()))
