import numpy as np
import pytest

from actdiff.data import GrammarSpec, generate_dataset
from actdiff.engine.config import TrainConfig
from actdiff.model import ModelConfig

TINY_SPEC = GrammarSpec(durations=(4, 8))
TINY_MODEL = ModelConfig(enc_layers=3, dec_layers=2, cond_layer_ids=(2, 3), enc_dim=8, dec_dim=4, w_max=8)


def tiny_config(**kw) -> TrainConfig:
    base = dict(epochs=2, S=20, inference_steps=4, model=TINY_MODEL, random_mask=TrainConfig().random_mask)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_data():
    videos, splits = generate_dataset(TINY_SPEC, 8, np.random.default_rng(0), n_test=2)
    return videos[:6], videos[6:]


RESULTS: list[str] = []  # acceptance-criterion lines, filled by test_acceptance.py


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
