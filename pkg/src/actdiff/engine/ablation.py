"""Ablation arms: the same run with one loss term or mask type switched off."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..masking import MASK_TYPES
from ..metrics import EvalProtocol
from .config import TrainConfig
from .training import RunReport, run_training


def ablation_arms(config: TrainConfig, mask_types=None) -> dict[str, TrainConfig]:
    """Named configs: the baseline plus one arm per toggle."""
    arms = {
        "baseline": config,
        "no_enc_loss": config.with_updates(use_enc_loss=False),
        "no_dec_loss_observed": config.with_updates(dec_loss_observed=False),
    }
    for kind in mask_types or config.mask_types:
        if kind not in MASK_TYPES:
            raise ValueError(f"unknown mask type {kind!r}")
        kept = tuple(t for t in config.mask_types if t != kind)
        if kept:
            arms[f"no_{kind}_mask"] = config.with_updates(mask_types=kept)
    return arms


@dataclass
class AblationResult:
    reports: dict = field(default_factory=dict)  # arm -> RunReport

    def deltas(self) -> dict:
        """Per arm, metric differences relative to the baseline (arm - baseline)."""
        base = self.reports["baseline"]
        out = {}
        for arm, rep in self.reports.items():
            if arm == "baseline":
                continue
            d = {f"tas/{k}": rep.tas[k] - base.tas[k] for k in base.tas}
            for row in base.lta:
                key = f"lta/{row['metric']}@{row['alpha']},{row['beta']}"
                d[key] = rep.lta_moc(row["alpha"], row["beta"]) - row["value"]
            out[arm] = d
        return out

    def to_json(self) -> str:
        body = {
            "arms": {arm: json.loads(rep.to_json()) for arm, rep in self.reports.items()},
            "deltas": self.deltas(),
        }
        return json.dumps(body, indent=2, sort_keys=True)


def run_ablation(train_videos, test_videos, config: TrainConfig, arms=None,
                 protocol: EvalProtocol | None = None) -> AblationResult:
    """Train and evaluate each arm from the same seed; ``arms`` filters by name."""
    configs = ablation_arms(config)
    if arms is not None:
        missing = set(arms) - set(configs)
        if missing:
            raise ValueError(f"unknown ablation arms {sorted(missing)}")
        configs = {k: v for k, v in configs.items() if k in arms or k == "baseline"}
    result = AblationResult()
    for name, cfg in configs.items():
        _, report = run_training(train_videos, test_videos, cfg, protocol)
        result.reports[name] = report
    return result


def mean_lta_moc(reports: list[RunReport], beta, alphas=None) -> float:
    """MoC averaged over seeds and observation ratios at one anticipation ratio."""
    vals = [row["value"] for rep in reports for row in rep.lta
            if row["metric"] == "moc" and row["beta"] == beta and (alphas is None or row["alpha"] in alphas)]
    return sum(vals) / len(vals)
