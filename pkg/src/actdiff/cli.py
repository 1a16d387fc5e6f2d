"""Command-line entry point: ``actdiff <subcommand> [options]``.

Exit codes: 0 success, 1 runtime failure (including a failed gradient
check), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import FormatError, GrammarSpec, LabelMap, generate_dataset, load_dataset, write_dataset
from .masking import n_observed
from .metrics import EvalProtocol, MetricsReport, gt_horizon
from .engine.ablation import run_ablation
from .engine.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .engine.config import PROFILES, TrainConfig, load_config
from .engine.gradcheck import run_gradcheck
from .engine.plot import timeline_svg
from .engine.training import (RunReport, TrainState, evaluate_lta, evaluate_tas, infer_lta, infer_tas, train,
                              video_rng)

log = logging.getLogger("actdiff")

GLOBAL_DEFAULTS = {"config": None, "seed": None, "out_dir": "runs", "precision": None, "profile": "desk"}


def _global_flags(p: argparse.ArgumentParser):
    s = argparse.SUPPRESS
    p.add_argument("--config", default=s, help="JSON config merged over the profile")
    p.add_argument("--profile", default=s, choices=sorted(PROFILES), help="base hyperparameter profile (default desk)")
    p.add_argument("--seed", type=int, default=s)
    p.add_argument("--out-dir", default=s, help="output directory (default ./runs)")
    p.add_argument("--precision", choices=("f32", "f64"), default=s)


def _data_flags(p, checkpoint=True):
    p.add_argument("--data", required=True, help="dataset manifest.json")
    p.add_argument("--split", default="test")
    if checkpoint:
        p.add_argument("--checkpoint", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="actdiff", description="Masked diffusion for action segmentation and anticipation.")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic grammar dataset")
    p.add_argument("--n-videos", type=int, default=80)
    p.add_argument("--n-test", type=int, default=20)

    p = sub.add_parser("train", help="train and save a checkpoint")
    _data_flags(p, checkpoint=False)
    p.add_argument("--train-split", default="train")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval-tas", help="segmentation metrics on a split")
    _data_flags(p)

    p = sub.add_parser("eval-lta", help="anticipation MoC grid on a split")
    _data_flags(p)
    p.add_argument("--no-gt-length", action="store_true", help="rectified protocol: horizon r * N_O")
    p.add_argument("--r", type=float, default=4.0)

    p = sub.add_parser("infer", help="label one video")
    _data_flags(p)
    p.add_argument("--video", required=True)
    p.add_argument("--task", choices=("tas", "lta"), default="tas")
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--beta", type=float, default=0.2)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--samples", type=int, default=2, help="coordinates per tensor (0 = all)")
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("ablate", help="train every ablation arm")
    _data_flags(p, checkpoint=False)
    p.add_argument("--train-split", default="train")
    p.add_argument("--arms", nargs="*", help="arm names (default: all)")

    p = sub.add_parser("plot", help="SVG timelines: ground truth, TAS and LTA")
    _data_flags(p)
    p.add_argument("--videos", nargs="*", help="video ids (default: whole split)")
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--beta", type=float, default=0.2)

    for p in sub.choices.values():
        _global_flags(p)
    return parser


def _config(args) -> TrainConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = PROFILES[args.profile]()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.precision is not None:
        updates["precision"] = args.precision
    return cfg.with_updates(**updates) if updates else cfg


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)
    return path


def _split(args):
    videos, splits, mapping = load_dataset(args.data)
    if args.split not in splits:
        raise KeyError(f"split {args.split!r} not in manifest (have {sorted(splits)})")
    return videos, splits, mapping


def _state(args) -> TrainState:
    state = load_checkpoint(args.checkpoint)
    if args.precision is not None and args.precision != state.config.precision:
        state.config = state.config.with_updates(precision=args.precision)
    if args.seed is not None:
        state.config = state.config.with_updates(seed=args.seed)
    return state


def cmd_gen_data(args, out: Path) -> int:
    cfg = _config(args)
    spec = GrammarSpec(num_classes=cfg.model.num_classes, feature_dim=cfg.model.feature_dim)
    videos, splits = generate_dataset(spec, args.n_videos, np.random.default_rng(cfg.seed), args.n_test)
    path = write_dataset(out / "data", videos, splits, LabelMap.default(spec.num_classes))
    print(path)
    return 0


def cmd_train(args, out: Path) -> int:
    videos, splits, _ = load_dataset(args.data)
    if args.resume:
        state = load_checkpoint(args.resume)
        cfg = state.config
    else:
        cfg = _config(args)
        if args.epochs is not None:
            cfg = cfg.with_updates(epochs=args.epochs)
        state = TrainState.fresh(cfg)
    target = args.epochs if args.epochs is not None else cfg.epochs
    train([videos[i] for i in splits[args.train_split]], state, epochs=target,
          callback=lambda s: save_checkpoint(out / "checkpoint.afck", s))
    save_checkpoint(out / "checkpoint.afck", state)
    report = RunReport(cfg.seed, cfg.to_dict(), state.history, {}, [])
    _write(out, "train_report.json", report.to_json())
    print(out / "checkpoint.afck")
    return 0


def cmd_eval_tas(args, out: Path) -> int:
    videos, splits, mapping = _split(args)
    state = _state(args)
    tas, _ = evaluate_tas([videos[i] for i in splits[args.split]], state.params, state.config)
    report = MetricsReport()
    for k, v in tas.items():
        report.add(args.split, None, None, k, v)
    _write(out, "tas_metrics.json", report.to_json())
    _write(out, "tas_metrics.csv", report.to_csv())
    print(json.dumps(tas, indent=2))
    return 0


def cmd_eval_lta(args, out: Path) -> int:
    videos, splits, _ = _split(args)
    state = _state(args)
    protocol = EvalProtocol(r=args.r, use_gt_length=not args.no_gt_length)
    report = evaluate_lta([videos[i] for i in splits[args.split]], state.params, state.config, protocol, split=args.split)
    tag = "rectified" if args.no_gt_length else "gt"
    _write(out, f"lta_metrics_{tag}.json", report.to_json())
    _write(out, f"lta_metrics_{tag}.csv", report.to_csv())
    print(report.to_csv(), end="")
    return 0


def _lta_labels(video, alpha, beta, state, index):
    n_obs = n_observed(video.T, alpha)
    horizon = gt_horizon(video.T, beta)
    return n_obs, infer_lta(video.features[:n_obs], horizon, state.params, state.config,
                            video_rng(state.config.seed, index, 2))


def cmd_infer(args, out: Path) -> int:
    videos, splits, mapping = _split(args)
    if args.video not in videos:
        raise KeyError(f"unknown video {args.video!r}")
    state = _state(args)
    v = videos[args.video]
    if args.task == "tas":
        labels = infer_tas(v.features, state.params, state.config, video_rng(state.config.seed, 0, 1))
    else:
        _, labels = _lta_labels(v, args.alpha, args.beta, state, 0)
    text = "".join(mapping.name(int(i)) + "\n" for i in labels)
    _write(out, f"{v.id}.{args.task}.txt", text)
    return 0


def cmd_gradcheck(args, out: Path) -> int:
    worst = run_gradcheck(range(args.seeds), n_samples=args.samples or None)
    ok = worst <= args.tol
    print(f"gradcheck max relative error {worst:.3e} over {args.seeds} seeds: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_ablate(args, out: Path) -> int:
    videos, splits, _ = _split(args)
    cfg = _config(args)
    result = run_ablation([videos[i] for i in splits[args.train_split]], [videos[i] for i in splits[args.split]],
                          cfg, arms=args.arms)
    _write(out, "ablation.json", result.to_json())
    for arm, d in result.deltas().items():
        print(arm, " ".join(f"{k}={v:+.2f}" for k, v in sorted(d.items()) if k.startswith("lta/")))
    return 0


def cmd_plot(args, out: Path) -> int:
    videos, splits, mapping = _split(args)
    state = _state(args)
    ids = args.videos or splits[args.split]
    for index, vid in enumerate(ids):
        v = videos[vid]
        tas = infer_tas(v.features, state.params, state.config, video_rng(state.config.seed, index, 1))
        n_obs, lta = _lta_labels(v, args.alpha, args.beta, state, index)
        svg = timeline_svg({"GT": v.labels, "TAS": tas, "LTA": lta}, n_obs=n_obs, names=mapping.names,
                           title=f"{vid}  alpha={args.alpha} beta={args.beta}")
        _write(out / "plots", f"{vid}.svg", svg)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval-tas": cmd_eval_tas, "eval-lta": cmd_eval_lta,
    "infer": cmd_infer, "gradcheck": cmd_gradcheck, "ablate": cmd_ablate, "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, Path(args.out_dir))
    except (OSError, KeyError, ValueError, FormatError, CheckpointError, FloatingPointError, RuntimeError) as exc:
        print(f"actdiff {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
