"""Command-line entry points: dataset generation, base-bundle pretraining,
post-training runs (with ablation variants and resume), and two-checkpoint
evaluation with flow panels.

Exit codes: 0 success, 1 runtime failure, 2 configuration error. The run root
defaults to ./runs and may be overridden with the MOGAN_RUNS_DIR environment
variable.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .common import ConfigError, dataclass_from_dict, load_json, save_json


def _runs_root() -> Path:
    return Path(os.environ.get("MOGAN_RUNS_DIR", "runs"))


def cmd_datagen(args) -> int:
    from .data import CorpusConfig, build_corpus, save_corpus, smoothness_calibration

    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"refusing to write into non-empty {out} (use --force)", file=sys.stderr)
        return 2
    cfg_dict = load_json(args.config) if args.config else {}
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if args.clips is not None:
        cfg_dict["clips"] = args.clips
    cfg = dataclass_from_dict(CorpusConfig, cfg_dict)
    train = build_corpus(cfg, "train")
    eval_ = build_corpus(cfg, "eval")
    calibration = smoothness_calibration(train)
    manifest = save_corpus(out, cfg, train, eval_, calibration)
    print(f"wrote {len(train)} train + {len(eval_)} eval clips")
    print(f"smoothness calibration: {calibration:.6f}")
    print(f"manifest: {manifest}")
    return 0


def cmd_pretrain(args) -> int:
    from .pretrain import PretrainConfig, pretrain_base, save_base

    cfg_dict = load_json(args.config) if args.config else {}
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    cfg = dataclass_from_dict(PretrainConfig, cfg_dict)
    teacher, decoder = pretrain_base(cfg, progress=True)
    path = save_base(args.out, teacher, decoder, cfg)
    print(f"base bundle: {path}")
    return 0


def _load_run_spec(config_path: str) -> dict:
    spec = load_json(config_path)
    for key in ("name", "dataset", "base"):
        if key not in spec:
            raise ConfigError(f"run config is missing required field {key!r}")
    return spec


def cmd_train(args) -> int:
    from .data import default_prompt_set, load_corpus
    from .pretrain import load_base
    from .trainer import TrainConfig, apply_ablation, run_training

    spec = _load_run_spec(args.config)
    cfg = dataclass_from_dict(TrainConfig, spec.get("train", {}))
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, total_steps=args.steps)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.ablation:
        cfg = apply_ablation(cfg, args.ablation)

    dataset_root = Path(spec["dataset"])
    train_corpus, _, _ = load_corpus(dataset_root)
    teacher, decoder, base_cfg = load_base(spec["base"])
    if dataclasses.asdict(base_cfg.model) != dataclasses.asdict(cfg.model):
        raise ConfigError("base bundle model config differs from the run's model config")
    prompts = default_prompt_set(cfg.model.num_classes, prefix="train")

    run_name = spec["name"] + (f"-{args.ablation}" if args.ablation else "")
    run_dir = _runs_root() / run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    state, history = run_training(
        cfg, train_corpus, prompts, teacher, decoder,
        run_dir=run_dir, resume=args.resume, progress=True,
    )
    print(f"run dir: {run_dir}")
    print(f"finished at step {state.step} ({len(history)} steps this invocation)")
    return 0


def cmd_eval(args) -> int:
    from .data import default_prompt_set, load_corpus
    from .flow import HornSchunckFlow, write_flow_pngs
    from .metrics import evaluate_model, write_comparison
    from .trainer import GeneratorSampler, load_checkpoint

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, eval_corpus, manifest = load_corpus(Path(args.dataset))
    calibration = manifest.get("smoothness_calibration", 0.059)
    seeds = list(range(args.seeds))

    reports = {}
    for label, ckpt_path in (("model_a", args.ckpt_a), ("model_b", args.ckpt_b)):
        state, cfg = load_checkpoint(ckpt_path)
        sampler = GeneratorSampler(state.generator, state.decoder, cfg.timesteps, cfg.chunks)
        prompts = default_prompt_set(cfg.model.num_classes, prefix="eval")
        reports[label] = evaluate_model(
            sampler, prompts, seeds=seeds, calibration=calibration,
            estimator=HornSchunckFlow(cfg.flow),
        )
        estimator = HornSchunckFlow(cfg.flow)
        for prompt in prompts.prompts:
            for seed in seeds:
                video = sampler(prompt.class_id, seed)
                flow = estimator(video)
                clip_id = f"{label}_c{prompt.class_id}_s{seed}"
                write_flow_pngs(flow, out / "flow_panels" / label, clip_id)

    table = write_comparison(reports, out)
    deltas = {
        k: getattr(reports["model_a"], k) - getattr(reports["model_b"], k)
        for k in ("smoothness", "dynamics", "motion_score")
    }
    save_json({"deltas_a_minus_b": deltas}, out / "deltas.json")
    print(Path(table).read_text())
    print(f"deltas (a - b): {deltas}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mogan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("datagen", help="render the synthetic clip corpus")
    d.add_argument("--config", help="JSON file with corpus fields")
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int)
    d.add_argument("--clips", type=int)
    d.add_argument("--force", action="store_true")
    d.set_defaults(fn=cmd_datagen)

    pre = sub.add_parser("pretrain", help="train the frozen teacher/decoder base bundle")
    pre.add_argument("--config", help="JSON file with pretraining fields")
    pre.add_argument("--out", required=True)
    pre.add_argument("--seed", type=int)
    pre.set_defaults(fn=cmd_pretrain)

    t = sub.add_parser("train", help="run post-training from a run config")
    t.add_argument("config", help="run config JSON: {name, dataset, base, train{...}}")
    t.add_argument("--ablation", choices=["no_dmd", "no_r1r2", "video_disc"])
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--steps", type=int, help="override total_steps")
    t.add_argument("--seed", type=int, help="override seed")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="compare two checkpoints on shared seeds")
    e.add_argument("ckpt_a")
    e.add_argument("ckpt_b")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seeds", type=int, default=5)
    e.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
