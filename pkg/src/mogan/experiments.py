"""The desk-scale end-to-end experiment: pretrain a broad-motion base bundle
once, then post-train (a) a DMD-only baseline and (b) the full adversarial
model from the same base with the same seed, and compare motion metrics on
held-out prompts.

The teacher's corpus mixes slow and fast clips (it models generic content);
the adversarial stage trains its discriminator on a motion-rich pool only.
The directional claim under test: the adversarial term recovers dynamics that
pure distribution matching loses, without giving up smoothness.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import torch

from .common import make_rng
from .data import Corpus, CorpusConfig, PromptSet, build_corpus, default_prompt_set, smoothness_calibration
from .discriminator import DiscriminatorConfig
from .flow import FlowConfig, HornSchunckFlow
from .losses import LossWeights
from .metrics import MotionReport, evaluate_model
from .models import ChunkRecurrentDecoder, ModelConfig, VelocityNet
from .pretrain import PretrainConfig, load_base, pretrain_base, save_base
from .trainer import GeneratorSampler, TrainConfig, run_training

E2E_MODEL = ModelConfig(width=96, depth=4, heads=4)

E2E_DISC = DiscriminatorConfig(width=64, depth=6, heads=4, head_depths=(3, 5, 6), head_width=32)

E2E_FLOW_TRAIN = FlowConfig(iterations=15, levels=2)


def e2e_rich_corpus_config(seed: int = 100) -> CorpusConfig:
    """Motion-rich pool the discriminator sees."""
    return CorpusConfig(clips=256, eval_clips=64, seed=seed)


def e2e_pretrain_config(seed: int = 0) -> PretrainConfig:
    return PretrainConfig(
        corpus=CorpusConfig(clips=384, eval_clips=8, slow_fraction=0.5, seed=seed),
        model=E2E_MODEL,
        teacher_steps=6000,
        decoder_steps=600,
        batch_size=32,
        decoder_batch_size=8,
        lr=2e-3,
        seed=seed,
    )


def e2e_train_config(seed: int, total_steps: int = 600, warmup_steps: int = 300,
                     dmd_only: bool = False, **overrides) -> TrainConfig:
    weights = LossWeights(sigma=0.05)
    if dmd_only:
        weights = LossWeights(gan_g=0.0, gan_d=0.0, r1=0.0, r2=0.0, sigma=0.05)
    cfg = TrainConfig(
        lr=1e-4,
        fake_lr=3e-4,
        disc_lr=4e-4,
        total_steps=total_steps,
        warmup_steps=warmup_steps,
        batch_size_disc=4,
        batch_size_gen=2,
        weights=weights,
        seed=seed,
        chunks=4,
        window_len=2,
        model=E2E_MODEL,
        disc=E2E_DISC,
        flow=E2E_FLOW_TRAIN,
        checkpoint_interval=0,
    )
    return replace(cfg, **overrides) if overrides else cfg


def get_base(cache: str | Path | None = None, progress: bool = False):
    """Pretrain the teacher/decoder bundle, or load it from a cache file."""
    cfg = e2e_pretrain_config()
    if cache is not None:
        cache = Path(cache)
        if cache.exists():
            teacher, decoder, _ = load_base(cache)
            return teacher, decoder
    teacher, decoder = pretrain_base(cfg, progress=progress)
    if cache is not None:
        save_base(cache, teacher, decoder, cfg)
    return teacher, decoder


@dataclass(frozen=True)
class E2EResult:
    dmd_only: MotionReport
    mogan: MotionReport

    @property
    def dynamics_gain(self) -> float:
        return self.mogan.dynamics - self.dmd_only.dynamics

    @property
    def smoothness_drop(self) -> float:
        return self.dmd_only.smoothness - self.mogan.smoothness


def evaluate_bundle(generator: VelocityNet, decoder: ChunkRecurrentDecoder,
                    cfg: TrainConfig, prompts: PromptSet, calibration: float,
                    seeds=(0, 1, 2, 3, 4)) -> MotionReport:
    sampler = GeneratorSampler(generator, decoder, cfg.timesteps, cfg.chunks)
    return evaluate_model(sampler, prompts, seeds=list(seeds),
                          calibration=calibration, estimator=HornSchunckFlow())


def run_pair(seed: int, corpus: Corpus, teacher: VelocityNet, decoder: ChunkRecurrentDecoder,
             calibration: float, total_steps: int = 300, warmup_steps: int = 150,
             eval_seeds=(0, 1, 2, 3, 4), progress: bool = False) -> E2EResult:
    """Same seed, same budget: DMD-only baseline versus the full model."""
    prompts_train = default_prompt_set(E2E_MODEL.num_classes, "train")
    prompts_eval = default_prompt_set(E2E_MODEL.num_classes, "eval")

    results = {}
    for name, dmd_only in (("dmd_only", True), ("mogan", False)):
        cfg = e2e_train_config(seed, total_steps, warmup_steps, dmd_only=dmd_only)
        state, _ = run_training(cfg, corpus, prompts_train, teacher, decoder, progress=progress)
        results[name] = evaluate_bundle(state.generator, state.decoder, cfg,
                                        prompts_eval, calibration, eval_seeds)
    return E2EResult(dmd_only=results["dmd_only"], mogan=results["mogan"])
