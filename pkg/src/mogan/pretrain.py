"""Builds the frozen base bundle the post-training stage starts from: a
decoder regressed to invert the pooling encoder, and a teacher velocity net
flow-matched on encoded clips of a broad-motion corpus.

The broad corpus deliberately mixes slow and fast clips — the teacher models
generic content — while the adversarial stage later trains its discriminator
on a motion-rich pool only.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .common import ConfigError, dataclass_from_dict, make_rng
from .data import Corpus, CorpusConfig, build_corpus
from .models import ChunkRecurrentDecoder, ModelConfig, VelocityNet, encode_video

BASE_VERSION = 1


def broad_corpus_config(seed: int = 0, clips: int = 512) -> CorpusConfig:
    """Mixed-speed pretraining corpus: half the clips move slowly."""
    return CorpusConfig(
        clips=clips, eval_clips=8, slow_fraction=0.5,
        speed_range=(2.0, 3.5), slow_range=(0.0, 0.6), seed=seed,
    )


@dataclass(frozen=True)
class PretrainConfig:
    corpus: CorpusConfig = field(default_factory=broad_corpus_config)
    model: ModelConfig = ModelConfig()
    teacher_steps: int = 1500
    decoder_steps: int = 500
    batch_size: int = 32
    decoder_batch_size: int = 8
    lr: float = 2e-3
    seed: int = 0


def encode_corpus(corpus: Corpus, model: ModelConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """All clips encoded to latents, plus their class labels."""
    latents, classes = [], []
    for i in range(len(corpus)):
        latents.append(encode_video(corpus.video(i), model))
        classes.append(corpus.class_id(i))
    return torch.stack(latents), torch.tensor(classes, dtype=torch.long)


def pretrain_decoder(cfg: PretrainConfig, corpus: Corpus, progress: bool = False) -> ChunkRecurrentDecoder:
    """Regress the chunk-recurrent decoder to invert the pooling encoder."""
    model = cfg.model
    torch.manual_seed(cfg.seed + 1)
    decoder = ChunkRecurrentDecoder(model)
    opt = torch.optim.Adam(decoder.parameters(), lr=cfg.lr)
    rng = make_rng(cfg.seed + 1)
    for step in range(cfg.decoder_steps):
        idx = torch.randint(len(corpus), (cfg.decoder_batch_size,), generator=rng)
        videos = torch.stack([corpus.video(int(i)) for i in idx])
        latents = encode_video(videos, model)
        recon = decoder.decode_window(latents, 0, latents.shape[1])
        loss = ((recon - videos) ** 2).mean()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if progress and step % 100 == 0:
            print(f"decoder step {step}: mse {float(loss.detach()):.5f}", flush=True)
    decoder.eval()
    return decoder


def pretrain_teacher(cfg: PretrainConfig, corpus: Corpus, progress: bool = False) -> VelocityNet:
    """Flow-match a velocity net on encoded clips, conditioned on class."""
    model = cfg.model
    latents, classes = encode_corpus(corpus, model)
    torch.manual_seed(cfg.seed + 2)
    net = VelocityNet(model)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    rng = make_rng(cfg.seed + 2)
    for step in range(cfg.teacher_steps):
        idx = torch.randint(len(corpus), (cfg.batch_size,), generator=rng)
        z0 = latents[idx]
        cond = classes[idx]
        t = float(torch.rand((), generator=rng))
        eps = torch.randn(z0.shape, generator=rng)
        z_t = (1 - t) * z0 + t * eps
        pred = net(z_t, t, cond)
        loss = ((pred - (eps - z0)) ** 2).mean()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if progress and step % 200 == 0:
            print(f"teacher step {step}: fm loss {float(loss.detach()):.5f}", flush=True)
    net.eval()
    return net


def pretrain_base(
    cfg: PretrainConfig, corpus: Corpus | None = None, progress: bool = False
) -> tuple[VelocityNet, ChunkRecurrentDecoder]:
    if corpus is None:
        corpus = build_corpus(cfg.corpus)
    decoder = pretrain_decoder(cfg, corpus, progress)
    teacher = pretrain_teacher(cfg, corpus, progress)
    return teacher, decoder


def save_base(path: str | Path, teacher: VelocityNet, decoder: ChunkRecurrentDecoder,
              cfg: PretrainConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": BASE_VERSION,
            "config": dataclasses.asdict(cfg),
            "teacher": teacher.state_dict(),
            "decoder": decoder.state_dict(),
        },
        path,
    )
    return path


def load_base(path: str | Path) -> tuple[VelocityNet, ChunkRecurrentDecoder, PretrainConfig]:
    blob = torch.load(Path(path), weights_only=False)
    version = blob.get("format_version")
    if version != BASE_VERSION:
        raise ConfigError(
            f"incompatible base bundle: file has format_version={version}, expected {BASE_VERSION}"
        )
    cfg = dataclass_from_dict(PretrainConfig, blob["config"])
    teacher = VelocityNet(cfg.model)
    teacher.load_state_dict(blob["teacher"])
    teacher.eval()
    decoder = ChunkRecurrentDecoder(cfg.model)
    decoder.load_state_dict(blob["decoder"])
    decoder.eval()
    return teacher, decoder, cfg
