"""Training orchestration: warm-up, the alternating four-loss update schedule,
the fake-score inner loop, ablation variants, checkpointing, and deterministic
seeding.

One training step runs, in order: (1) distribution-matching update of the
generator, (2) the fake-score inner loop, then — once past warm-up — the two
adversarial updates on flows of a decoded chunk window versus real-clip flows.
Whether the discriminator or the generator GAN update comes first is
configurable; both consume the same generation, produced by the
post-DMD-update generator.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import torch
from torch import Tensor

from . import __version__
from .common import ConfigError, dataclass_from_dict, make_rng
from .data import Corpus, PromptSet
from .discriminator import DiscriminatorConfig, MotionDiscriminator
from .flow import FlowConfig, HornSchunckFlow, flow_to_motion
from .fm import DistilledTimesteps, backward_simulate, few_step_sample
from .losses import (
    LossWeights,
    dmd_generator_loss,
    fake_score_loss,
    gan_d_loss,
    gan_g_loss,
    r_regularizer,
)
from .models import ChunkRecurrentDecoder, ModelConfig, VelocityNet, clone_frozen, encode_video, param_hash

CHECKPOINT_VERSION = 1
UPDATE_ORDERS = ("disc_first", "gen_first")
ABLATIONS = ("no_dmd", "no_r1r2", "video_disc")


class NonFiniteLossError(RuntimeError):
    """A loss went non-finite; carries a diagnostic snapshot."""

    def __init__(self, step: int, loss_name: str, batch_desc: str):
        super().__init__(f"non-finite {loss_name} at step {step} (batch: {batch_desc})")
        self.step = step
        self.loss_name = loss_name
        self.batch_desc = batch_desc


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs; fully captured in the run manifest."""

    lr: float = 1e-5
    fake_lr: float | None = None  # defaults to lr
    gan_gen_lr_scale: float = 1.0  # adversarial generator step runs at lr * scale
    disc_lr: float = 2e-5
    weight_decay: float = 0.0
    total_steps: int = 800
    warmup_steps: int = 200
    fake_score_iters: int = 4
    batch_size_disc: int = 8
    batch_size_gen: int = 4
    weights: LossWeights = LossWeights()
    update_order: str = "disc_first"
    no_dmd: bool = False
    no_r1r2: bool = False
    video_space_disc: bool = False
    # Render real windows through the frozen decoder so both adversarial
    # inputs share the renderer and differ only in motion content; with a
    # lossy toy decoder the discriminator otherwise wins on rendering
    # signature alone. Disable to feed raw real-clip flows.
    redecode_real: bool = True
    seed: int = 0
    chunks: int = 4
    window_len: int = 3
    timesteps: tuple[float, ...] = (1.0, 0.66, 0.33)
    dmd_t_range: tuple[float, float] = (0.02, 0.98)
    checkpoint_interval: int = 200
    model: ModelConfig = ModelConfig()
    disc: DiscriminatorConfig = DiscriminatorConfig()
    flow: FlowConfig = FlowConfig()

    def __post_init__(self):
        if not (0 <= self.warmup_steps <= self.total_steps):
            raise ConfigError("need total_steps >= warmup_steps >= 0")
        if self.fake_score_iters < 1:
            raise ConfigError("fake_score_iters must be >= 1")
        if self.batch_size_disc < 1 or self.batch_size_gen < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.update_order not in UPDATE_ORDERS:
            raise ConfigError(f"update_order must be one of {UPDATE_ORDERS}")
        if not (1 <= self.window_len <= self.chunks):
            raise ConfigError("need 1 <= window_len <= chunks")
        lo, hi = self.dmd_t_range
        if not (0 < lo < hi <= 1):
            raise ConfigError("dmd_t_range must satisfy 0 < lo < hi <= 1")
        DistilledTimesteps(self.timesteps)  # validates ordering

    @property
    def distilled(self) -> DistilledTimesteps:
        return DistilledTimesteps(self.timesteps)

    def disc_config(self) -> DiscriminatorConfig:
        """Effective discriminator architecture, honoring the video-space
        ablation (raw latent input instead of the motion tensor)."""
        if not self.video_space_disc:
            return self.disc
        m = self.model
        return replace(
            self.disc,
            in_channels=m.latent_channels,
            frame_size=m.latent_size,
            patch=min(self.disc.patch, m.latent_size),
            max_frames=m.max_chunks,
        )


def video_space_discriminator_variant(cfg: TrainConfig) -> TrainConfig:
    """Wire the adversarial objective directly on latents (no flow estimator)."""
    return replace(cfg, video_space_disc=True)


def apply_ablation(cfg: TrainConfig, name: str) -> TrainConfig:
    if name == "no_dmd":
        return replace(cfg, no_dmd=True, warmup_steps=0)
    if name == "no_r1r2":
        return replace(cfg, no_r1r2=True)
    if name == "video_disc":
        return video_space_discriminator_variant(cfg)
    raise ConfigError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")


class TrainBatch(NamedTuple):
    cond_ids: Tensor          # (batch_size_gen,) class labels for generation
    real_videos: Tensor       # (batch_size_disc, T, 3, H, W)
    real_classes: Tensor


@dataclass
class TrainState:
    generator: VelocityNet
    teacher: VelocityNet
    fake_score: VelocityNet
    discriminator: MotionDiscriminator
    decoder: ChunkRecurrentDecoder
    flow_estimator: HornSchunckFlow
    opt_gen: torch.optim.AdamW
    opt_fake: torch.optim.AdamW
    opt_disc: torch.optim.AdamW
    rng: torch.Generator
    step: int = 0


def init_state(cfg: TrainConfig, teacher: VelocityNet, decoder: ChunkRecurrentDecoder) -> TrainState:
    """Fresh training state: generator and fake score start as exact copies of
    the teacher; teacher and decoder are frozen."""
    torch.manual_seed(cfg.seed)  # fresh-net init (discriminator) must not depend on global RNG history
    teacher = clone_frozen(teacher)
    decoder = clone_frozen(decoder)
    generator = copy.deepcopy(teacher)
    fake = copy.deepcopy(teacher)
    for net in (generator, fake):
        net.train()
        for p in net.parameters():
            p.requires_grad_(True)
    disc = MotionDiscriminator(cfg.disc_config())
    return TrainState(
        generator=generator,
        teacher=teacher,
        fake_score=fake,
        discriminator=disc,
        decoder=decoder,
        flow_estimator=HornSchunckFlow(cfg.flow),
        opt_gen=torch.optim.AdamW(generator.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay),
        opt_fake=torch.optim.AdamW(fake.parameters(), lr=cfg.fake_lr if cfg.fake_lr is not None else cfg.lr,
                                   weight_decay=cfg.weight_decay),
        opt_disc=torch.optim.AdamW(disc.parameters(), lr=cfg.disc_lr, weight_decay=cfg.weight_decay),
        rng=make_rng(cfg.seed),
    )


def _grad_norm(module: torch.nn.Module) -> float:
    total = 0.0
    for p in module.parameters():
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return total**0.5


def _uniform(rng: torch.Generator, lo: float, hi: float) -> float:
    return lo + (hi - lo) * float(torch.rand((), generator=rng))


def _check_finite(value: Tensor, state: TrainState, name: str, batch: TrainBatch) -> None:
    if not torch.isfinite(value).all():
        raise NonFiniteLossError(state.step, name, f"cond_ids={batch.cond_ids.tolist()}")


def gan_enabled(cfg: TrainConfig) -> bool:
    w = cfg.weights
    return (w.gan_g > 0 or w.gan_d > 0 or w.r1 > 0 or w.r2 > 0)


def train_step(state: TrainState, cfg: TrainConfig, batch: TrainBatch) -> tuple[TrainState, dict]:
    """One full update cycle; returns the (mutated) state and the step metrics."""
    m: dict[str, float] = {"step": state.step}
    steps = cfg.distilled
    K = cfg.chunks
    shape_gen = (cfg.batch_size_gen, *state.generator.latent_shape(K))
    conds = batch.cond_ids
    w = cfg.weights

    # (1) distribution-matching generator update
    if not cfg.no_dmd:
        sim = backward_simulate(state.generator, steps, conds, shape_gen, state.rng)
        t_dmd = _uniform(state.rng, *cfg.dmd_t_range)
        teacher_fn = lambda z, t: state.teacher(z, t, conds)
        fake_fn = lambda z, t: state.fake_score(z, t, conds)
        loss_dmd = w.dmd * dmd_generator_loss(teacher_fn, fake_fn, sim.x0_pred, t_dmd, rng=state.rng)
        _check_finite(loss_dmd, state, "loss_dmd", batch)
        state.opt_gen.zero_grad(set_to_none=True)
        loss_dmd.backward()
        m["loss_dmd"] = float(loss_dmd.detach())
        m["grad_norm_gen_dmd"] = _grad_norm(state.generator)
        state.opt_gen.step()

        # (2) fake-score inner loop, re-simulating each iteration
        fake_losses = []
        for _ in range(cfg.fake_score_iters):
            with torch.no_grad():
                sim_f = backward_simulate(state.generator, steps, conds, shape_gen, state.rng)
            t_f = _uniform(state.rng, *cfg.dmd_t_range)
            eps = torch.randn(shape_gen, generator=state.rng)
            loss_fake = fake_score_loss(fake_fn, sim_f.x0_pred, t_f, eps)
            _check_finite(loss_fake, state, "loss_fake", batch)
            state.opt_fake.zero_grad(set_to_none=True)
            loss_fake.backward()
            state.opt_fake.step()
            fake_losses.append(float(loss_fake.detach()))
        m["loss_fake"] = sum(fake_losses) / len(fake_losses)
        m["grad_norm_fake"] = _grad_norm(state.fake_score)

    # (3)+(4) adversarial updates on the post-DMD-update generator
    if state.step >= cfg.warmup_steps and gan_enabled(cfg):
        sim_g = backward_simulate(state.generator, steps, conds, shape_gen, state.rng)
        if cfg.video_space_disc:
            o_gen = sim_g.x0_pred
            o_real = encode_video(batch.real_videos, cfg.model)
        else:
            ws = int(torch.randint(K - cfg.window_len + 1, (1,), generator=state.rng))
            video_gen = state.decoder.decode_window(sim_g.x0_pred, ws, cfg.window_len)
            o_gen = flow_to_motion(state.flow_estimator(video_gen))
            frames_needed = cfg.window_len * cfg.model.frames_per_chunk
            T_real = batch.real_videos.shape[1]
            if T_real < frames_needed:
                raise ConfigError(
                    f"real clips have {T_real} frames but the decode window needs {frames_needed}"
                )
            with torch.no_grad():
                if cfg.redecode_real:
                    lat_real = encode_video(batch.real_videos, cfg.model)
                    K_real = lat_real.shape[1]
                    rs = int(torch.randint(K_real - cfg.window_len + 1, (1,), generator=state.rng))
                    real_window = state.decoder.decode_window(lat_real, rs, cfg.window_len)
                else:
                    rs = int(torch.randint(T_real - frames_needed + 1, (1,), generator=state.rng))
                    real_window = batch.real_videos[:, rs : rs + frames_needed]
                o_real = flow_to_motion(state.flow_estimator(real_window))

        def disc_update():
            loss_d = gan_d_loss(state.discriminator, o_real, o_gen)
            _check_finite(loss_d, state, "loss_gan_d", batch)
            total = w.gan_d * loss_d
            m["loss_gan_d"] = float(loss_d.detach())
            if not cfg.no_r1r2:
                r1 = r_regularizer(state.discriminator, o_real, w.sigma, state.rng)
                r2 = r_regularizer(state.discriminator, o_gen, w.sigma, state.rng)
                _check_finite(r1, state, "r1", batch)
                _check_finite(r2, state, "r2", batch)
                total = total + w.r1 * r1 + w.r2 * r2
                m["r1"] = float(r1.detach())
                m["r2"] = float(r2.detach())
            # logged total recomputed from the logged parts so the weighting
            # arithmetic is exactly reproducible from the metrics stream
            m["disc_weighted"] = w.gan_d * m["loss_gan_d"] + (
                w.r1 * m["r1"] + w.r2 * m["r2"] if not cfg.no_r1r2 else 0.0
            )
            state.opt_disc.zero_grad(set_to_none=True)
            total.backward()
            m["grad_norm_disc"] = _grad_norm(state.discriminator)
            state.opt_disc.step()

        def gen_update():
            loss_g = gan_g_loss(state.discriminator, o_gen)
            _check_finite(loss_g, state, "loss_gan_g", batch)
            total = w.gan_g * loss_g
            m["loss_gan_g"] = float(loss_g.detach())
            m["gen_gan_weighted"] = w.gan_g * m["loss_gan_g"]
            state.opt_gen.zero_grad(set_to_none=True)
            total.backward()
            m["grad_norm_gen_gan"] = _grad_norm(state.generator)
            if cfg.gan_gen_lr_scale != 1.0:
                for group in state.opt_gen.param_groups:
                    group["lr"] = cfg.lr * cfg.gan_gen_lr_scale
                state.opt_gen.step()
                for group in state.opt_gen.param_groups:
                    group["lr"] = cfg.lr
            else:
                state.opt_gen.step()

        if cfg.update_order == "disc_first":
            disc_update()
            gen_update()
        else:
            gen_update()
            disc_update()

    state.step += 1
    return state, m


def sample_batch(state: TrainState, cfg: TrainConfig, corpus: Corpus, prompts: PromptSet) -> TrainBatch:
    class_ids = torch.tensor(prompts.class_ids(), dtype=torch.long)
    pick = torch.randint(len(class_ids), (cfg.batch_size_gen,), generator=state.rng)
    conds = class_ids[pick]
    real_videos, real_classes = corpus.sample_batch(cfg.batch_size_disc, state.rng)
    return TrainBatch(cond_ids=conds, real_videos=real_videos, real_classes=real_classes)


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(state: TrainState, cfg: TrainConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "step": state.step,
            "config": dataclasses.asdict(cfg),
            "models": {
                "generator": state.generator.state_dict(),
                "teacher": state.teacher.state_dict(),
                "fake_score": state.fake_score.state_dict(),
                "discriminator": state.discriminator.state_dict(),
                "decoder": state.decoder.state_dict(),
            },
            "optimizers": {
                "gen": state.opt_gen.state_dict(),
                "fake": state.opt_fake.state_dict(),
                "disc": state.opt_disc.state_dict(),
            },
            "rng": state.rng.get_state(),
        },
        path,
    )
    return path


def load_checkpoint(path: str | Path) -> tuple[TrainState, TrainConfig]:
    blob = torch.load(Path(path), weights_only=False)
    version = blob.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(
            f"incompatible checkpoint: file has format_version={version}, "
            f"this build expects {CHECKPOINT_VERSION}"
        )
    cfg = dataclass_from_dict(TrainConfig, blob["config"])
    teacher = VelocityNet(cfg.model)
    teacher.load_state_dict(blob["models"]["teacher"])
    decoder = ChunkRecurrentDecoder(cfg.model)
    decoder.load_state_dict(blob["models"]["decoder"])
    state = init_state(cfg, teacher, decoder)
    state.generator.load_state_dict(blob["models"]["generator"])
    state.fake_score.load_state_dict(blob["models"]["fake_score"])
    state.discriminator.load_state_dict(blob["models"]["discriminator"])
    state.opt_gen.load_state_dict(blob["optimizers"]["gen"])
    state.opt_fake.load_state_dict(blob["optimizers"]["fake"])
    state.opt_disc.load_state_dict(blob["optimizers"]["disc"])
    state.rng.set_state(blob["rng"])
    state.step = blob["step"]
    return state, cfg


# ---------------------------------------------------------------------------
# full runs


def write_run_manifest(run_dir: Path, name: str, cfg: TrainConfig) -> None:
    manifest = {
        "name": name,
        "code_version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": dataclasses.asdict(cfg),
        "artifacts": {
            "config": "config.json",
            "metrics": "metrics.jsonl",
            "checkpoints": "checkpoints/",
            "samples": "samples/",
        },
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_training(
    cfg: TrainConfig,
    corpus: Corpus,
    prompts: PromptSet,
    teacher: VelocityNet,
    decoder: ChunkRecurrentDecoder,
    run_dir: str | Path | None = None,
    resume: str | Path | None = None,
    progress: bool = False,
) -> tuple[TrainState, list[dict]]:
    """Warm-up plus full alternation to ``total_steps``; optionally persists
    run artifacts (config, metrics log, checkpoints) under ``run_dir``."""
    if len(corpus) == 0:
        raise ConfigError("dataset is empty")
    if resume is not None:
        state, loaded_cfg = load_checkpoint(resume)
        if dataclasses.asdict(loaded_cfg.model) != dataclasses.asdict(cfg.model):
            raise ConfigError("resume checkpoint was built with a different model config")
        state_cfg = cfg
    else:
        state = init_state(cfg, teacher, decoder)
        state_cfg = cfg

    metrics_file = None
    run_path = None
    if run_dir is not None:
        run_path = Path(run_dir)
        (run_path / "checkpoints").mkdir(parents=True, exist_ok=True)
        (run_path / "samples").mkdir(parents=True, exist_ok=True)
        if resume is None:
            from .common import save_json

            save_json(cfg, run_path / "config.json")
            write_run_manifest(run_path, run_path.name, cfg)
        mode = "a" if resume is not None else "w"
        metrics_file = open(run_path / "metrics.jsonl", mode)

    teacher_hash = param_hash(state.teacher)
    history: list[dict] = []
    try:
        while state.step < cfg.total_steps:
            batch = sample_batch(state, state_cfg, corpus, prompts)
            state, m = train_step(state, state_cfg, batch)
            history.append(m)
            if metrics_file is not None:
                metrics_file.write(json.dumps(m, sort_keys=True) + "\n")
            if state.step % 100 == 0:
                if param_hash(state.teacher) != teacher_hash:
                    raise RuntimeError("teacher parameters changed during training")
            if progress and state.step % 50 == 0:
                print(f"step {state.step}/{cfg.total_steps}", flush=True)
            if run_path is not None and cfg.checkpoint_interval > 0 and state.step % cfg.checkpoint_interval == 0:
                save_checkpoint(state, state_cfg, run_path / "checkpoints" / f"step_{state.step:06d}.pt")
        if param_hash(state.teacher) != teacher_hash:
            raise RuntimeError("teacher parameters changed during training")
        if run_path is not None:
            save_checkpoint(state, state_cfg, run_path / "checkpoints" / "final.pt")
    finally:
        if metrics_file is not None:
            metrics_file.close()
    return state, history


class GeneratorSampler:
    """Deterministic (class_id, seed) -> decoded video sampler around a
    trained generator bundle; the interface the evaluator consumes."""

    def __init__(self, generator: VelocityNet, decoder: ChunkRecurrentDecoder,
                 timesteps: tuple[float, ...], chunks: int):
        self.generator = generator
        self.decoder = decoder
        self.steps = DistilledTimesteps(timesteps)
        self.chunks = chunks

    def __call__(self, class_id: int, seed: int) -> Tensor:
        rng = make_rng(seed * 1_000_003 + class_id * 7919)
        shape = (1, *self.generator.latent_shape(self.chunks))
        with torch.no_grad():
            z = few_step_sample(self.generator, self.steps, int(class_id), shape, rng)
            video = self.decoder.decode(z)[0]
        return video


def oracle_sampler(corpus: Corpus):
    """Sampler that returns real corpus clips of the requested class."""
    by_class: dict[int, list[int]] = {}
    for i in range(len(corpus)):
        by_class.setdefault(corpus.class_id(i), []).append(i)

    def sample(class_id: int, seed: int) -> Tensor:
        pool = by_class.get(int(class_id))
        if not pool:
            raise ConfigError(f"no clips of class {class_id} in corpus")
        return corpus.video(pool[seed % len(pool)])

    return sample
