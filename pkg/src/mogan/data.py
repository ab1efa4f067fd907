"""Synthetic motion corpus: textured sprites on textured backgrounds with
exact analytic flow, controlled degradations for tests, prompt sets, and
lossless on-disk persistence.

Sprites live on a torus (they wrap around frame borders), so the analytic
flow is valid for every frame pair. Videos are quantized to uint8 at corpus
level, which makes storage lossless and regeneration bit-identical.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .common import ConfigError, make_rng

TRAJECTORIES = ("linear", "circular", "bounce")

# Condition classes are trajectory families; the per-clip speed is drawn from
# the corpus speed distribution, not from the class.
CLASS_FAMILIES = (
    ("linear-right", "linear", (1.0, 0.0)),
    ("linear-down", "linear", (0.0, 1.0)),
    ("linear-diagonal", "linear", (0.7071, 0.7071)),
    ("linear-antidiagonal", "linear", (0.7071, -0.7071)),
    ("orbit-ccw", "circular", (1.0, 0.0)),
    ("orbit-cw", "circular", (-1.0, 0.0)),
    ("bounce-diagonal", "bounce", (0.7071, 0.7071)),
    ("two-sprites", "linear", (1.0, 0.0)),
)


@dataclass(frozen=True)
class SyntheticClipSpec:
    sprites: int = 1
    velocity: tuple[float, float] = (2.0, 0.0)
    trajectory: str = "linear"
    texture_seed: int = 0
    jitter: float = 0.0
    frames: int = 16
    height: int = 32
    width: int = 32
    radius: float = 6.0
    orbit_radius: float = 8.0
    angular_step: float = 0.25
    edge: float = 1.5
    sprite_fill: float | None = None  # solid intensity; textured when None

    def __post_init__(self):
        if self.trajectory not in TRAJECTORIES:
            raise ConfigError(f"unknown trajectory {self.trajectory!r}; expected one of {TRAJECTORIES}")
        if self.frames < 2:
            raise ConfigError("need at least 2 frames")
        if not all(math.isfinite(v) for v in self.velocity):
            raise ConfigError(f"velocity must be finite, got {self.velocity}")
        if 2 * self.radius >= min(self.height, self.width):
            raise ConfigError(
                f"sprite diameter {2 * self.radius} does not fit in {self.height}x{self.width} frame"
            )


def smooth_texture(rng: torch.Generator, h: int, w: int, blur: int = 2,
                   lo: float = 0.0, hi: float = 1.0) -> Tensor:
    """Tileable smooth noise in [lo, hi] (circular blur keeps it toroidal)."""
    x = torch.randn(1, 1, h, w, generator=rng)
    k = torch.ones(1, 1, 2 * blur + 1, 2 * blur + 1) / (2 * blur + 1) ** 2
    x = F.conv2d(F.pad(x, (blur,) * 4, mode="circular"), k)[0, 0]
    x = (x - x.min()) / (x.max() - x.min() + 1e-12)
    return lo + (hi - lo) * x


def _sprite_positions(spec: SyntheticClipSpec, rng: torch.Generator, sprite_idx: int) -> Tensor:
    """(T, 2) float center positions (x, y) for one sprite."""
    T, H, W = spec.frames, spec.height, spec.width
    vx, vy = spec.velocity
    if sprite_idx % 2 == 1:
        vx, vy = -vx, -vy  # extra sprites move opposite
    p0 = torch.rand(2, generator=rng) * torch.tensor([W, H], dtype=torch.float32)
    if spec.trajectory == "linear":
        steps = torch.arange(T, dtype=torch.float32)[:, None]
        return p0[None] + steps * torch.tensor([vx, vy])
    if spec.trajectory == "circular":
        speed = math.hypot(vx, vy)
        omega = spec.angular_step * (1.0 if vx >= 0 else -1.0)
        if speed > 0:
            omega = math.copysign(speed / spec.orbit_radius, omega)
        center = torch.tensor([W / 2, H / 2]) + (torch.rand(2, generator=rng) - 0.5) * 4
        theta0 = float(torch.rand((), generator=rng)) * 2 * math.pi
        angles = theta0 + omega * torch.arange(T, dtype=torch.float32)
        return center[None] + spec.orbit_radius * torch.stack(
            [torch.cos(angles), torch.sin(angles)], dim=1
        )
    # bounce: reflect the velocity at a margin of one radius
    pos = [p0.clone()]
    vel = torch.tensor([vx, vy])
    margin = spec.radius
    p = p0.clone().clamp(min=margin, max=min(W, H) - margin)
    pos[0] = p.clone()
    for _ in range(T - 1):
        p = p + vel
        for d, hi in ((0, W), (1, H)):
            if p[d] < margin:
                p[d] = 2 * margin - p[d]
                vel[d] = -vel[d]
            elif p[d] > hi - margin:
                p[d] = 2 * (hi - margin) - p[d]
                vel[d] = -vel[d]
        pos.append(p.clone())
    return torch.stack(pos)


def generate_clip(spec: SyntheticClipSpec, seed: int) -> tuple[Tensor, Tensor]:
    """Render a clip and its exact flow.

    Returns ``(video, flow)`` with video (T, 3, H, W) in [0, 1] and flow
    (T-1, 2, H, W) in pixels/frame: the sprite displacement inside each
    sprite's mask, zero on the static background. The flow is exact only for
    ``jitter == 0`` (degraded clips are test fixtures, not flow ground truth).
    """
    rng = make_rng(seed)
    T, H, W = spec.frames, spec.height, spec.width
    bg = smooth_texture(rng, H, W, lo=0.15, hi=0.5)
    frames = bg[None].expand(T, H, W).clone()
    flow = torch.zeros(T - 1, 2, H, W)

    ys, xs = torch.meshgrid(
        torch.arange(H, dtype=torch.float32), torch.arange(W, dtype=torch.float32), indexing="ij"
    )
    tex_size = int(2 * spec.radius + 3)
    for s in range(spec.sprites):
        if spec.sprite_fill is None:
            tex = smooth_texture(rng, tex_size, tex_size, blur=1, lo=0.55, hi=0.95)
        else:
            tex = torch.full((tex_size, tex_size), float(spec.sprite_fill))
        pos = _sprite_positions(spec, rng, s)
        if spec.jitter > 0:
            pos = pos + (torch.rand(pos.shape, generator=rng) - 0.5) * 2 * spec.jitter
        # toroidal offsets from the sprite center, (T, H, W)
        dx = (xs[None] - pos[:, 0, None, None] + W / 2) % W - W / 2
        dy = (ys[None] - pos[:, 1, None, None] + H / 2) % H - H / 2
        dist = torch.sqrt(dx * dx + dy * dy)
        alpha = ((spec.radius - dist) / spec.edge).clamp(0, 1)
        gx = (dx + spec.radius + 1) / (tex_size - 1) * 2 - 1
        gy = (dy + spec.radius + 1) / (tex_size - 1) * 2 - 1
        grid = torch.stack([gx, gy], dim=-1)
        val = F.grid_sample(
            tex[None, None].expand(T, 1, tex_size, tex_size),
            grid, mode="bilinear", padding_mode="border", align_corners=True,
        )[:, 0]
        frames = frames * (1 - alpha) + val * alpha
        disp = pos[1:] - pos[:-1]  # (T-1, 2)
        mask = alpha[:-1] > 0.5
        for ch in range(2):
            flow[:, ch] = torch.where(mask, disp[:, ch, None, None].expand_as(flow[:, ch]), flow[:, ch])

    video = frames[:, None].expand(T, 3, H, W).clone()
    return video, flow


def translation_clip(seed: int, velocity: tuple[int, int] = (2, 1), frames: int = 6,
                     height: int = 32, width: int = 32) -> tuple[Tensor, Tensor]:
    """Whole-frame integer translation of a tileable texture (exact flow)."""
    tex = smooth_texture(make_rng(seed), height, width, lo=0.2, hi=0.8)
    vx, vy = int(velocity[0]), int(velocity[1])
    video = torch.stack(
        [torch.roll(tex, shifts=(t * vy, t * vx), dims=(0, 1)) for t in range(frames)]
    )[:, None].expand(frames, 3, height, width).clone()
    flow = torch.zeros(frames - 1, 2, height, width)
    flow[:, 0] = vx
    flow[:, 1] = vy
    return video, flow


def make_degraded(clip: Tensor, mode: str, rng: torch.Generator | None = None,
                  amplitude: int = 3) -> Tensor:
    """Known-bad motion fixtures: frozen, camera-shaken, or ghosted clips."""
    T = clip.shape[0]
    if mode == "static":
        return clip[0:1].expand_as(clip).clone()
    if mode == "jitter":
        if rng is None:
            rng = make_rng(0)
        out = []
        for t in range(T):
            offs = torch.randint(-amplitude, amplitude + 1, (2,), generator=rng)
            out.append(torch.roll(clip[t], shifts=(int(offs[0]), int(offs[1])), dims=(-2, -1)))
        return torch.stack(out)
    if mode == "ghost":
        shifted = torch.cat([clip[:2], clip[:-2]], dim=0)
        return 0.5 * clip + 0.5 * shifted
    raise ConfigError(f"unknown degradation mode {mode!r}; expected static|jitter|ghost")


@dataclass(frozen=True)
class Prompt:
    id: str
    class_id: int
    label: str


@dataclass(frozen=True)
class PromptSet:
    prompts: tuple[Prompt, ...]

    def __post_init__(self):
        if not self.prompts:
            raise ConfigError("prompt set must be non-empty")
        ids = [p.id for p in self.prompts]
        if len(set(ids)) != len(ids):
            raise ConfigError("prompt ids must be unique")

    def class_ids(self) -> list[int]:
        return [p.class_id for p in self.prompts]

    def __len__(self) -> int:
        return len(self.prompts)


def default_prompt_set(num_classes: int = 8, prefix: str = "train") -> PromptSet:
    prompts = tuple(
        Prompt(id=f"{prefix}/{k}", class_id=k, label=CLASS_FAMILIES[k % len(CLASS_FAMILIES)][0])
        for k in range(num_classes)
    )
    return PromptSet(prompts)


@dataclass(frozen=True)
class CorpusConfig:
    """Recipe for a reproducible clip pool.

    ``slow_fraction`` of clips draw their speed from ``slow_range`` instead of
    ``speed_range``; the motion-rich pool the discriminator trains on keeps it
    at zero, while pretraining corpora mix in slow clips. ``families`` maps
    class ids to (label, trajectory, direction) triples and may be overridden
    in dataset configs.
    """

    clips: int = 2000
    eval_clips: int = 64
    frames: int = 16
    size: int = 32
    classes: int = 8
    speed_range: tuple[float, float] = (2.0, 3.5)
    slow_fraction: float = 0.0
    slow_range: tuple[float, float] = (0.0, 0.6)
    radius: float = 7.0
    seed: int = 0
    families: tuple = CLASS_FAMILIES

    def __post_init__(self):
        if self.clips < 1:
            raise ConfigError("corpus needs at least one clip")
        if not 0 <= self.slow_fraction <= 1:
            raise ConfigError("slow_fraction must lie in [0, 1]")
        if not 1 <= self.classes <= len(self.families):
            raise ConfigError(f"classes must lie in [1, {len(self.families)}]")
        for fam in self.families:
            label, trajectory, _ = fam
            if trajectory not in TRAJECTORIES:
                raise ConfigError(
                    f"families[{label!r}].trajectory: unknown trajectory {trajectory!r}; "
                    f"expected one of {TRAJECTORIES}"
                )


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    class_id: int
    seed: int
    spec: SyntheticClipSpec


def _spec_for(cfg: CorpusConfig, class_id: int, rng: torch.Generator) -> SyntheticClipSpec:
    label, trajectory, direction = cfg.families[class_id]
    if float(torch.rand((), generator=rng)) < cfg.slow_fraction:
        lo, hi = cfg.slow_range
    else:
        lo, hi = cfg.speed_range
    speed = lo + (hi - lo) * float(torch.rand((), generator=rng))
    velocity = (direction[0] * speed, direction[1] * speed)
    sprites = 2 if label == "two-sprites" else 1
    orbit = max(cfg.size / 4.0, cfg.radius)
    return SyntheticClipSpec(
        sprites=sprites, velocity=velocity, trajectory=trajectory,
        texture_seed=0, frames=cfg.frames, height=cfg.size, width=cfg.size,
        radius=cfg.radius, orbit_radius=orbit,
    )


class Corpus:
    """In-memory clip pool; videos stored as uint8 (lossless, compact)."""

    def __init__(self, records: list[ClipRecord], videos: list[Tensor]):
        if len(records) != len(videos):
            raise ValueError("records/videos length mismatch")
        self.records = records
        self._videos = videos

    def __len__(self) -> int:
        return len(self.records)

    def video(self, i: int) -> Tensor:
        return self._videos[i].to(torch.float32) / 255.0

    def class_id(self, i: int) -> int:
        return self.records[i].class_id

    def sample_batch(self, batch: int, rng: torch.Generator) -> tuple[Tensor, Tensor]:
        idx = torch.randint(len(self), (batch,), generator=rng)
        videos = torch.stack([self.video(int(i)) for i in idx])
        classes = torch.tensor([self.class_id(int(i)) for i in idx], dtype=torch.long)
        return videos, classes

    def mean_second_difference(self, i: int) -> float:
        v = self.video(i)
        return float((v[2:] - 2 * v[1:-1] + v[:-2]).abs().mean())

    def stack(self, indices) -> Tensor:
        return torch.stack([self.video(int(i)) for i in indices])


def _quantize(video: Tensor) -> Tensor:
    return (video.clamp(0, 1) * 255.0).round().to(torch.uint8)


def build_corpus(cfg: CorpusConfig, split: str = "train") -> Corpus:
    """Deterministically render a clip pool. Clip ids are namespaced by split,
    so train/eval pools never share ids."""
    count = cfg.clips if split == "train" else cfg.eval_clips
    split_offset = 0 if split == "train" else 1_000_000
    records, videos = [], []
    for i in range(count):
        seed = cfg.seed * 10_000_019 + split_offset + i
        rng = make_rng(seed ^ 0x5EED)
        class_id = i % cfg.classes
        spec = _spec_for(cfg, class_id, rng)
        video, _ = generate_clip(spec, seed)
        records.append(ClipRecord(clip_id=f"{split}/{i:05d}", class_id=class_id, seed=seed, spec=spec))
        videos.append(_quantize(video))
    return Corpus(records, videos)


def smoothness_calibration(corpus: Corpus, quantile: float = 0.95,
                           max_clips: int = 256) -> float:
    """Flow-roughness scale at which smoothness bottoms out: the given
    percentile of per-clip flow roughness over jitter-degraded copies of the
    corpus ("as rough as camera shake")."""
    from .flow import HornSchunckFlow, flow_roughness

    est = HornSchunckFlow()
    n = min(len(corpus), max_clips)
    vals = []
    for i in range(n):
        jittered = make_degraded(corpus.video(i), "jitter", make_rng(corpus.records[i].seed))
        with torch.no_grad():
            vals.append(flow_roughness(est(jittered)))
    return float(torch.quantile(torch.tensor(vals), quantile))


def save_corpus(out_dir: str | Path, cfg: CorpusConfig, train: Corpus, eval_: Corpus,
                calibration: float) -> Path:
    """Persist both splits plus a manifest. Layout:
    ``<out>/{train,eval}/clip_<id>/frames.npz`` and ``<out>/manifest.json``."""
    out = Path(out_dir)
    manifest = {
        "format_version": 1,
        "config": _cfg_dict(cfg),
        "smoothness_calibration": calibration,
        "clips": [],
    }
    for split, corpus in (("train", train), ("eval", eval_)):
        for i, rec in enumerate(corpus.records):
            clip_dir = out / split / f"clip_{i:05d}"
            clip_dir.mkdir(parents=True, exist_ok=True)
            np.savez_compressed(clip_dir / "frames.npz", frames=corpus._videos[i].numpy())
            manifest["clips"].append({
                "clip_id": rec.clip_id, "split": split, "class_id": rec.class_id,
                "seed": rec.seed, "spec": _cfg_dict(rec.spec), "path": str(clip_dir / "frames.npz"),
            })
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out / "manifest.json"


def load_corpus(root: str | Path) -> tuple[Corpus, Corpus, dict]:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no dataset manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    splits: dict[str, tuple[list, list]] = {"train": ([], []), "eval": ([], [])}
    for entry in manifest["clips"]:
        records, videos = splits[entry["split"]]
        spec = SyntheticClipSpec(**{k: tuple(v) if isinstance(v, list) else v
                                    for k, v in entry["spec"].items()})
        records.append(ClipRecord(entry["clip_id"], entry["class_id"], entry["seed"], spec))
        videos.append(torch.from_numpy(np.load(entry["path"])["frames"]))
    train = Corpus(*splits["train"])
    eval_ = Corpus(*splits["eval"])
    return train, eval_, manifest


def _cfg_dict(obj) -> dict:
    import dataclasses

    return {k: list(v) if isinstance(v, tuple) else v
            for k, v in dataclasses.asdict(obj).items()}
