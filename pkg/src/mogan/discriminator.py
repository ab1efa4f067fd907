"""DiT-based motion discriminator: consumes a motion tensor (or, for the
video-space ablation, raw latent chunks) and emits one scalar logit per clip.

The diffusion-timestep input is pinned to 0 and the condition to a single
learned "good motion" embedding at construction time; neither is reachable
through the public forward interface, so the discriminator is a deterministic
function of its input and parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
from torch import Tensor

from .models import DiTBlock, timestep_embedding


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 3
    frame_size: int = 32
    patch: int = 8
    width: int = 128
    depth: int = 6
    heads: int = 4
    head_depths: tuple[int, ...] = (3, 5, 6)
    head_width: int = 64
    max_frames: int = 96

    def __post_init__(self):
        if self.frame_size % self.patch != 0:
            raise ValueError("frame_size must be divisible by patch")
        for d in self.head_depths:
            if not (1 <= d <= self.depth):
                raise ValueError(f"head depth {d} outside [1, {self.depth}]")


class _Head(nn.Module):
    """Cross-attention of one learned auxiliary token over the token sequence,
    followed by a small MLP. The output projection is zero-initialized."""

    def __init__(self, width: int, head_width: int):
        super().__init__()
        self.aux = nn.Parameter(torch.randn(width) * 0.02)
        self.q = nn.Linear(width, width)
        self.k = nn.Linear(width, width)
        self.v = nn.Linear(width, width)
        self.mlp = nn.Sequential(nn.Linear(width, head_width), nn.SiLU(), nn.Linear(head_width, head_width))

    def forward(self, tokens: Tensor) -> Tensor:
        B, N, W = tokens.shape
        q = self.q(self.aux)[None, None]  # (1, 1, W)
        k = self.k(tokens)
        v = self.v(tokens)
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(W), dim=-1)
        pooled = (attn @ v)[:, 0]
        return self.mlp(pooled)


class MotionDiscriminator(nn.Module):
    """Truncated DiT backbone with multi-scale prediction heads.

    Heads hang off the blocks listed in ``head_depths`` (1-indexed); their
    outputs are concatenated and fused into a single scalar logit.
    """

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.cfg = cfg
        w = cfg.width
        self.grid = cfg.frame_size // cfg.patch
        self.tokens_per_frame = self.grid * self.grid
        self.patch_in = nn.Conv2d(cfg.in_channels, w, cfg.patch, stride=cfg.patch)
        self.pos_emb = nn.Parameter(torch.zeros(1, self.tokens_per_frame, w))
        self.frame_emb = nn.Parameter(torch.zeros(cfg.max_frames, w))
        nn.init.normal_(self.pos_emb, std=0.02)
        nn.init.normal_(self.frame_emb, std=0.02)
        self.good_motion_token = nn.Parameter(torch.randn(w) * 0.02)
        self.t_mlp = nn.Sequential(nn.Linear(w, w), nn.SiLU(), nn.Linear(w, w))
        self.blocks = nn.ModuleList(DiTBlock(w, cfg.heads) for _ in range(cfg.depth))
        self.heads = nn.ModuleDict(
            {str(d): _Head(w, cfg.head_width) for d in cfg.head_depths}
        )
        fused = cfg.head_width * len(cfg.head_depths)
        self.fusion = nn.Sequential(nn.Linear(fused, cfg.head_width), nn.SiLU(), nn.Linear(cfg.head_width, 1))
        # Zero-init only the fusion output: the logit starts at exactly 0 while
        # its gradient still separates real from generated inputs.
        nn.init.zeros_(self.fusion[-1].weight)
        nn.init.zeros_(self.fusion[-1].bias)

    def _tokens(self, motion: Tensor) -> Tensor:
        B, T, C, H, W = motion.shape
        if T > self.cfg.max_frames:
            raise ValueError(f"frame count {T} exceeds max_frames {self.cfg.max_frames}")
        x = self.patch_in(motion.reshape(B * T, C, H, W))
        x = x.flatten(2).transpose(1, 2) + self.pos_emb
        x = x.reshape(B, T * self.tokens_per_frame, -1)
        return x + self.frame_emb[:T].repeat_interleave(self.tokens_per_frame, dim=0)[None]

    def _cvec(self, B: int, dtype, device) -> Tensor:
        t0 = torch.zeros(B, dtype=dtype, device=device)  # pinned timestep
        return self.t_mlp(timestep_embedding(t0, self.cfg.width)) + self.good_motion_token

    def head_outputs(self, motion: Tensor) -> list[Tensor]:
        """Per-depth head feature vectors, one per entry of head_depths."""
        squeeze = motion.dim() == 4
        if squeeze:
            motion = motion[None]
        x = self._tokens(motion)
        cvec = self._cvec(motion.shape[0], motion.dtype, motion.device)
        outs = []
        for i, block in enumerate(self.blocks, start=1):
            x = block(x, cvec)
            if i in self.cfg.head_depths:
                outs.append(self.heads[str(i)](x))
        if squeeze:
            outs = [o[0] for o in outs]
        return outs

    def forward(self, motion: Tensor) -> Tensor:
        """Scalar logit per clip; input (T, C, H, W) or (B, T, C, H, W)."""
        if not torch.isfinite(motion).all():
            raise ValueError("non-finite values in discriminator input")
        squeeze = motion.dim() == 4
        if squeeze:
            motion = motion[None]
        fused = torch.cat(self.head_outputs(motion), dim=-1)
        logits = self.fusion(fused)[:, 0]
        return logits[0] if squeeze else logits


def discriminate(disc: MotionDiscriminator, motion: Tensor) -> Tensor:
    return disc(motion)
