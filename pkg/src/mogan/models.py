"""Desk-scale neural components: a latent DiT velocity net (used for the
few-step generator, the frozen teacher, and the trainable fake-score net), a
chunk-recurrent pixel decoder, and the fixed pooling encoder that defines the
latent space.

Latent sequences are ``(K, c, h, w)`` (or batched ``(B, K, c, h, w)``): K
chunks, each decoding to ``frames_per_chunk`` pixel frames.
"""
from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

# Fixed affine applied after pooling so latents live on a roughly unit scale.
ENCODER_SHIFT = 0.5
ENCODER_SCALE = 4.0


@dataclass(frozen=True)
class ModelConfig:
    """Sizes for every toy network. Defaults keep a full forward pass in the
    low-millisecond range on one CPU core."""

    latent_channels: int = 4
    latent_size: int = 8
    frames_per_chunk: int = 4
    frame_size: int = 32
    num_classes: int = 8
    width: int = 128
    depth: int = 4
    heads: int = 4
    patch: int = 4
    max_chunks: int = 32
    decoder_hidden: int = 16
    decoder_width: int = 48

    def __post_init__(self):
        if self.latent_channels != self.frames_per_chunk:
            # channel i of a latent chunk is frame i of that chunk
            raise ValueError(
                f"latent_channels ({self.latent_channels}) must equal "
                f"frames_per_chunk ({self.frames_per_chunk})"
            )


def timestep_embedding(t: Tensor, dim: int, max_period: float = 10_000.0) -> Tensor:
    """Sinusoidal embedding of (B,) timesteps in [0, 1]."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=t.dtype, device=t.device) / half
    )
    args = t[:, None] * freqs[None] * 1000.0
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class DiTBlock(nn.Module):
    """Transformer block with adaLN-zero conditioning."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width, elementwise_affine=False)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width, elementwise_affine=False)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.SiLU(), nn.Linear(4 * width, width)
        )
        self.ada = nn.Linear(width, 6 * width)
        nn.init.zeros_(self.ada.weight)
        nn.init.zeros_(self.ada.bias)

    def forward(self, x: Tensor, cvec: Tensor) -> Tensor:
        shift1, scale1, gate1, shift2, scale2, gate2 = self.ada(cvec)[:, None].chunk(6, dim=-1)
        h = self.norm1(x) * (1 + scale1) + shift1
        attn_out, _ = self.attn(h, h, h, need_weights=False)
        x = x + gate1 * attn_out
        h = self.norm2(x) * (1 + scale2) + shift2
        return x + gate2 * self.mlp(h)


class VelocityNet(nn.Module):
    """Latent-space DiT predicting a velocity field of the input's shape.

    Tokens are spatial patches per chunk; chunk index and patch position get
    separate learned embeddings so the chunk count may vary at call time (up
    to ``max_chunks``). The final projection is zero-initialized, so a fresh
    net predicts exactly zero.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.latent_size % cfg.patch != 0:
            raise ValueError("latent_size must be divisible by patch")
        self.cfg = cfg
        self.grid = cfg.latent_size // cfg.patch
        self.tokens_per_chunk = self.grid * self.grid
        w = cfg.width
        self.patch_in = nn.Conv2d(cfg.latent_channels, w, cfg.patch, stride=cfg.patch)
        self.pos_emb = nn.Parameter(torch.zeros(1, self.tokens_per_chunk, w))
        self.chunk_emb = nn.Parameter(torch.zeros(cfg.max_chunks, w))
        nn.init.normal_(self.pos_emb, std=0.02)
        nn.init.normal_(self.chunk_emb, std=0.02)
        self.t_mlp = nn.Sequential(nn.Linear(w, w), nn.SiLU(), nn.Linear(w, w))
        self.class_emb = nn.Embedding(cfg.num_classes, w)
        self.blocks = nn.ModuleList(DiTBlock(w, cfg.heads) for _ in range(cfg.depth))
        self.norm_out = nn.LayerNorm(w, elementwise_affine=False)
        self.ada_out = nn.Linear(w, 2 * w)
        self.proj_out = nn.Linear(w, cfg.latent_channels * cfg.patch * cfg.patch)
        nn.init.zeros_(self.ada_out.weight)
        nn.init.zeros_(self.ada_out.bias)
        nn.init.zeros_(self.proj_out.weight)
        nn.init.zeros_(self.proj_out.bias)

    def latent_shape(self, chunks: int) -> tuple[int, int, int, int]:
        c = self.cfg
        return (chunks, c.latent_channels, c.latent_size, c.latent_size)

    def forward(self, z: Tensor, t, cond: Tensor) -> Tensor:
        if not torch.isfinite(z).all():
            raise ValueError("non-finite values in latent input")
        squeeze = z.dim() == 4
        if squeeze:
            z = z[None]
        B, K, c, h, w_ = z.shape
        if K > self.cfg.max_chunks:
            raise ValueError(f"chunk count {K} exceeds max_chunks {self.cfg.max_chunks}")
        if not torch.is_tensor(t):
            t = torch.full((B,), float(t), dtype=z.dtype, device=z.device)
        elif t.dim() == 0:
            t = t[None].expand(B).to(z.dtype)
        if not torch.is_tensor(cond):
            cond = torch.full((B,), int(cond), dtype=torch.long, device=z.device)
        elif cond.dim() == 0:
            cond = cond[None].expand(B)

        x = self.patch_in(z.reshape(B * K, c, h, w_))
        x = x.flatten(2).transpose(1, 2)  # (B*K, tokens_per_chunk, width)
        x = x + self.pos_emb
        x = x.reshape(B, K * self.tokens_per_chunk, -1)
        x = x + self.chunk_emb[:K].repeat_interleave(self.tokens_per_chunk, dim=0)[None]

        cvec = self.t_mlp(timestep_embedding(t, self.cfg.width)) + self.class_emb(cond)
        for block in self.blocks:
            x = block(x, cvec)
        shift, scale = self.ada_out(cvec)[:, None].chunk(2, dim=-1)
        x = self.norm_out(x) * (1 + scale) + shift
        x = self.proj_out(x)

        p = self.cfg.patch
        x = x.reshape(B, K, self.grid, self.grid, c, p, p)
        x = x.permute(0, 1, 4, 2, 5, 3, 6).reshape(B, K, c, h, w_)
        return x[0] if squeeze else x


def forward_generator(net: VelocityNet, z_t: Tensor, t, cond) -> Tensor:
    """Velocity prediction for a (possibly batched) latent sequence."""
    return net(z_t, t, cond)


class ChunkRecurrentDecoder(nn.Module):
    """Maps latent chunks to pixel frames while carrying a hidden state.

    Decoding is causal: the frames for chunk k depend only on chunks <= k and
    the initial hidden state. ``tracked_steps`` counts how many decode steps
    of the most recent :meth:`decode_window` call ran with gradient tracking;
    it is the memory-footprint proxy for the truncated-backprop window.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c, s = cfg.latent_channels, cfg.latent_size
        hid, w = cfg.decoder_hidden, cfg.decoder_width
        self.h0 = nn.Parameter(torch.zeros(hid, s, s))
        self.state_net = nn.Sequential(
            nn.Conv2d(c + hid, w, 3, padding=1), nn.SiLU(), nn.Conv2d(w, 2 * hid, 3, padding=1)
        )
        up_steps = int(math.log2(cfg.frame_size // s))
        assert 2**up_steps * s == cfg.frame_size, "frame_size must be latent_size * 2^n"
        layers: list[nn.Module] = [nn.Conv2d(c + hid, w, 3, padding=1), nn.SiLU()]
        for _ in range(up_steps):
            layers += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(w, w, 3, padding=1), nn.SiLU()]
        layers += [nn.Conv2d(w, 3 * cfg.frames_per_chunk, 3, padding=1)]
        self.frame_net = nn.Sequential(*layers)
        self.tracked_steps = 0

    def initial_state(self, batch: int) -> Tensor:
        return self.h0[None].expand(batch, *self.h0.shape)

    def _advance(self, chunk: Tensor, state: Tensor) -> Tensor:
        gate, cand = self.state_net(torch.cat([chunk, state], dim=1)).chunk(2, dim=1)
        gate = torch.sigmoid(gate)
        return (1 - gate) * state + gate * torch.tanh(cand)

    def _emit(self, chunk: Tensor, state: Tensor) -> Tensor:
        B = chunk.shape[0]
        out = self.frame_net(torch.cat([chunk, state], dim=1))
        out = torch.sigmoid(out)
        f = self.cfg.frames_per_chunk
        return out.reshape(B, f, 3, self.cfg.frame_size, self.cfg.frame_size)

    def decode_window(self, latents: Tensor, window_start: int, window_len: int) -> Tensor:
        """Decode chunks [window_start, window_start + window_len) to frames.

        The hidden state is rolled through earlier chunks without gradient
        tracking and detached at the window boundary; chunks after the window
        are never touched. Returns ``(window_len * frames_per_chunk)`` frames.
        """
        squeeze = latents.dim() == 4
        if squeeze:
            latents = latents[None]
        B, K = latents.shape[:2]
        if window_start < 0 or window_len < 1 or window_start + window_len > K:
            raise ValueError(
                f"window [{window_start}, {window_start + window_len}) out of range for {K} chunks"
            )
        self.tracked_steps = 0
        with torch.no_grad():
            state = self.initial_state(B)
            for k in range(window_start):
                state = self._advance(latents[:, k], state)
        state = state.detach()
        blocks = []
        for k in range(window_start, window_start + window_len):
            state = self._advance(latents[:, k], state)
            blocks.append(self._emit(latents[:, k], state))
            if torch.is_grad_enabled():
                self.tracked_steps += 1
        video = torch.cat(blocks, dim=1)
        return video[0] if squeeze else video

    def decode(self, latents: Tensor) -> Tensor:
        """Full decode of every chunk."""
        K = latents.shape[0] if latents.dim() == 4 else latents.shape[1]
        return self.decode_window(latents, 0, K)

    def forward(self, latents: Tensor) -> Tensor:
        return self.decode(latents)


def encode_video(video: Tensor, cfg: ModelConfig) -> Tensor:
    """Fixed (parameter-free) encoder defining the latent space.

    Frames are converted to grayscale, grouped into chunks of
    ``frames_per_chunk``, average-pooled to the latent grid, and affinely
    rescaled. Channel i of a latent chunk is frame i of that chunk.
    """
    squeeze = video.dim() == 4
    if squeeze:
        video = video[None]
    B, T, C, H, W = video.shape
    f = cfg.frames_per_chunk
    if T % f != 0:
        raise ValueError(f"frame count {T} not divisible by frames_per_chunk {f}")
    gray = video.mean(dim=2)  # (B, T, H, W)
    pooled = F.adaptive_avg_pool2d(gray, cfg.latent_size)
    z = (pooled - ENCODER_SHIFT) * ENCODER_SCALE
    z = z.reshape(B, T // f, f, cfg.latent_size, cfg.latent_size)
    return z[0] if squeeze else z


def clone_frozen(net: nn.Module) -> nn.Module:
    """Deep-copy a net and freeze the copy (teacher construction)."""
    frozen = copy.deepcopy(net)
    for p in frozen.parameters():
        p.requires_grad_(False)
    frozen.eval()
    return frozen


def param_hash(net: nn.Module) -> str:
    """Order-stable SHA-256 over all parameter tensors."""
    h = hashlib.sha256()
    for name, p in sorted(net.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
