"""Frozen, differentiable optical-flow estimation plus the conversion of flow
stacks into the discriminator's 3-channel motion representation.

Flow fields are ``(T-1, 2, H, W)`` tensors in pixels/frame: channel 0 is the
horizontal component u (positive = rightward), channel 1 the vertical
component v (positive = downward). ``flow[t]`` maps frame t to frame t+1.
Batched inputs get a leading B dimension throughout.

The reference estimator is an iterative Horn-Schunck style solver run
coarse-to-fine with backward warping between levels. It has no learned
parameters, is differentiable w.r.t. the input pixels, and is pluggable: the
trainer only needs a callable ``video -> flow``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

_AVG_KERNEL = torch.tensor(
    [[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]]
)
_DX_KERNEL = torch.tensor([[0.0, 0.0, 0.0], [-0.5, 0.0, 0.5], [0.0, 0.0, 0.0]])
_DY_KERNEL = torch.tensor([[0.0, -0.5, 0.0], [0.0, 0.0, 0.0], [0.0, 0.5, 0.0]])


@dataclass(frozen=True)
class FlowConfig:
    iterations: int = 50
    smoothness: float = 0.1
    levels: int = 3
    min_level_size: int = 8


def _conv3(x: Tensor, kernel: Tensor) -> Tensor:
    k = kernel.to(x.dtype).to(x.device)[None, None]
    x = F.pad(x[:, None], (1, 1, 1, 1), mode="replicate")
    return F.conv2d(x, k)[:, 0]


def _warp(img: Tensor, flow_u: Tensor, flow_v: Tensor) -> Tensor:
    """Backward-warp img by (u, v): output(p) = img(p + flow(p))."""
    N, H, W = img.shape
    ys, xs = torch.meshgrid(
        torch.arange(H, dtype=img.dtype, device=img.device),
        torch.arange(W, dtype=img.dtype, device=img.device),
        indexing="ij",
    )
    gx = 2.0 * (xs[None] + flow_u) / max(W - 1, 1) - 1.0
    gy = 2.0 * (ys[None] + flow_v) / max(H - 1, 1) - 1.0
    grid = torch.stack([gx, gy], dim=-1)
    return F.grid_sample(
        img[:, None], grid, mode="bilinear", padding_mode="border", align_corners=True
    )[:, 0]


def _hs_level(i1: Tensor, i2: Tensor, iterations: int, alpha: float) -> tuple[Tensor, Tensor]:
    """Classic Horn-Schunck iterations on one pyramid level (batch of pairs)."""
    avg = 0.5 * (i1 + i2)
    ix = _conv3(avg, _DX_KERNEL)
    iy = _conv3(avg, _DY_KERNEL)
    it = i2 - i1
    u = torch.zeros_like(i1)
    v = torch.zeros_like(i1)
    den = alpha * alpha + ix * ix + iy * iy
    for _ in range(iterations):
        u_avg = _conv3(u, _AVG_KERNEL)
        v_avg = _conv3(v, _AVG_KERNEL)
        resid = (ix * u_avg + iy * v_avg + it) / den
        u = u_avg - ix * resid
        v = v_avg - iy * resid
    return u, v


class HornSchunckFlow(torch.nn.Module):
    """Coarse-to-fine Horn-Schunck solver.

    ``calls`` counts forward invocations (used to assert that ablation
    variants really bypass the estimator). The module owns no parameters, so
    the frozen-estimator contract holds trivially.
    """

    def __init__(self, cfg: FlowConfig = FlowConfig()):
        super().__init__()
        self.cfg = cfg
        self.calls = 0

    def forward(self, video: Tensor) -> Tensor:
        self.calls += 1
        squeeze = video.dim() == 4
        if squeeze:
            video = video[None]
        B, T, C, H, W = video.shape
        if T < 2:
            raise ValueError(f"need at least two frames for flow, got T={T}")
        gray = video.mean(dim=2)  # (B, T, H, W)
        i1 = gray[:, :-1].reshape(B * (T - 1), H, W)
        i2 = gray[:, 1:].reshape(B * (T - 1), H, W)

        factors = [2**k for k in range(self.cfg.levels - 1, -1, -1)]
        factors = [f for f in factors if min(H, W) // f >= self.cfg.min_level_size]
        if not factors:
            factors = [1]

        u = v = None
        for f in factors:
            l1 = F.avg_pool2d(i1[:, None], f)[:, 0] if f > 1 else i1
            l2 = F.avg_pool2d(i2[:, None], f)[:, 0] if f > 1 else i2
            if u is None:
                u = torch.zeros_like(l1)
                v = torch.zeros_like(l1)
                l2w = l2
            else:
                scale = l1.shape[-1] / u.shape[-1]
                u = F.interpolate(u[:, None], size=l1.shape[-2:], mode="bilinear", align_corners=True)[:, 0] * scale
                v = F.interpolate(v[:, None], size=l1.shape[-2:], mode="bilinear", align_corners=True)[:, 0] * scale
                l2w = _warp(l2, u, v)
            du, dv = _hs_level(l1, l2w, self.cfg.iterations, self.cfg.smoothness)
            u = u + du
            v = v + dv

        flow = torch.stack([u, v], dim=1).reshape(B, T - 1, 2, H, W)
        return flow[0] if squeeze else flow


def estimate_flow(video: Tensor, estimator: torch.nn.Module | None = None) -> Tensor:
    """Dense flow for each adjacent frame pair of a clip in [0, 1]."""
    if estimator is None:
        estimator = HornSchunckFlow()
    return estimator(video)


def flow_to_motion(flow: Tensor) -> Tensor:
    """Pad a (T-1)-frame flow stack to T frames and append the magnitude channel.

    The last flow field is duplicated; channel 2 is the pointwise L2 norm of
    (u, v). Output shape ``(T, 3, H, W)`` (batched: ``(B, T, 3, H, W)``).
    """
    squeeze = flow.dim() == 4
    if squeeze:
        flow = flow[None]
    padded = torch.cat([flow, flow[:, -1:]], dim=1)
    mag = torch.linalg.vector_norm(padded, dim=2, keepdim=True)
    motion = torch.cat([padded, mag], dim=2)
    return motion[0] if squeeze else motion


def flow_roughness(flow: Tensor) -> float:
    """Mean |second-order temporal difference| of a flow stack.

    The stack is padded by duplicating the last flow field (the motion-tensor
    convention), so clips with as few as 3 frames are measurable.
    """
    padded = torch.cat([flow, flow[-1:]], dim=0)
    if padded.shape[0] < 3:
        raise ValueError("flow roughness needs at least 3 frames of flow")
    return float((padded[2:] - 2 * padded[1:-1] + padded[:-2]).abs().mean())


def interior_crop(x: Tensor, margin: float = 0.1) -> Tensor:
    """Drop a relative margin from the last two (spatial) dims."""
    H, W = x.shape[-2], x.shape[-1]
    mh, mw = int(round(H * margin)), int(round(W * margin))
    return x[..., mh : H - mh, mw : W - mw]


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    lut = np.stack([
        np.stack([v, t, p], -1),
        np.stack([q, v, p], -1),
        np.stack([p, v, t], -1),
        np.stack([p, q, v], -1),
        np.stack([t, p, v], -1),
        np.stack([v, p, q], -1),
    ])
    return np.take_along_axis(lut, i[None, ..., None], axis=0)[0]


def visualize_flow(flow: Tensor) -> list[np.ndarray]:
    """Color-wheel rendering of a flow stack: hue = direction, saturation =
    magnitude normalized by the clip maximum. Zero flow renders white.

    Returns one uint8 (H, W, 3) array per flow frame.
    """
    f = flow.detach().cpu().to(torch.float32).numpy()
    u, v = f[:, 0], f[:, 1]
    mag = np.sqrt(u * u + v * v)
    max_mag = mag.max()
    sat = mag / max_mag if max_mag > 0 else np.zeros_like(mag)
    hue = (np.arctan2(v, u) + np.pi) / (2 * np.pi)
    frames = []
    for k in range(f.shape[0]):
        rgb = _hsv_to_rgb(hue[k], sat[k], np.ones_like(sat[k]))
        frames.append((rgb * 255.0 + 0.5).astype(np.uint8))
    return frames


def write_flow_pngs(flow: Tensor, out_dir: str | Path, clip_id: str) -> list[Path]:
    """Write a flow stack as ``<clip_id>_flow_<frame:04d>.png`` files."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frame in enumerate(visualize_flow(flow)):
        path = out_dir / f"{clip_id}_flow_{k:04d}.png"
        Image.fromarray(frame).save(path)
        paths.append(path)
    return paths
