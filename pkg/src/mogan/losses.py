"""Training objectives: logistic GAN losses in motion space, finite-perturbation
discriminator regularizers, the distribution-matching generator surrogate, and
the flow-matching loss that keeps the fake-score net aligned with the
generator.

Gradient isolation is enforced structurally: discriminator-side losses detach
their inputs, the generator-side GAN loss freezes the discriminator's
parameters for the duration of the forward pass, and the distribution-matching
target is built entirely under ``no_grad``.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn as nn
from torch import Tensor

from .common import ConfigError
from .fm import noise_to_level, velocity_to_score

VelocityFn = Callable[[Tensor, float], Tensor]


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined objective.

    ``gan_g``/``gan_d`` scale the adversarial generator/discriminator terms,
    ``r1``/``r2`` the perturbation regularizers on real/generated inputs with
    perturbation scale ``sigma``, and ``dmd`` the distribution-matching
    generator term.
    """

    gan_g: float = 0.5
    gan_d: float = 0.5
    r1: float = 0.3
    r2: float = 0.3
    sigma: float = 0.01
    dmd: float = 1.0

    def __post_init__(self):
        for name in ("gan_g", "gan_d", "r1", "r2", "dmd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")
        if (self.r1 > 0 or self.r2 > 0) and self.sigma <= 0:
            raise ConfigError("sigma must be > 0 when r1/r2 are enabled")


@contextmanager
def frozen(module: nn.Module):
    """Temporarily block gradient accumulation into a module's parameters."""
    states = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield module
    finally:
        for p, s in zip(module.parameters(), states):
            p.requires_grad_(s)


def softplus_g(x):
    """Numerically stable ``log(1 + exp(x))``; accepts floats or tensors."""
    if not torch.is_tensor(x):
        x = torch.tensor(float(x), dtype=torch.float64)
    return torch.clamp(x, min=0) + torch.log1p(torch.exp(-torch.abs(x)))


def gan_d_loss(disc: nn.Module, motion_real: Tensor, motion_gen: Tensor) -> Tensor:
    """Logistic discriminator loss ``g(-D(real)) + g(D(gen))``.

    Both inputs are detached; the gradient reaches only the discriminator.
    """
    logits_real = disc(motion_real.detach())
    logits_gen = disc(motion_gen.detach())
    return softplus_g(-logits_real).mean() + softplus_g(logits_gen).mean()


def gan_g_loss(disc: nn.Module, motion_gen: Tensor) -> Tensor:
    """Logistic generator loss ``g(-D(gen))`` with discriminator parameters
    blocked; the gradient flows back through the full motion chain."""
    assert not torch.is_grad_enabled() or motion_gen.requires_grad, (
        "generator gradient chain is detached: motion_gen does not require grad"
    )
    with frozen(disc):
        logits = disc(motion_gen)
    return softplus_g(-logits).mean()


def r_regularizer(disc: nn.Module, motion: Tensor, sigma: float, rng: torch.Generator) -> Tensor:
    """Squared logit change under an additive Gaussian perturbation of scale
    ``sigma``. Serves both the real-input and generated-input regularizers;
    the input is treated as a constant."""
    if sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    o = motion.detach()
    eps = torch.randn(o.shape, generator=rng, dtype=o.dtype, device=o.device)
    d0 = disc(o)
    d1 = disc(o + sigma * eps)
    return ((d0 - d1) ** 2).mean()


def dmd_generator_loss(
    v_real: VelocityFn,
    v_fake: VelocityFn,
    z0_hat: Tensor,
    t: float,
    rng: torch.Generator | None = None,
    noise: Tensor | None = None,
    t_min: float = 1e-3,
) -> Tensor:
    """Distribution-matching surrogate for the generator.

    Noises the generator prediction to level ``t``, evaluates the frozen real
    and fake scores there, and returns a squared-error surrogate whose
    gradient moves ``z0_hat`` along the normalized score difference
    ``s_real - s_fake`` (the direction that lowers the KL from the generator
    distribution to the real one; verified against a closed-form Gaussian
    oracle in the test suite). The score difference is normalized per sample
    by its mean absolute value, so updates have a stable scale across noise
    levels. Only ``z0_hat`` receives gradients.
    """
    if not (t_min < t <= 1.0):
        raise ValueError(f"t must be in ({t_min}, 1], got {t}")
    with torch.no_grad():
        if noise is None:
            if rng is None:
                raise ValueError("either rng or noise must be provided")
            noise = torch.randn(z0_hat.shape, generator=rng, dtype=z0_hat.dtype, device=z0_hat.device)
        z_t = noise_to_level(z0_hat, t, noise)
        s_real = velocity_to_score(z_t, v_real(z_t, t), t)
        s_fake = velocity_to_score(z_t, v_fake(z_t, t), t)
        diff = s_real - s_fake
        flat = diff.reshape(diff.shape[0], -1)
        scale = flat.abs().mean(dim=1).clamp_min(1e-8)
        diff = diff / scale.reshape(-1, *([1] * (diff.dim() - 1)))
        target = z0_hat + diff
    return 0.5 * ((z0_hat - target) ** 2).mean()


def fake_score_loss(v_fake: VelocityFn, z0_gen: Tensor, t: float, eps: Tensor) -> Tensor:
    """Flow-matching loss tying the fake-score net to the generator's current
    output distribution. ``z0_gen`` is detached: only the fake net trains."""
    z0 = z0_gen.detach()
    z_t = noise_to_level(z0, t, eps)
    target = eps - z0
    pred = v_fake(z_t, t)
    return ((pred - target) ** 2).mean()


def combined_gan_loss(
    weights: LossWeights,
    gan_g=None,
    gan_d=None,
    r1=None,
    r2=None,
) -> tuple[Tensor, Tensor]:
    """Weighted (generator_part, discriminator_part) of the adversarial
    objective. Missing parts contribute zero; the two parts never share
    gradient targets."""
    zero = torch.zeros(())
    gen = weights.gan_g * gan_g if gan_g is not None else zero
    disc = weights.gan_d * gan_d if gan_d is not None else zero
    if r1 is not None:
        disc = disc + weights.r1 * r1
    if r2 is not None:
        disc = disc + weights.r2 * r2
    return gen, disc
