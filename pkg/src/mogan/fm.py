"""Flow-matching substrate: linear noising path, parameterization conversions,
and few-step sampling.

Convention used everywhere in this package: ``z_t = (1 - t) * z0 + t * eps``,
i.e. clean data at ``t = 0`` and pure noise at ``t = 1``, with velocity
``v = eps - z0``. Codebases that put noise at ``t = 0`` map onto this one via
``t -> 1 - t``.

Latent sequences are plain tensors of shape ``(K, c, h, w)`` or batched
``(B, K, c, h, w)``. Nothing here inspects the layout; shapes only need to be
consistent between arguments.

All functions are pure and thread-safe; randomness always comes from an
explicit ``torch.Generator``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import torch
from torch import Tensor

# Score conversion is conditioned by 1/t^2; below this the scale blows up.
T_MIN = 1e-3


@dataclass(frozen=True)
class LinearSchedule:
    """Linear interpolant weights for the noising path.

    ``data_weight(t) + noise_weight(t) == 1`` for all t, with
    ``data_weight(0) == 1`` and ``noise_weight(1) == 1``.
    """

    convention: str = "noise_at_one"

    def data_weight(self, t: float) -> float:
        return 1.0 - t

    def noise_weight(self, t: float) -> float:
        return float(t)


@dataclass(frozen=True)
class DistilledTimesteps:
    """The small set of noise levels a few-step generator is queried at.

    ``values`` are sorted descending; the first entry is the noisiest level
    the sampler starts from.
    """

    values: tuple[float, ...] = (1.0, 0.66, 0.33)

    def __post_init__(self):
        if len(self.values) < 1:
            raise ValueError("need at least one timestep")
        prev = 1.0 + 1e-12
        for t in self.values:
            if not (0.0 < t <= 1.0):
                raise ValueError(f"timesteps must lie in (0, 1], got {self.values}")
            if t >= prev:
                raise ValueError(f"timesteps must be strictly descending, got {self.values}")
            prev = t

    def __len__(self) -> int:
        return len(self.values)


def _check_t(t: float, lo: float = 0.0, hi: float = 1.0) -> float:
    t = float(t)
    if not (lo <= t <= hi):
        raise ValueError(f"t must be in [{lo}, {hi}], got {t}")
    return t


def noise_to_level(z0: Tensor, t: float, eps: Tensor) -> Tensor:
    """Move a clean latent to noise level ``t``: ``(1 - t) * z0 + t * eps``."""
    t = _check_t(t)
    if z0.shape != eps.shape:
        raise ValueError(
            f"z0 and eps shapes differ: {tuple(z0.shape)} vs {tuple(eps.shape)}"
        )
    return (1.0 - t) * z0 + t * eps


def velocity_to_x0(z_t: Tensor, v_hat: Tensor, t: float) -> Tensor:
    """Invert the linear path given a velocity prediction: ``z_t - t * v_hat``.

    Well defined on all of [0, 1]; at t=0 the latent already is the
    x0-prediction.
    """
    t = _check_t(t)
    return z_t - t * v_hat


def velocity_to_score(z_t: Tensor, v_hat: Tensor, t: float, t_min: float = T_MIN) -> Tensor:
    """Convert a velocity prediction into the marginal score ``-(z_t + (1-t) v) / t``.

    Under the linear path the conditional ``z_t | z0`` is Gaussian with std
    ``t``, so the score diverges as ``t -> 0``.
    """
    t = _check_t(t)
    if t < t_min:
        raise ValueError(f"score singular at t -> 0 (t={t} < t_min={t_min})")
    return -(z_t + (1.0 - t) * v_hat) / t


def score_to_velocity(z_t: Tensor, score: Tensor, t: float, t_max_gap: float = T_MIN) -> Tensor:
    """Inverse of :func:`velocity_to_score`: ``-(z_t + t * score) / (1 - t)``.

    The velocity is underdetermined by the score as ``t -> 1`` (the data
    weight vanishes), so this refuses t within ``t_max_gap`` of 1.
    """
    t = _check_t(t)
    if 1.0 - t < t_max_gap:
        raise ValueError(f"velocity underdetermined at t -> 1 (t={t})")
    return -(z_t + t * score) / (1.0 - t)


class BackwardSim(NamedTuple):
    """Result of running the inference chain partway.

    ``z_t`` is the noisy latent at level ``t`` (distributed as at inference
    time), ``x0_pred`` the generator's gradient-tracked clean prediction at
    that point, and ``step_index`` which distilled timestep was stopped at.
    """

    z_t: Tensor
    t: float
    x0_pred: Tensor
    step_index: int


GeneratorFn = Callable[[Tensor, float, object], Tensor]


def few_step_sample(
    g: GeneratorFn,
    steps: DistilledTimesteps,
    cond,
    shape: Sequence[int],
    rng: torch.Generator,
    dtype: torch.dtype = torch.float32,
    device: str | torch.device = "cpu",
) -> Tensor:
    """Sample by alternating x0-prediction and re-noising down the timestep list.

    Starts from pure noise at the first (noisiest) timestep and returns the
    final x0-prediction. Deterministic given the generator state of ``rng``.
    """
    values = steps.values
    z = torch.randn(tuple(shape), generator=rng, dtype=dtype, device=device)
    x0 = z
    for i, t in enumerate(values):
        v = g(z, t, cond)
        x0 = velocity_to_x0(z, v, t)
        if i + 1 < len(values):
            eps = torch.randn(tuple(shape), generator=rng, dtype=dtype, device=device)
            z = noise_to_level(x0, values[i + 1], eps)
    return x0


def backward_simulate(
    g: GeneratorFn,
    steps: DistilledTimesteps,
    cond,
    shape: Sequence[int],
    rng: torch.Generator,
    dtype: torch.dtype = torch.float32,
    device: str | torch.device = "cpu",
) -> BackwardSim:
    """Run the inference chain up to a uniformly chosen distilled timestep.

    The chain up to the stopping point runs without gradient tracking; only
    the final generator call (the returned ``x0_pred``) is differentiable,
    so training inputs match the inference-time distribution while the graph
    stays one call deep.
    """
    values = steps.values
    idx = int(torch.randint(len(values), (1,), generator=rng).item())
    with torch.no_grad():
        z = torch.randn(tuple(shape), generator=rng, dtype=dtype, device=device)
        for j in range(idx):
            v = g(z, values[j], cond)
            x0 = velocity_to_x0(z, v, values[j])
            eps = torch.randn(tuple(shape), generator=rng, dtype=dtype, device=device)
            z = noise_to_level(x0, values[j + 1], eps)
    t_i = values[idx]
    v = g(z, t_i, cond)
    x0_pred = velocity_to_x0(z, v, t_i)
    return BackwardSim(z_t=z, t=t_i, x0_pred=x0_pred, step_index=idx)
