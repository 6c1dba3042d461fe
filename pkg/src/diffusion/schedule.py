"""
Noise schedules and the forward (noising) process.

Latent videos are tensors shaped [batch, frames, height, width, channels].
A schedule stores alpha_t for t = 1..T, where the noised latent is
alpha_t * z0 + sqrt(1 - alpha_t^2) * eps.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import torch

from ..utils.errors import InvalidArgumentError

Timestep = Union[int, torch.Tensor]


class ScheduleKind(str, Enum):
    LINEAR_BETA = "linear-beta"
    COSINE = "cosine"


LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 0.02
COSINE_OFFSET = 0.008
MAX_BETA = 0.999


def validate_latent(x: torch.Tensor, name: str = "latent") -> torch.Tensor:
    """Check the LatentVideo contract: 5 dims, all >= 1, finite values"""
    if not isinstance(x, torch.Tensor) or x.dim() != 5:
        raise InvalidArgumentError(f"{name} must be a [B, L, H, W, D] tensor")
    if any(size < 1 for size in x.shape):
        raise InvalidArgumentError(f"{name} has an empty dimension: {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return x


@dataclass(frozen=True)
class NoiseSchedule:
    timesteps: int
    kind: ScheduleKind
    alpha: torch.Tensor  # float64, alpha[t - 1] is alpha_t

    def __post_init__(self):
        if self.alpha.dim() != 1 or self.alpha.numel() != self.timesteps:
            raise InvalidArgumentError("alpha must have exactly one entry per timestep")
        if not ((self.alpha > 0) & (self.alpha <= 1)).all():
            raise InvalidArgumentError("alpha entries must lie in (0, 1]")
        if (self.alpha[1:] > self.alpha[:-1]).any():
            raise InvalidArgumentError("alpha must be non-increasing in t")

    def alpha_at(self, t: Timestep) -> torch.Tensor:
        index = _timestep_index(t, self.timesteps)
        return self.alpha[index]

    def sigma_at(self, t: Timestep) -> torch.Tensor:
        alpha = self.alpha_at(t)
        return torch.sqrt(1.0 - alpha * alpha)

    def settings(self) -> dict:
        return {"timesteps": self.timesteps, "kind": self.kind.value}


def make_schedule(T: int, kind: Union[str, ScheduleKind] = ScheduleKind.LINEAR_BETA) -> NoiseSchedule:
    """Build a deterministic schedule with alpha_1 near 1 and alpha_T near 0"""
    if T < 2:
        raise InvalidArgumentError(f"schedule needs at least 2 timesteps, got {T}")
    try:
        kind = ScheduleKind(kind)
    except ValueError:
        raise InvalidArgumentError(f"Unknown schedule kind: {kind}")

    if kind == ScheduleKind.LINEAR_BETA:
        betas = torch.linspace(LINEAR_BETA_START, LINEAR_BETA_END, T, dtype=torch.float64)
    else:
        steps = torch.arange(T + 1, dtype=torch.float64) / T
        alpha_bar = torch.cos((steps + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2
        betas = (1 - alpha_bar[1:] / alpha_bar[:-1]).clamp(max=MAX_BETA)

    alpha_bar = torch.cumprod(1.0 - betas, dim=0)
    return NoiseSchedule(timesteps=T, kind=kind, alpha=torch.sqrt(alpha_bar))


def _timestep_index(t: Timestep, T: int) -> Union[int, torch.Tensor]:
    if isinstance(t, torch.Tensor):
        if t.dtype.is_floating_point:
            raise InvalidArgumentError("timesteps must be integers")
        if t.numel() and (t.min() < 1 or t.max() > T):
            raise InvalidArgumentError(f"timestep out of range 1..{T}")
        return t.long() - 1
    if not 1 <= int(t) <= T:
        raise InvalidArgumentError(f"timestep {t} out of range 1..{T}")
    return int(t) - 1


def mix_noise(z0: torch.Tensor, eps: torch.Tensor, alpha_t: Union[float, torch.Tensor]) -> torch.Tensor:
    """alpha_t * z0 + sqrt(1 - alpha_t^2) * eps for an explicit alpha_t.

    ``alpha_t`` is a scalar or a per-batch tensor of shape [B].
    """
    if z0.shape != eps.shape:
        raise InvalidArgumentError(f"shape mismatch: {tuple(z0.shape)} vs {tuple(eps.shape)}")
    alpha = torch.as_tensor(alpha_t, dtype=torch.float64)
    if ((alpha < 0) | (alpha > 1)).any():
        raise InvalidArgumentError("alpha_t must lie in [0, 1]")
    sigma = torch.sqrt(1.0 - alpha * alpha)
    if alpha.dim() == 1:
        if alpha.numel() != z0.shape[0]:
            raise InvalidArgumentError("per-sample alpha needs one entry per batch element")
        view = (-1,) + (1,) * (z0.dim() - 1)
        alpha = alpha.view(view)
        sigma = sigma.view(view)
    alpha = alpha.to(device=z0.device, dtype=z0.dtype)
    sigma = sigma.to(device=z0.device, dtype=z0.dtype)
    return alpha * z0 + sigma * eps


def add_noise(z0: torch.Tensor, eps: torch.Tensor, t: Timestep, sched: NoiseSchedule) -> torch.Tensor:
    """Forward process at timestep ``t`` (an int or a [B] integer tensor)"""
    if z0.shape != eps.shape:
        raise InvalidArgumentError(f"shape mismatch: {tuple(z0.shape)} vs {tuple(eps.shape)}")
    return mix_noise(z0, eps, sched.alpha_at(t))
