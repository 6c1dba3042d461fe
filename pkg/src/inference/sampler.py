"""
Mask-free video sampling with classifier-free guidance.

Only the prompt and the checkpoint enter this path: no subject masks and
no attention supervision are needed to generate.
"""

from dataclasses import dataclass
from typing import List, Optional

import logfire
import torch

from ..diffusion.checkpoint import LoadedCheckpoint
from ..diffusion.denoiser import VideoDenoiser, predict_noise
from ..diffusion.schedule import NoiseSchedule, Timestep
from ..utils.errors import InvalidArgumentError
from .config import SamplerConfig, SolverKind


def combine_guidance(uncond: torch.Tensor, cond: torch.Tensor, scale: float) -> torch.Tensor:
    """uncond + scale * (cond - uncond); scale 1 returns ``cond`` exactly"""
    if scale < 0:
        raise InvalidArgumentError(f"guidance scale must be non-negative, got {scale}")
    return torch.lerp(uncond, cond, float(scale))


def cfg_predict(
    model: VideoDenoiser,
    zt: torch.Tensor,
    t: Timestep,
    cond_embedding: torch.Tensor,
    uncond_embedding: torch.Tensor,
    scale: float,
) -> torch.Tensor:
    if scale < 0:
        raise InvalidArgumentError(f"guidance scale must be non-negative, got {scale}")
    cond, _ = predict_noise(model, zt, cond_embedding, t)
    uncond, _ = predict_noise(model, zt, uncond_embedding, t)
    return combine_guidance(uncond, cond, scale)


def timestep_subset(T: int, steps: int) -> List[int]:
    """Descending timesteps 1 + k * (T // steps), k = steps - 1 .. 0"""
    if steps < 1:
        raise InvalidArgumentError(f"steps must be at least 1, got {steps}")
    if steps > T:
        raise InvalidArgumentError(f"{steps} steps exceed the schedule's {T} timesteps")
    stride = T // steps
    return [1 + k * stride for k in reversed(range(steps))]


def _alpha_sigma(schedule: NoiseSchedule, t: int):
    if t == 0:
        return 1.0, 0.0
    alpha = float(schedule.alpha_at(t))
    return alpha, float(schedule.sigma_at(t))


def _predict_clean(zt: torch.Tensor, eps: torch.Tensor, alpha: float, sigma: float, clip: bool) -> torch.Tensor:
    x0 = (zt - sigma * eps) / alpha
    return x0.clamp(-1.0, 1.0) if clip else x0


def ddim_step(
    zt: torch.Tensor,
    eps: torch.Tensor,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    clip: bool = True,
) -> torch.Tensor:
    """Deterministic update z_t -> z_{t_prev}; t_prev = 0 returns the clean estimate"""
    alpha, sigma = _alpha_sigma(schedule, t)
    alpha_prev, sigma_prev = _alpha_sigma(schedule, t_prev)
    x0 = _predict_clean(zt, eps, alpha, sigma, clip)
    if clip:
        # keep the noise direction consistent with the clipped estimate
        eps = (zt - alpha * x0) / sigma
    return alpha_prev * x0 + sigma_prev * eps


@dataclass
class DPMSolverState:
    """Clean estimate and step size of the previous multistep update"""
    last_x0: Optional[torch.Tensor] = None
    last_h: Optional[float] = None


def dpm_solver_step(
    zt: torch.Tensor,
    eps: torch.Tensor,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    state: DPMSolverState,
    clip: bool = True,
) -> torch.Tensor:
    """Second-order multistep DPM-Solver++ update in data-prediction form.

    The first step is first order (it equals DDIM); later steps extrapolate
    from the previous clean estimate. The final step returns the clean
    estimate.
    """
    alpha, sigma = _alpha_sigma(schedule, t)
    x0 = _predict_clean(zt, eps, alpha, sigma, clip)
    if t_prev == 0:
        state.last_x0, state.last_h = x0, None
        return x0

    alpha_prev, sigma_prev = _alpha_sigma(schedule, t_prev)
    lam = torch.log(torch.tensor(alpha / sigma, dtype=torch.float64))
    lam_prev = torch.log(torch.tensor(alpha_prev / sigma_prev, dtype=torch.float64))
    h = float(lam_prev - lam)
    decay = float(torch.expm1(torch.tensor(-h, dtype=torch.float64)))

    if state.last_x0 is None or state.last_h is None:
        estimate = x0
    else:
        ratio = state.last_h / h
        estimate = (1 + 1 / (2 * ratio)) * x0 - (1 / (2 * ratio)) * state.last_x0

    state.last_x0, state.last_h = x0, h
    return (sigma_prev / sigma) * zt - alpha_prev * decay * estimate


@logfire.instrument("sample_video", extract_args=False)
def sample_video(prompt: str, sampler: SamplerConfig, checkpoint: LoadedCheckpoint) -> torch.Tensor:
    """Denoise pure noise into ``sampler.frames`` frames -> [L, H, W, 3] in [0, 1]"""
    bundle, schedule = checkpoint.bundle, checkpoint.schedule
    denoiser = bundle.denoiser
    divisor = denoiser.config.spatial_divisor
    if sampler.height % divisor or sampler.width % divisor:
        raise InvalidArgumentError(f"frame size {sampler.height}x{sampler.width} must be divisible by {divisor}")

    param = next(bundle.parameters())
    timesteps = timestep_subset(schedule.timesteps, sampler.steps)
    generator = torch.Generator().manual_seed(sampler.seed)
    shape = (1, sampler.frames, sampler.height, sampler.width, denoiser.config.in_channels)

    bundle.eval()
    with torch.no_grad():
        cond = bundle.text.encode_batch([prompt])
        uncond = bundle.text.encode_empty().embedding[None]
        z = torch.randn(shape, generator=generator).to(device=param.device, dtype=param.dtype)
        state = DPMSolverState()
        for index, t in enumerate(timesteps):
            t_prev = timesteps[index + 1] if index + 1 < len(timesteps) else 0
            eps = cfg_predict(denoiser, z, t, cond, uncond, sampler.guidance_scale)
            if sampler.solver == SolverKind.DPM_SOLVER_PP:
                z = dpm_solver_step(z, eps, t, t_prev, schedule, state, sampler.clip_denoised)
            else:
                z = ddim_step(z, eps, t, t_prev, schedule, sampler.clip_denoised)

    logfire.debug("sampling finished", prompt=prompt, seed=sampler.seed, steps=len(timesteps))
    return ((z[0] + 1.0) / 2.0).clamp(0.0, 1.0).float().cpu()
