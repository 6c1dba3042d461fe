import math
from typing import Sequence, Union

import torch
import torch.nn.functional as F

from ..diffusion.checkpoint import ModelBundle
from ..diffusion.denoiser import predict_noise
from ..diffusion.schedule import NoiseSchedule, Timestep, add_noise
from ..utils.errors import InvalidArgumentError
from .models import LossBreakdown

Scalar = Union[float, torch.Tensor]


def recon_loss(eps: torch.Tensor, eps_pred: torch.Tensor) -> torch.Tensor:
    """Mean squared error between the true and the predicted noise"""
    if eps.shape != eps_pred.shape:
        raise InvalidArgumentError(
            f"noise shape {tuple(eps.shape)} does not match prediction {tuple(eps_pred.shape)}"
        )
    return F.mse_loss(eps_pred, eps.to(eps_pred.dtype))


def prior_loss(
    bundle: ModelBundle,
    schedule: NoiseSchedule,
    latents: torch.Tensor,
    prompts: Sequence[str],
    t: Timestep,
    eps: torch.Tensor,
) -> torch.Tensor:
    """Reconstruction loss on class-prior videos; no attention is captured"""
    for prompt in prompts:
        if bundle.text.contains_learnable(prompt):
            raise InvalidArgumentError(f"prior prompt must not contain learnable tokens: {prompt!r}")
    zt = add_noise(latents, eps, t, schedule)
    text_embedding = bundle.text.encode_batch(list(prompts))
    eps_pred, _ = predict_noise(bundle.denoiser, zt, text_embedding, t)
    return recon_loss(eps, eps_pred)


def _as_float(value: Scalar, name: str) -> float:
    number = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
    if not math.isfinite(number):
        raise InvalidArgumentError(f"{name} loss is not finite: {number}")
    return number


def total_loss(recon: Scalar, attn: Scalar, prior: Scalar, alpha: float, beta: float) -> LossBreakdown:
    recon_value = _as_float(recon, "recon")
    attn_value = _as_float(attn, "attention")
    prior_value = _as_float(prior, "prior")
    alpha = _as_float(alpha, "alpha")
    beta = _as_float(beta, "beta")
    return LossBreakdown(
        recon=recon_value,
        attn=attn_value,
        prior=prior_value,
        total=recon_value + alpha * attn_value + beta * prior_value,
        alpha=alpha,
        beta=beta,
    )
