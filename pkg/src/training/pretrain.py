"""
Base-model training on synthetic class scenes.

Produces the starting checkpoint that customization fine-tunes: the whole
denoiser learns the catalogue classes from plain class prompts, with a
share of empty prompts so classifier-free guidance has an unconditional
branch, and a slow horizontal drift so temporal layers see motion.
"""

from pathlib import Path
from typing import List, Optional, Tuple, Union

import logfire
import numpy as np
import torch

from ..composition.pipeline import image_to_latent, synth_class_prior
from ..diffusion.checkpoint import ModelBundle, save_checkpoint
from ..diffusion.denoiser import DenoiserConfig, predict_noise
from ..diffusion.schedule import NoiseSchedule, add_noise
from ..monitoring.logfire_setup import log_run_started, log_training_step
from ..text.vocabulary import default_base_words
from .config import PretrainConfig
from .losses import recon_loss, total_loss
from .run_log import LossLog
from .trainer import ProgressCallback


def drifting_video(image: np.ndarray, frames: int, drift: int, direction: int) -> torch.Tensor:
    """[L, H, W, 3] latent whose frames shift the scene ``drift`` pixels per frame"""
    shifted = [np.roll(image, direction * drift * frame, axis=1) for frame in range(frames)]
    return torch.stack([image_to_latent(frame) for frame in shifted])


def scene_batch(rng: np.random.Generator, config: PretrainConfig) -> Tuple[torch.Tensor, List[str]]:
    """Random class scenes -> (latents [B, L, H, W, 3], prompts with dropout applied)"""
    videos, prompts = [], []
    for _ in range(config.batch_size):
        count = int(rng.integers(1, min(config.max_subjects, len(config.classes)) + 1))
        classes = [str(name) for name in rng.choice(config.classes, size=count, replace=False)]
        scene = synth_class_prior(classes, 1, rng=rng, height=config.height, width=config.width)[0]
        direction = 1 if rng.random() < 0.5 else -1
        videos.append(drifting_video(scene.image, config.frames, config.drift_pixels, direction))
        prompts.append("" if rng.random() < config.prompt_dropout else scene.prompt)
    return torch.stack(videos), prompts


def create_base_bundle(denoiser_config: DenoiserConfig, seed: int = 0, max_tokens: int = 40) -> ModelBundle:
    """Fresh model whose vocabulary covers the templates and the class catalogue"""
    from ..composition.synthetic import catalogue_classes

    return ModelBundle.create(
        denoiser_config, default_base_words(catalogue_classes()), max_tokens=max_tokens, seed=seed
    )


@logfire.instrument("run_pretraining", extract_args=False)
def run_pretraining(
    config: PretrainConfig,
    denoiser_config: DenoiserConfig,
    schedule: NoiseSchedule,
    output_path: Union[str, Path],
    progress_callback: Optional[ProgressCallback] = None,
    bundle: Optional[ModelBundle] = None,
) -> Path:
    output_path = Path(output_path)
    bundle = bundle or create_base_bundle(denoiser_config, seed=config.seed)
    for param in bundle.parameters():
        param.requires_grad_(True)
    optimizer = torch.optim.AdamW(
        bundle.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    generator = torch.Generator().manual_seed(config.seed)
    loss_log = LossLog()

    settings = {
        "steps": config.steps,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "frames": config.frames,
        "classes": ",".join(config.classes),
    }
    log_run_started("pretrain", settings)
    if progress_callback:
        progress_callback("run_started", settings)

    bundle.train()
    for step in range(1, config.steps + 1):
        rng = np.random.default_rng([config.seed, step])
        z0, prompts = scene_batch(rng, config)
        t = torch.randint(1, schedule.timesteps + 1, (z0.shape[0],), generator=generator)
        eps = torch.randn(z0.shape, generator=generator)
        zt = add_noise(z0, eps, t, schedule)
        text_embedding = bundle.text.encode_batch(prompts, allow_empty=True)

        eps_pred, _ = predict_noise(bundle.denoiser, zt, text_embedding, t)
        loss = recon_loss(eps, eps_pred)
        breakdown = total_loss(loss, 0.0, 0.0, 0.0, 0.0)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        loss_log.append(step, breakdown)
        if step == 1 or step % config.log_every == 0 or step == config.steps:
            log_training_step(step, breakdown)
        if progress_callback:
            progress_callback("step_completed", {"step": step, "recon": breakdown.recon})

    summary = loss_log.summary()
    save_checkpoint(output_path, bundle, schedule, {
        "kind": "pretrain",
        "pretrain_config": config.model_dump(mode="json"),
        "steps_completed": config.steps,
        "losses": summary,
    })
    loss_log.save_csv(output_path.with_suffix(".losses.csv"))
    if progress_callback:
        progress_callback("checkpoint_saved", str(output_path))
        progress_callback("complete", summary)
    return output_path
