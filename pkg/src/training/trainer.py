"""Selective fine-tuning: trainable-parameter selection, the training step and full runs."""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import logfire
import torch
import torch.nn as nn

from ..attention_control.heatmaps import export_heatmaps
from ..attention_control.losses import attn_loss_pos_neg
from ..attention_control.masks import level_guidance
from ..composition.models import CompositeSample, SubjectAsset
from ..composition.pipeline import extend_to_video
from ..diffusion.attention import AttentionLevel, AttentionMapSet, AttentionTap
from ..diffusion.checkpoint import ModelBundle, save_checkpoint
from ..diffusion.denoiser import predict_noise
from ..diffusion.schedule import NoiseSchedule, add_noise
from ..monitoring.logfire_setup import log_run_started, log_training_step
from ..text.vocabulary import TokenInit
from ..utils.errors import InvalidArgumentError
from .config import AblationFlag, TrainConfig
from .dataset import CustomizationDataset, TrainingBatch
from .losses import prior_loss, recon_loss, total_loss
from .models import LossBreakdown, TrainableParamSet, TrainingResult
from .run_log import LossLog

ProgressCallback = Callable[[str, Any], None]

TRAINABLE_SUFFIXES = ("cross_attn.to_k.weight", "cross_attn.to_v.weight")
TOKEN_PREFIX = "text.learnable."


def select_trainable(model: nn.Module) -> TrainableParamSet:
    """Keep cross-attention key/value weights and learnable token rows; freeze everything else"""
    names = []
    for name, param in model.named_parameters():
        trainable = name.endswith(TRAINABLE_SUFFIXES) or name.startswith(TOKEN_PREFIX)
        param.requires_grad_(trainable)
        if trainable:
            names.append(name)
    return TrainableParamSet(names=names)


def build_optimizer(params: Iterable[nn.Parameter], config: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        list(params),
        lr=config.learning_rate,
        betas=config.adam_betas,
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )


def register_subject_tokens(bundle: ModelBundle, assets: Sequence[SubjectAsset], config: TrainConfig) -> List[str]:
    """Add one learnable token per subject; tokens already present are reused"""
    registered = []
    vocabulary = bundle.text
    for offset, asset in enumerate(assets):
        name = asset.token_name.lower()
        if name in vocabulary.learnable_tokens:
            logfire.info("Reusing learnable token", token=name)
            continue
        init = config.token_init
        if init == TokenInit.CLASS_WORD_COPY and asset.class_name.lower() not in vocabulary.base_tokens:
            logfire.warn("Class word missing from vocabulary, using random init", token=name, class_word=asset.class_name)
            init = TokenInit.RANDOM
        vocabulary.register_learnable_token(name, init=init, class_word=asset.class_name, seed=config.seed + offset)
        registered.append(name)
    return registered


@dataclass
class NoiseDraw:
    t: torch.Tensor
    eps: torch.Tensor
    prior_t: Optional[torch.Tensor] = None
    prior_eps: Optional[torch.Tensor] = None


def _video_latents(samples, frames: int, dtype: torch.dtype, device: torch.device) -> torch.Tensor:
    return torch.cat([extend_to_video(sample, frames).latent for sample in samples]).to(device=device, dtype=dtype)


class CustomizationTrainer:
    """One optimizer step: recon + alpha * attention + beta * prior on the trainable set only"""

    def __init__(self, bundle: ModelBundle, schedule: NoiseSchedule, config: TrainConfig):
        for level in config.levels:
            if level not in bundle.denoiser.config.cross_attention_levels:
                raise InvalidArgumentError(f"level {level.value} has no cross-attention layer")
        self.bundle = bundle
        self.schedule = schedule
        self.config = config
        self.trainable = select_trainable(bundle)
        params = dict(bundle.named_parameters())
        self.optimizer = build_optimizer([params[name] for name in self.trainable.names], config)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.attention_log: List[float] = []
        self.loss_log = LossLog()

    @property
    def uses_attention(self) -> bool:
        return self.config.alpha != 0 and bool(self.config.levels)

    def _param_spec(self) -> Tuple[torch.dtype, torch.device]:
        param = next(self.bundle.parameters())
        return param.dtype, param.device

    def sample_noise(self, batch: TrainingBatch) -> NoiseDraw:
        """Timesteps uniform over 1..T and standard normal noise for the batch"""
        dtype, device = self._param_spec()
        shape = (len(batch.composites), self.config.frames, self.config.height, self.config.width, 3)
        draw = NoiseDraw(
            t=torch.randint(1, self.schedule.timesteps + 1, (shape[0],), generator=self.generator),
            eps=torch.randn(shape, generator=self.generator).to(device=device, dtype=dtype),
        )
        if batch.priors and self.config.beta > 0:
            prior_shape = (len(batch.priors),) + shape[1:]
            draw.prior_t = torch.randint(1, self.schedule.timesteps + 1, (prior_shape[0],), generator=self.generator)
            draw.prior_eps = torch.randn(prior_shape, generator=self.generator).to(device=device, dtype=dtype)
        return draw

    def _attention_term(self, map_sets: List[AttentionMapSet], composites: List[CompositeSample]) -> torch.Tensor:
        stride = self.bundle.denoiser.config.input_stride
        include_positive = not self.config.has(AblationFlag.NO_POS_ATTN)
        terms = []
        for map_set in map_sets:
            guidance = [
                level_guidance(sample.per_subject_masks, map_set.level, self.config.effective_eta, base_stride=stride)
                for sample in composites
            ]
            terms.append(attn_loss_pos_neg(
                map_set, guidance, include_positive=include_positive, reduction=self.config.attention_reduction
            ))
        return torch.stack(terms).mean()

    def compute_losses(self, batch: TrainingBatch, noise: NoiseDraw) -> Dict[str, torch.Tensor]:
        dtype, device = self._param_spec()
        z0 = _video_latents(batch.composites, self.config.frames, dtype, device)
        zt = add_noise(z0, noise.eps, noise.t, self.schedule)
        text_embedding = self.bundle.text.encode_batch([sample.prompt for sample in batch.composites])

        taps = []
        if self.uses_attention:
            positions = [sample.token_positions for sample in batch.composites]
            taps = [AttentionTap(level, positions) for level in self.config.levels]
        eps_pred, map_sets = predict_noise(self.bundle.denoiser, zt, text_embedding, noise.t, taps)

        zero = torch.zeros((), dtype=dtype, device=device)
        recon = recon_loss(noise.eps, eps_pred)
        attn = zero
        if taps:
            attn = self._attention_term(map_sets, batch.composites)
            self.attention_log.append(float(attn.detach()))

        prior = zero
        if noise.prior_eps is not None:
            prior_latents = _video_latents(batch.priors, self.config.frames, dtype, device)
            prior = prior_loss(
                self.bundle,
                self.schedule,
                prior_latents,
                [sample.prompt for sample in batch.priors],
                noise.prior_t,
                noise.prior_eps,
            )

        total = recon + self.config.alpha * attn + self.config.beta * prior
        return {"recon": recon, "attn": attn, "prior": prior, "total": total}

    def train_step(self, batch: TrainingBatch) -> LossBreakdown:
        self.bundle.train()
        noise = self.sample_noise(batch)
        losses = self.compute_losses(batch, noise)
        # Raises on a non-finite term before any weight is touched
        breakdown = total_loss(
            losses["recon"], losses["attn"], losses["prior"], self.config.alpha, self.config.beta
        )

        self.optimizer.zero_grad(set_to_none=True)
        losses["total"].backward()
        self.optimizer.step()
        self.loss_log.append(batch.step, breakdown)
        return breakdown


def capture_attention_maps(
    bundle: ModelBundle,
    schedule: NoiseSchedule,
    sample: CompositeSample,
    levels: Sequence[Union[str, AttentionLevel]],
    t: Optional[int] = None,
    seed: int = 0,
    frames: int = 1,
) -> List[AttentionMapSet]:
    """Per-token maps of a composite at a fixed timestep, without touching training state"""
    dtype = next(bundle.parameters()).dtype
    device = next(bundle.parameters()).device
    generator = torch.Generator().manual_seed(seed)
    t = t or schedule.timesteps // 2
    with torch.no_grad():
        z0 = extend_to_video(sample, frames).latent.to(device=device, dtype=dtype)
        eps = torch.randn(z0.shape, generator=generator).to(device=device, dtype=dtype)
        zt = add_noise(z0, eps, t, schedule)
        text_embedding = bundle.text.encode_batch([sample.prompt])
        taps = [AttentionTap(level, sample.token_positions) for level in levels]
        _, map_sets = predict_noise(bundle.denoiser, zt, text_embedding, t, taps)
    return map_sets


def _export_step_heatmaps(
    bundle: ModelBundle,
    schedule: NoiseSchedule,
    sample: CompositeSample,
    levels: Sequence[AttentionLevel],
    directory: Path,
    step: int,
    seed: int,
) -> List[Path]:
    written = []
    for map_set in capture_attention_maps(bundle, schedule, sample, levels, seed=seed):
        written.extend(export_heatmaps(map_set, sample.token_names, directory, step, composite=sample.image))
    return written


@logfire.instrument("run_training", extract_args=False)
def run_training(
    config: TrainConfig,
    dataset: CustomizationDataset,
    bundle: ModelBundle,
    schedule: NoiseSchedule,
    output_dir: Union[str, Path],
    progress_callback: Optional[ProgressCallback] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> TrainingResult:
    """Fine-tune ``bundle`` on ``dataset`` and write checkpoint, loss log and heatmaps"""
    output_dir = Path(output_dir)
    checkpoint_path = output_dir / "checkpoint.pt"
    heatmap_dir = output_dir / "heatmaps"

    register_subject_tokens(bundle, dataset.assets, config)
    trainer = CustomizationTrainer(bundle, schedule, config)
    heatmap_levels = config.levels or [AttentionLevel.L3]
    heatmap_sample = dataset.reference_composite()

    settings = {
        "steps": config.steps,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "alpha": config.alpha,
        "beta": config.beta,
        "eta": config.eta,
        "levels": ",".join(level.value for level in config.levels) or "none",
        "ablations": ",".join(flag.value for flag in config.ablations) or "none",
        "trainable_tensors": len(trainer.trainable),
    }
    log_run_started("train", settings)
    if progress_callback:
        progress_callback("run_started", settings)

    run_metadata = {
        "kind": "customization",
        "train_config": config.model_dump(mode="json"),
        "subjects": [
            {"class_name": a.class_name, "token_name": a.token_name} for a in dataset.assets
        ],
    }
    run_metadata.update(metadata or {})

    breakdown = None
    for step in range(1, config.steps + 1):
        breakdown = trainer.train_step(dataset.batch(step))
        if step == 1 or step % config.log_every == 0 or step == config.steps:
            log_training_step(step, breakdown)
        if progress_callback:
            progress_callback("step_completed", {
                "step": step, "total": breakdown.total, "recon": breakdown.recon,
                "attn": breakdown.attn, "prior": breakdown.prior,
            })

        if config.heatmap_every and (step % config.heatmap_every == 0 or step == config.steps):
            written = _export_step_heatmaps(
                bundle, schedule, heatmap_sample, heatmap_levels, heatmap_dir, step, config.seed
            )
            if progress_callback:
                progress_callback("heatmaps_written", f"{len(written)} files in {heatmap_dir}")

        if config.checkpoint_every and step % config.checkpoint_every == 0 and step != config.steps:
            save_checkpoint(checkpoint_path, bundle, schedule, {**run_metadata, "steps_completed": step})
            if progress_callback:
                progress_callback("checkpoint_saved", str(checkpoint_path))

    summary = trainer.loss_log.summary()
    save_checkpoint(checkpoint_path, bundle, schedule, {**run_metadata, "steps_completed": config.steps, "losses": summary})
    if progress_callback:
        progress_callback("checkpoint_saved", str(checkpoint_path))
    loss_log_path = trainer.loss_log.save_csv(output_dir / "loss_log.csv")

    logfire.info("Training complete", checkpoint=str(checkpoint_path), **summary)
    if progress_callback:
        progress_callback("complete", summary)

    return TrainingResult(
        checkpoint_path=str(checkpoint_path),
        loss_log_path=str(loss_log_path),
        steps=config.steps,
        heatmap_dir=str(heatmap_dir) if config.heatmap_every else "",
        final=breakdown,
    )
