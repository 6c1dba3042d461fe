"""Generate, evaluate and ablate: the loops that tie sampling to the metrics."""

from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import logfire
import numpy as np
from rich.console import Console

from ..attention_control.masks import downsample_mask
from ..composition.models import CompositeSample
from ..composition.synthetic import CATALOGUE, SubjectSignature
from ..diffusion.attention import AttentionLevel
from ..diffusion.checkpoint import LoadedCheckpoint, ModelBundle, load_checkpoint
from ..diffusion.schedule import NoiseSchedule
from ..inference.config import SamplerConfig
from ..inference.export import FrameManifest, export_frames
from ..inference.sampler import sample_video
from ..monitoring.logfire_setup import create_span
from ..text.prompts import Binding
from ..text.templates import PromptTemplateLibrary
from ..training.ablations import AblationRow, get_grid
from ..training.dataset import CustomizationDataset
from ..training.experiment import load_subject_assets, train_from_experiment
from ..training.trainer import capture_attention_maps
from ..utils.errors import InvalidArgumentError
from ..utils.experiment_config import ExperimentConfig
from .extractors import FeatureExtractor, create_extractor
from .metrics import image_alignment, temporal_consistency, textual_alignment
from .oracles import attention_iou, cooccurrence_oracle, identity_scores
from .report import MetricReport, average_reports, write_report

ProgressCallback = Callable[[str, object], None]


def evaluate_frames(
    frames: np.ndarray,
    prompt: str,
    references: Sequence[np.ndarray],
    extractor: FeatureExtractor,
    dino_extractor: Optional[FeatureExtractor] = None,
    signatures: Optional[Sequence[SubjectSignature]] = None,
    label: str = "",
) -> MetricReport:
    """All metrics of one generated video; oracles run only when signatures are known"""
    report = MetricReport(
        label=label,
        clip_t=textual_alignment(frames, prompt, extractor) if extractor.supports_text else None,
        clip_i=image_alignment(frames, references, extractor),
        dino_i=image_alignment(frames, references, dino_extractor) if dino_extractor else None,
        temporal_consistency=temporal_consistency(frames, extractor) if len(frames) >= 2 else None,
    )
    if signatures:
        report = report.model_copy(update={
            "cooccurrence": cooccurrence_oracle(frames, signatures),
            "identity": identity_scores(frames, signatures),
        })
    return report


def measure_attention_iou(
    bundle: ModelBundle,
    schedule: NoiseSchedule,
    sample: CompositeSample,
    level: Union[str, AttentionLevel] = AttentionLevel.L3,
    threshold: float = 0.5,
    normalize: bool = True,
    seed: int = 0,
) -> Dict[str, float]:
    """Per-token IoU of the captured maps against the composite's downsampled subject masks"""
    level = AttentionLevel.parse(level)
    stride = bundle.denoiser.config.input_stride
    map_set = capture_attention_maps(bundle, schedule, sample, [level], seed=seed)[0]
    masks = [downsample_mask(mask, level, base_stride=stride, keep_nonempty=True) for mask in sample.per_subject_masks]
    scores = attention_iou(map_set, masks, threshold=threshold, normalize=normalize)
    return dict(zip(sample.token_names, scores))


def subject_signatures(bindings: Sequence[Binding]) -> List[SubjectSignature]:
    """Catalogue signatures of the bound classes; unknown classes have no oracle"""
    return [CATALOGUE[class_name] for class_name, _ in bindings if class_name in CATALOGUE]


@logfire.instrument("generate_and_evaluate", extract_args=False)
def generate_and_evaluate(
    checkpoint: LoadedCheckpoint,
    bindings: Sequence[Binding],
    template_ids: Sequence[int],
    seeds: Sequence[int],
    sampler: SamplerConfig,
    output_dir: Union[str, Path],
    references: Sequence[np.ndarray],
    extractor: FeatureExtractor,
    dino_extractor: Optional[FeatureExtractor] = None,
    label: str = "",
    progress_callback: Optional[ProgressCallback] = None,
) -> List[MetricReport]:
    """Render every template with ``bindings``, sample one video per seed and evaluate it"""
    library = PromptTemplateLibrary()
    signatures = subject_signatures(bindings)
    output_dir = Path(output_dir)
    reports = []
    for template_id in template_ids:
        prompt = library.render(template_id, bindings)
        for seed in seeds:
            settings = sampler.model_copy(update={"seed": seed})
            frames = sample_video(prompt, settings, checkpoint).numpy()
            video_dir = output_dir / f"template{template_id:02d}_seed{seed}"
            export_frames(frames, video_dir, FrameManifest(
                prompt=prompt,
                seed=seed,
                sampler=settings.model_dump(mode="json"),
                fps=settings.fps,
                checkpoint=str(checkpoint.path),
                template_id=template_id,
                bindings=[list(binding) for binding in bindings],
            ))
            reports.append(evaluate_frames(
                frames, prompt, references, extractor, dino_extractor, signatures,
                label=f"{label or 'video'} t{template_id} s{seed}",
            ))
            if progress_callback:
                progress_callback("video_evaluated", {"template": template_id, "seed": seed})
    return reports


@logfire.instrument("run_ablation", extract_args=False)
def run_ablation(
    grid: Union[str, Sequence[AblationRow]],
    experiment: ExperimentConfig,
    output_dir: Optional[Union[str, Path]] = None,
    console: Optional[Console] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> List[MetricReport]:
    """Train every grid row from the same starting point, then evaluate each one"""
    rows = get_grid(grid) if isinstance(grid, str) else list(grid)
    if not rows:
        raise InvalidArgumentError("ablation grid has no rows")
    output_dir = Path(output_dir or experiment.output_dir) / "ablation"
    extractor = create_extractor(experiment.extractor, experiment.seed)
    dino_extractor = create_extractor(experiment.dino_extractor, experiment.seed)

    summaries = []
    for index, row in enumerate(rows):
        row_dir = output_dir / f"row{index:02d}"
        train = row.apply(experiment.train)
        logfire.info("Ablation row started", label=row.label, directory=str(row_dir))
        with create_span("ablation_row", label=row.label):
            result = train_from_experiment(experiment, row_dir, train)

        loaded = load_checkpoint(result.checkpoint_path)
        assets = load_subject_assets(experiment, row_dir)
        bindings = [(asset.class_name, asset.token_name) for asset in assets]
        references = [asset.image for asset in assets]
        template_ids = [
            template_id for template_id in experiment.eval_templates
            if PromptTemplateLibrary().get_template(template_id).subject_count == len(bindings)
        ]
        reports = generate_and_evaluate(
            loaded, bindings, template_ids, experiment.eval_seeds, experiment.sampler,
            row_dir / "videos", references, extractor, dino_extractor, row.label,
        )
        summary = average_reports(reports, row.label) if reports else MetricReport(label=row.label, video_count=0)

        if len(assets) >= 2:
            sample = CustomizationDataset(assets, train.model_copy(update={"beta": 0.0})).reference_composite()
            level = train.levels[0] if train.levels else AttentionLevel.L3
            iou = measure_attention_iou(loaded.bundle, loaded.schedule, sample, level, seed=experiment.seed)
            summary = summary.model_copy(update={"attention_iou": iou})
        summaries.append(summary)
        if progress_callback:
            progress_callback("row_completed", row.label)

    title = grid if isinstance(grid, str) else "Ablation"
    write_report(summaries, output_dir / "ablation_report.csv", console=console, title=f"Ablation: {title}")
    return summaries
