from pathlib import Path
from typing import List, Optional, Tuple

import logfire

from ..composition.manifest import load_asset_manifest, write_synthetic_assets
from ..composition.models import SubjectAsset
from ..diffusion.checkpoint import ModelBundle, load_checkpoint
from ..diffusion.schedule import NoiseSchedule, make_schedule
from ..utils.experiment_config import ExperimentConfig
from .config import TrainConfig
from .dataset import CustomizationDataset
from .models import TrainingResult
from .pretrain import create_base_bundle
from .trainer import ProgressCallback, run_training


def load_subject_assets(experiment: ExperimentConfig, work_dir: Optional[Path] = None) -> List[SubjectAsset]:
    """Assets from the manifest, or rendered synthetic subjects when none is configured"""
    if experiment.assets_manifest is not None:
        return load_asset_manifest(experiment.assets_manifest)
    directory = Path(work_dir or experiment.output_dir) / "assets"
    manifest = write_synthetic_assets(experiment.subject_classes, directory, seed=experiment.seed)
    logfire.info("Generated synthetic subject assets", directory=str(directory), classes=experiment.subject_classes)
    return load_asset_manifest(manifest)


def load_starting_point(experiment: ExperimentConfig) -> Tuple[ModelBundle, NoiseSchedule]:
    if experiment.base_checkpoint is not None:
        loaded = load_checkpoint(experiment.base_checkpoint)
        return loaded.bundle, loaded.schedule
    logfire.warn("No base checkpoint configured, fine-tuning a freshly initialized model")
    bundle = create_base_bundle(experiment.denoiser, seed=experiment.seed)
    return bundle, make_schedule(experiment.schedule.timesteps, experiment.schedule.kind)


def train_from_experiment(
    experiment: ExperimentConfig,
    output_dir: Optional[Path] = None,
    train: Optional[TrainConfig] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> TrainingResult:
    """Assets, starting model, dataset and run_training for one experiment"""
    output_dir = Path(output_dir or experiment.output_dir)
    train = train or experiment.train
    assets = load_subject_assets(experiment, output_dir)
    bundle, schedule = load_starting_point(experiment)
    dataset = CustomizationDataset(assets, train)
    metadata = {"base_checkpoint": str(experiment.base_checkpoint or "")}
    return run_training(train, dataset, bundle, schedule, output_dir, progress_callback, metadata)
