"""
Model bundle and checkpoint container.

A checkpoint is a torch-saved dict with a format/version header and a flat
key -> tensor ``state``. Tensor keys follow the module tree, e.g.

    denoiser.levels.2.down.spatial.cross_attn.to_k.weight
    denoiser.levels.2.up.temporal.cross_attn.to_v.weight
    denoiser.levels.2.down.temporal.self_attn.to_q.weight
    text.base_table
    text.learnable.new1
"""

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import torch
import torch.nn as nn

from ..monitoring.logfire_setup import log_checkpoint_saved
from ..text.vocabulary import Vocabulary
from ..utils.errors import CheckpointError, InvalidArgumentError, NotFoundError
from .denoiser import DenoiserConfig, VideoDenoiser
from .schedule import NoiseSchedule, make_schedule

CHECKPOINT_FORMAT = "pairtune-checkpoint"
CHECKPOINT_VERSION = 1


class ModelBundle(nn.Module):
    """Denoiser and vocabulary under one module so parameter names stay stable"""

    def __init__(self, denoiser: VideoDenoiser, text: Vocabulary):
        super().__init__()
        if denoiser.config.text_embedding_width != text.width:
            raise InvalidArgumentError(
                f"vocabulary width {text.width} does not match the denoiser's "
                f"{denoiser.config.text_embedding_width}"
            )
        self.denoiser = denoiser
        self.text = text

    @classmethod
    def create(cls, config: DenoiserConfig, words, max_tokens: int = 40, seed: int = 0) -> "ModelBundle":
        torch.manual_seed(seed)
        denoiser = VideoDenoiser(config)
        vocabulary = Vocabulary(words, width=config.text_embedding_width, max_tokens=max_tokens, seed=seed)
        return cls(denoiser, vocabulary)


@dataclass
class LoadedCheckpoint:
    bundle: ModelBundle
    schedule: NoiseSchedule
    path: Path
    metadata: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(
    path: Union[str, Path],
    bundle: ModelBundle,
    schedule: NoiseSchedule,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write the checkpoint through a temporary sibling file and rename it into place"""
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "denoiser_config": bundle.denoiser.config.model_dump(mode="json"),
        "schedule": schedule.settings(),
        "vocabulary": bundle.text.export_registry(),
        "metadata": dict(metadata or {}),
        "state": {key: value.detach().cpu().clone() for key, value in bundle.state_dict().items()},
    }
    tmp_path = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, tmp_path)
        os.replace(tmp_path, path)
    except OSError as e:
        if tmp_path.exists():
            tmp_path.unlink()
        raise CheckpointError(f"failed to write checkpoint {path}: {e}", str(path))

    log_checkpoint_saved(str(path), len(payload["state"]))
    return path


def load_checkpoint(path: Union[str, Path]) -> LoadedCheckpoint:
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"failed to read checkpoint {path}: {e}", str(path))

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgumentError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"unsupported checkpoint version {payload.get('version')} in {path}")

    config = DenoiserConfig(**payload["denoiser_config"])
    bundle = ModelBundle(VideoDenoiser(config), Vocabulary.from_registry(payload["vocabulary"]))
    try:
        bundle.load_state_dict(payload["state"], strict=True)
    except RuntimeError as e:
        raise InvalidArgumentError(f"checkpoint {path} does not match its declared architecture: {e}")

    schedule = make_schedule(int(payload["schedule"]["timesteps"]), payload["schedule"]["kind"])
    return LoadedCheckpoint(
        bundle=bundle, schedule=schedule, path=path, metadata=dict(payload.get("metadata", {}))
    )
