"""Frame PNGs and manifest.json for sampled videos."""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import torch
from PIL import Image
from pydantic import BaseModel, Field

from ..monitoring.logfire_setup import log_video_written
from ..utils.errors import FileIOError, InvalidArgumentError, NotFoundError

FRAME_PATTERN = "frame_{index:04d}.png"
MANIFEST_NAME = "manifest.json"


class FrameManifest(BaseModel):
    """Metadata written next to a generated frame sequence"""
    prompt: str
    seed: int
    sampler: Dict[str, Any] = Field(default_factory=dict, description="Sampler settings used")
    fps: int = 8
    frame_count: int = 0
    height: int = 0
    width: int = 0
    checkpoint: str = ""
    template_id: Optional[int] = None
    bindings: List[List[str]] = Field(default_factory=list, description="(class, token) per template slot")


def _as_array(frames: Union[torch.Tensor, np.ndarray]) -> np.ndarray:
    array = frames.detach().cpu().float().numpy() if isinstance(frames, torch.Tensor) else np.asarray(frames)
    if array.ndim != 4 or array.shape[-1] != 3:
        raise InvalidArgumentError(f"frames must be [L, H, W, 3], got {array.shape}")
    return array


def export_frames(
    frames: Union[torch.Tensor, np.ndarray],
    directory: Union[str, Path],
    manifest: FrameManifest,
) -> List[Path]:
    """Numbered PNGs plus manifest.json; existing frames in ``directory`` are overwritten"""
    array = _as_array(frames)
    directory = Path(directory)
    manifest = manifest.model_copy(update={
        "frame_count": array.shape[0], "height": array.shape[1], "width": array.shape[2]
    })

    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for stale in directory.glob("frame_*.png"):
            stale.unlink()
        for index, frame in enumerate(array):
            path = directory / FRAME_PATTERN.format(index=index)
            Image.fromarray((np.clip(frame, 0.0, 1.0) * 255).round().astype(np.uint8)).save(path)
            written.append(path)
        manifest_path = directory / MANIFEST_NAME
        manifest_path.write_text(json.dumps(manifest.model_dump(), indent=2), encoding="utf-8")
        written.append(manifest_path)
    except OSError as e:
        raise FileIOError(f"cannot write frames to {directory}: {e}", str(directory))

    log_video_written(str(directory), manifest.prompt, manifest.seed, array.shape[0])
    return written


def load_frames(directory: Union[str, Path]) -> np.ndarray:
    """Read frame_*.png in order -> [L, H, W, 3] float32 in [0, 1]"""
    directory = Path(directory)
    paths = sorted(directory.glob("frame_*.png"))
    if not paths:
        raise NotFoundError(f"no frames found in {directory}")
    frames = []
    for path in paths:
        with Image.open(path) as image:
            frames.append(np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0)
    return np.stack(frames)


def load_manifest(directory: Union[str, Path]) -> FrameManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise NotFoundError(f"frame manifest not found: {path}")
    return FrameManifest(**json.loads(path.read_text(encoding="utf-8")))
