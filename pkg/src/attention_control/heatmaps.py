"""Per-token attention heatmap dumps and overlays."""

import json
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from PIL import Image

from ..diffusion.attention import AttentionMapSet
from ..utils.errors import FileIOError, InvalidArgumentError


def _token_slug(name: str) -> str:
    return "".join(c for c in name if c.isalnum() or c in "-_") or "token"


def overlay_heatmap(composite: np.ndarray, heat: np.ndarray, strength: float = 0.6) -> np.ndarray:
    """Blend a [h, w] heatmap in [0, 1] onto an [H, W, 3] composite.

    The heatmap is upsampled by integer nearest-neighbour factors, so cell
    (i, j) covers rows i*fy..(i+1)*fy and columns j*fx..(j+1)*fx.
    """
    height, width = composite.shape[:2]
    map_height, map_width = heat.shape
    if height % map_height or width % map_width:
        raise InvalidArgumentError(
            f"composite {height}x{width} is not an integer multiple of the map {map_height}x{map_width}"
        )
    upsampled = np.kron(heat, np.ones((height // map_height, width // map_width), dtype=heat.dtype))
    red = np.zeros_like(composite)
    red[..., 0] = 1.0
    alpha = (strength * upsampled)[..., None]
    return (composite * (1 - alpha) + red * alpha).astype(np.float32)


def export_heatmaps(
    map_set: AttentionMapSet,
    token_names: Sequence[str],
    directory: Union[str, Path],
    step: int,
    composite: Optional[np.ndarray] = None,
    batch_index: int = 0,
) -> List[Path]:
    """Grayscale PNG, JSON sidecar and optional overlay for every token map"""
    maps = map_set.maps[batch_index].detach().cpu().float().numpy()
    if len(token_names) != maps.shape[0]:
        raise InvalidArgumentError(f"{len(token_names)} token names for {maps.shape[0]} maps")
    directory = Path(directory)
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for token_name, raw in zip(token_names, maps):
            slug = f"step{step:05d}_{map_set.level.value}_{_token_slug(token_name)}"
            peak = float(raw.max())
            heat = raw / peak if peak > 0 else np.zeros_like(raw)

            png_path = directory / f"{slug}.png"
            Image.fromarray((heat * 255).round().astype(np.uint8)).save(png_path)
            written.append(png_path)

            sidecar = {
                "level": map_set.level.value,
                "token": token_name,
                "step": step,
                "size": list(raw.shape),
                "min": float(raw.min()),
                "max": peak,
            }
            sidecar_path = directory / f"{slug}.json"
            sidecar_path.write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
            written.append(sidecar_path)

            if composite is not None:
                overlay = overlay_heatmap(composite, heat)
                overlay_path = directory / f"{slug}_overlay.png"
                Image.fromarray((np.clip(overlay, 0, 1) * 255).round().astype(np.uint8)).save(overlay_path)
                written.append(overlay_path)
    except OSError as e:
        raise FileIOError(f"cannot write heatmaps to {directory}: {e}", str(directory))
    return written
