"""
Oracles for synthetic subjects with known color and shape signatures.

Blobs are connected components of the pixels within ``tolerance`` of a
subject's color; components smaller than ``min_area`` pixels are noise.
"""

from typing import Dict, List, Sequence, Union

import numpy as np
import torch
from scipy import ndimage

from ..attention_control.models import GuidanceMask
from ..composition.synthetic import SubjectSignature, rasterize_shape
from ..diffusion.attention import AttentionMapSet
from ..utils.errors import InvalidArgumentError

DEFAULT_TOLERANCE = 0.2
DEFAULT_MIN_AREA = 6


def color_blobs(
    frame: np.ndarray,
    signature: SubjectSignature,
    tolerance: float = DEFAULT_TOLERANCE,
    min_area: int = DEFAULT_MIN_AREA,
) -> List[np.ndarray]:
    """Boolean masks of the color-matched connected components of ``frame``"""
    distance = np.abs(np.asarray(frame, dtype=np.float32) - np.asarray(signature.color, dtype=np.float32))
    labels, count = ndimage.label(distance.max(axis=-1) <= tolerance)
    blobs = []
    for label in range(1, count + 1):
        blob = labels == label
        if blob.sum() >= min_area:
            blobs.append(blob)
    return blobs


def cooccurrence_oracle(
    frames: Sequence[np.ndarray],
    signatures: Sequence[SubjectSignature],
    tolerance: float = DEFAULT_TOLERANCE,
    min_area: int = DEFAULT_MIN_AREA,
) -> float:
    """Fraction of frames in which every subject has a matching blob"""
    frame_list = list(frames)
    if not frame_list or not signatures:
        return 0.0
    hits = sum(
        all(color_blobs(frame, signature, tolerance, min_area) for signature in signatures)
        for frame in frame_list
    )
    return hits / len(frame_list)


def shape_descriptor(mask: np.ndarray) -> Dict[str, float]:
    """Fill ratio of the bounding box and its height/width aspect"""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    height = rows[-1] - rows[0] + 1
    width = cols[-1] - cols[0] + 1
    return {"fill": float(mask.sum()) / float(height * width), "aspect": height / width}


def reference_descriptor(signature: SubjectSignature, size: int = 64) -> Dict[str, float]:
    mask = rasterize_shape(signature.shape, size, size, (size / 2, size / 2), 0.4 * size)
    return shape_descriptor(mask)


def shape_agreement(observed: Dict[str, float], reference: Dict[str, float]) -> float:
    fill = 1.0 - min(1.0, abs(observed["fill"] - reference["fill"]))
    aspect = min(observed["aspect"], reference["aspect"]) / max(observed["aspect"], reference["aspect"])
    return 0.5 * (fill + aspect)


def identity_scores(
    frames: Sequence[np.ndarray],
    signatures: Sequence[SubjectSignature],
    tolerance: float = DEFAULT_TOLERANCE,
    min_area: int = DEFAULT_MIN_AREA,
) -> Dict[str, float]:
    """Per subject, mean over frames of the best color-matched blob's shape agreement"""
    frame_list = list(frames)
    scores = {}
    for signature in signatures:
        reference = reference_descriptor(signature)
        per_frame = []
        for frame in frame_list:
            blobs = color_blobs(frame, signature, tolerance, min_area)
            per_frame.append(max((shape_agreement(shape_descriptor(b), reference) for b in blobs), default=0.0))
        scores[signature.class_name] = float(np.mean(per_frame)) if per_frame else 0.0
    return scores


MaskLike = Union[GuidanceMask, np.ndarray, torch.Tensor]


def _positive(mask: MaskLike) -> np.ndarray:
    if isinstance(mask, GuidanceMask):
        mask = mask.positive
    if isinstance(mask, torch.Tensor):
        mask = mask.detach().cpu().numpy()
    return np.asarray(mask, dtype=bool)


def attention_iou(
    maps: Union[AttentionMapSet, np.ndarray, torch.Tensor],
    masks: Sequence[MaskLike],
    threshold: float = 0.5,
    normalize: bool = False,
    batch_index: int = 0,
) -> List[float]:
    """IoU between each thresholded token map and its subject mask.

    ``maps`` is an AttentionMapSet or an [N, h, w] array. With ``normalize``
    each map is divided by its maximum before thresholding.
    """
    if isinstance(maps, AttentionMapSet):
        maps = maps.maps[batch_index]
    if isinstance(maps, torch.Tensor):
        maps = maps.detach().cpu().double().numpy()
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 3 or maps.shape[0] != len(masks):
        raise InvalidArgumentError(f"{len(masks)} masks for maps of shape {maps.shape}")

    scores = []
    for token_map, mask in zip(maps, masks):
        positive = _positive(mask)
        if positive.shape != token_map.shape:
            raise InvalidArgumentError(f"map size {token_map.shape} does not match mask size {positive.shape}")
        if normalize:
            peak = token_map.max()
            token_map = token_map / peak if peak > 0 else token_map
        predicted = token_map >= threshold
        union = np.logical_or(predicted, positive).sum()
        if union == 0:
            scores.append(1.0)
            continue
        scores.append(float(np.logical_and(predicted, positive).sum() / union))
    return scores

