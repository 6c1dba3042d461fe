"""Guidance masks and their downsampling to attention-level resolution."""

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from ..diffusion.attention import AttentionLevel, level_size
from ..utils.errors import InvalidArgumentError
from .models import DEFAULT_ETA, GuidanceMask, check_eta

MaskLike = Union[np.ndarray, torch.Tensor]


def _as_bool_tensor(mask: MaskLike) -> torch.Tensor:
    if isinstance(mask, np.ndarray):
        mask = torch.from_numpy(np.ascontiguousarray(mask))
    if mask.dim() != 2:
        raise InvalidArgumentError(f"masks must be 2-D, got shape {tuple(mask.shape)}")
    return mask.bool()


def build_guidance_mask(subject_mask: MaskLike, eta: float = DEFAULT_ETA) -> GuidanceMask:
    positive = _as_bool_tensor(subject_mask)
    if not positive.any():
        raise InvalidArgumentError("guidance mask needs a nonempty subject mask")
    eta = check_eta(eta)
    combined = torch.where(
        positive, torch.ones((), dtype=torch.float32), torch.tensor(eta, dtype=torch.float32)
    )
    return GuidanceMask(positive=positive, combined=combined, eta=eta)


def downsample_mask(
    mask: MaskLike,
    level: Union[str, int, AttentionLevel],
    input_size: Optional[Tuple[int, int]] = None,
    base_stride: int = 8,
    keep_nonempty: bool = False,
) -> torch.Tensor:
    """Area-average pool to the level's size, then binarize at 0.5.

    With ``keep_nonempty`` a nonempty mask that pools to nothing keeps its
    best-covered cell.
    """
    mask = _as_bool_tensor(mask)
    if input_size is not None and tuple(input_size) != tuple(mask.shape):
        raise InvalidArgumentError(f"mask shape {tuple(mask.shape)} differs from input size {input_size}")
    height, width = level_size(tuple(mask.shape), level, base_stride)
    factor = mask.shape[0] // height
    coverage = F.avg_pool2d(mask.float()[None, None], kernel_size=factor)[0, 0]
    pooled = coverage >= 0.5
    if keep_nonempty and mask.any() and not pooled.any():
        flat = int(torch.argmax(coverage))
        pooled.view(-1)[flat] = True
    return pooled


def level_guidance(
    subject_masks: Sequence[MaskLike],
    level: Union[str, int, AttentionLevel],
    eta: float = DEFAULT_ETA,
    base_stride: int = 8,
) -> List[GuidanceMask]:
    """Guidance masks of every subject of one sample at one level"""
    return [
        build_guidance_mask(downsample_mask(mask, level, base_stride=base_stride, keep_nonempty=True), eta)
        for mask in subject_masks
    ]


def stack_guidance(masks: Sequence[Sequence[GuidanceMask]]) -> Tuple[torch.Tensor, torch.Tensor]:
    """[B][N] guidance masks -> (positive [B, N, h, w] bool, combined [B, N, h, w])"""
    if not masks or not masks[0]:
        raise InvalidArgumentError("no guidance masks given")
    counts = {len(row) for row in masks}
    if len(counts) != 1:
        raise InvalidArgumentError("every batch element needs the same number of subject masks")
    positive = torch.stack([torch.stack([m.positive for m in row]) for row in masks])
    combined = torch.stack([torch.stack([m.combined for m in row]) for row in masks])
    return positive, combined
