"""
Attention losses between captured cross-attention maps and guidance masks.

The squared error is averaged over spatial positions (``reduction="mean"``)
or summed (``reduction="sum"``), then averaged over subjects and batch.
"""

from enum import Enum
from typing import Optional, Sequence, Union

import torch

from ..diffusion.attention import AttentionMapSet
from ..utils.errors import InvalidArgumentError
from .masks import stack_guidance
from .models import GuidanceMask


class Reduction(str, Enum):
    MEAN = "mean"
    SUM = "sum"


MapsLike = Union[AttentionMapSet, torch.Tensor]


def _map_tensor(maps: MapsLike) -> torch.Tensor:
    tensor = maps.maps if isinstance(maps, AttentionMapSet) else maps
    if tensor.dim() != 4:
        raise InvalidArgumentError(f"attention maps must be [B, N, h, w], got {tuple(tensor.shape)}")
    return tensor


def attention_loss(
    maps: MapsLike,
    targets: torch.Tensor,
    positive: Optional[torch.Tensor] = None,
    include_positive: bool = True,
    reduction: Union[str, Reduction] = Reduction.MEAN,
) -> torch.Tensor:
    maps = _map_tensor(maps)
    if maps.shape != targets.shape:
        raise InvalidArgumentError(
            f"map size {tuple(maps.shape)} does not match mask size {tuple(targets.shape)}"
        )
    reduction = Reduction(reduction)
    squared = (maps - targets.to(maps.dtype)) ** 2
    if not include_positive:
        if positive is None:
            raise InvalidArgumentError("include_positive=False needs the positive masks")
        squared = squared * (~positive.bool()).to(maps.dtype)
    if reduction == Reduction.MEAN:
        per_subject = squared.mean(dim=(-2, -1))
    else:
        per_subject = squared.sum(dim=(-2, -1))
    return per_subject.mean(dim=1).mean(dim=0)


def attn_loss_pos(
    maps: MapsLike,
    masks: Sequence[Sequence[GuidanceMask]],
    include_positive: bool = True,
    reduction: Union[str, Reduction] = Reduction.MEAN,
) -> torch.Tensor:
    """Loss against the binary subject masks"""
    positive, _ = stack_guidance(masks)
    return attention_loss(maps, positive.float(), positive, include_positive, reduction)


def attn_loss_pos_neg(
    maps: MapsLike,
    masks: Sequence[Sequence[GuidanceMask]],
    include_positive: bool = True,
    reduction: Union[str, Reduction] = Reduction.MEAN,
) -> torch.Tensor:
    """Loss against masks holding 1 inside the subject and eta outside"""
    positive, combined = stack_guidance(masks)
    return attention_loss(maps, combined, positive, include_positive, reduction)
