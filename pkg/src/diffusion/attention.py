"""
Cross-attention layers instrumented to expose their attention maps.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
from einops import rearrange

from ..utils.errors import InvalidArgumentError


class AttentionLevel(str, Enum):
    """Resolution tier of a cross-attention layer; l1 is the finest"""
    L1 = "l1"
    L2 = "l2"
    L3 = "l3"
    L4 = "l4"

    @property
    def index(self) -> int:
        return int(self.value[1])

    @classmethod
    def parse(cls, value: Union[str, int, "AttentionLevel"]) -> "AttentionLevel":
        if isinstance(value, AttentionLevel):
            return value
        text = str(value).strip().lower().replace("ℓ", "l")
        if text.isdigit():
            text = f"l{text}"
        try:
            return cls(text)
        except ValueError:
            raise InvalidArgumentError(f"Unknown attention level: {value}")


ALL_LEVELS = [AttentionLevel.L1, AttentionLevel.L2, AttentionLevel.L3, AttentionLevel.L4]


def level_size(
    input_size: Tuple[int, int],
    level: Union[str, int, AttentionLevel],
    base_stride: int = 8,
) -> Tuple[int, int]:
    """(height, width) of the feature map at ``level``.

    The map is input / (base_stride * 2^(level - 1)); base_stride 8 gives the
    input / 2^(level + 2) rule, so 320x576 maps to 40x72, 20x36, 10x18, 5x9.
    """
    level = AttentionLevel.parse(level)
    factor = base_stride * 2 ** (level.index - 1)
    height, width = input_size
    if height % factor or width % factor:
        raise InvalidArgumentError(
            f"input size {height}x{width} is not divisible by {factor} at level {level.value}"
        )
    return height // factor, width // factor


def attention_probs(query: torch.Tensor, key: torch.Tensor, scale: float) -> torch.Tensor:
    """softmax(Q K^T * scale) over the key axis"""
    scores = torch.einsum("bhsd,bhtd->bhst", query, key) * scale
    return scores.softmax(dim=-1)


class CrossAttention(nn.Module):
    """Multi-head attention from feature locations to a context sequence.

    With no context the layer attends over its own input. Key and value
    projections are separate bias-free linear layers so they can be selected
    by name for fine-tuning.
    """

    def __init__(self, query_dim: int, context_dim: Optional[int] = None, heads: int = 4):
        super().__init__()
        if query_dim % heads:
            raise InvalidArgumentError(f"width {query_dim} not divisible by {heads} heads")
        context_dim = context_dim or query_dim
        self.heads = heads
        self.dim_head = query_dim // heads
        self.scale = self.dim_head ** -0.5

        self.to_q = nn.Linear(query_dim, query_dim, bias=False)
        self.to_k = nn.Linear(context_dim, query_dim, bias=False)
        self.to_v = nn.Linear(context_dim, query_dim, bias=False)
        self.to_out = nn.Linear(query_dim, query_dim)

    def forward(
        self, x: torch.Tensor, context: Optional[torch.Tensor] = None
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """x: [N, S, C], context: [N, T, C_ctx] -> (features [N, S, C], probs [N, heads, S, T])"""
        context = x if context is None else context
        if context.shape[0] != x.shape[0]:
            raise InvalidArgumentError("query and context batch sizes differ")

        q = rearrange(self.to_q(x), "n s (h d) -> n h s d", h=self.heads)
        k = rearrange(self.to_k(context), "n t (h d) -> n h t d", h=self.heads)
        v = rearrange(self.to_v(context), "n t (h d) -> n h t d", h=self.heads)

        probs = attention_probs(q, k, self.scale)
        out = torch.einsum("bhst,bhtd->bhsd", probs, v)
        out = rearrange(out, "n h s d -> n s (h d)")
        return self.to_out(out), probs


def cross_attention(
    layer: CrossAttention, query_features: torch.Tensor, key_value_source: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Run one cross-attention layer and return (features, attention map)"""
    if query_features.dim() != 3 or key_value_source.dim() != 3:
        raise InvalidArgumentError("cross_attention expects [N, S, C] queries and [N, T, C] keys")
    return layer(query_features, key_value_source)


@dataclass
class AttentionMapSet:
    """Per-token spatial attention maps captured at one level.

    ``all_tokens`` holds the map of every prompt position, ``maps`` the maps of
    the requested (learnable) token positions in subject order.
    """
    level: AttentionLevel
    maps: torch.Tensor  # [B, N, h, w]
    all_tokens: torch.Tensor  # [B, T, h, w]
    token_indices: List[List[int]]

    @property
    def per_token_maps(self) -> List[torch.Tensor]:
        return [self.maps[:, j] for j in range(self.maps.shape[1])]

    @property
    def spatial_size(self) -> Tuple[int, int]:
        return tuple(self.maps.shape[-2:])


@dataclass
class AttentionTap:
    """Request for the attention maps of some token positions at one level.

    ``token_indices`` is either one list shared by the whole batch or one
    list per batch element. ``captured`` is filled by the forward pass.
    """
    level: AttentionLevel
    token_indices: Union[Sequence[int], Sequence[Sequence[int]]] = field(default_factory=list)
    captured: Optional[AttentionMapSet] = None

    def __post_init__(self):
        self.level = AttentionLevel.parse(self.level)

    def indices_for_batch(self, batch_size: int) -> List[List[int]]:
        indices = list(self.token_indices)
        if not indices or isinstance(indices[0], int):
            return [list(indices) for _ in range(batch_size)]
        if len(indices) != batch_size:
            raise InvalidArgumentError("token_indices needs one entry per batch element")
        counts = {len(row) for row in indices}
        if len(counts) > 1:
            raise InvalidArgumentError("every batch element must request the same number of tokens")
        return [list(row) for row in indices]


def reduce_attention(
    layer_probs: List[torch.Tensor],
    batch_size: int,
    frames: int,
    height: int,
    width: int,
) -> torch.Tensor:
    """Average captured probabilities over heads, frames and layers -> [B, T, h, w]"""
    reduced = []
    for probs in layer_probs:
        per_head = probs.mean(dim=1)
        per_frame = rearrange(
            per_head, "(b l) (h w) t -> b l t h w", b=batch_size, l=frames, h=height, w=width
        )
        reduced.append(per_frame.mean(dim=1))
    return torch.stack(reduced, dim=0).mean(dim=0)


def build_map_set(
    level: AttentionLevel,
    all_tokens: torch.Tensor,
    token_indices: List[List[int]],
) -> AttentionMapSet:
    token_count = all_tokens.shape[1]
    for row in token_indices:
        for index in row:
            if not 0 <= index < token_count:
                raise InvalidArgumentError(f"token index {index} outside the prompt (length {token_count})")
    if token_indices and token_indices[0]:
        index = torch.tensor(token_indices, dtype=torch.long, device=all_tokens.device)
        gather_index = index[:, :, None, None].expand(-1, -1, *all_tokens.shape[-2:])
        maps = torch.gather(all_tokens, 1, gather_index)
    else:
        maps = all_tokens[:, :0]
    return AttentionMapSet(level=level, maps=maps, all_tokens=all_tokens, token_indices=token_indices)
