"""
Miniature text-conditioned video denoiser.

Four resolution levels, each with a residual block, a spatial transformer
(text cross-attention) and a temporal transformer (frame self-attention plus
text cross-attention), on both the down and the up path.
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange, repeat
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..utils.errors import InvalidArgumentError
from .attention import (
    ALL_LEVELS,
    AttentionLevel,
    AttentionMapSet,
    AttentionTap,
    CrossAttention,
    build_map_set,
    reduce_attention,
)
from .schedule import Timestep, validate_latent


class DenoiserConfig(BaseModel):
    """Architecture of the video denoiser"""
    model_config = ConfigDict(extra="forbid")

    level_channel_counts: List[int] = Field(
        default_factory=lambda: [32, 64, 96, 128],
        description="Channel width of each of the four resolution levels",
    )
    attention_head_count: int = Field(default=4, ge=1, description="Heads per attention layer")
    text_embedding_width: int = Field(default=64, ge=1, description="Width of the text embedding")
    temporal_layers_enabled: bool = Field(default=True, description="Add temporal transformers")
    in_channels: int = Field(default=3, ge=1, description="Latent channel count D")
    input_stride: int = Field(default=2, ge=1, description="Stride of the stem convolution")
    time_embedding_width: int = Field(default=128, ge=2, description="Timestep embedding width")
    max_frames: int = Field(default=32, ge=1, description="Frames covered by the temporal position table")
    cross_attention_levels: List[AttentionLevel] = Field(
        default_factory=lambda: list(ALL_LEVELS),
        description="Levels that carry text cross-attention",
    )

    @field_validator("cross_attention_levels", mode="before")
    @classmethod
    def parse_levels(cls, value):
        return [AttentionLevel.parse(level) for level in value]

    @model_validator(mode="after")
    def check_levels(self):
        if len(self.level_channel_counts) != 4:
            raise ValueError("exactly 4 level channel counts are required")
        for channels in self.level_channel_counts:
            if channels < 1 or channels % self.attention_head_count:
                raise ValueError(
                    f"channel count {channels} must be positive and divisible by "
                    f"{self.attention_head_count} heads"
                )
        if self.time_embedding_width % 2:
            raise ValueError("time_embedding_width must be even")
        return self

    @property
    def spatial_divisor(self) -> int:
        return self.input_stride * 2 ** 3


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, channels), channels)


def timestep_embedding(t: torch.Tensor, width: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps -> [B, width]"""
    half = width // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None, :].to(t.device)
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def frame_position_table(frames: int, width: int) -> torch.Tensor:
    positions = torch.arange(frames, dtype=torch.float32)[:, None]
    half = width // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half, 1))
    table = torch.zeros(frames, width)
    table[:, 0:2 * half:2] = torch.sin(positions * freqs)
    table[:, 1:2 * half:2] = torch.cos(positions * freqs)
    return table


class ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, time_width: int):
        super().__init__()
        self.norm1 = _norm(in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(time_width, out_channels)
        self.norm2 = _norm(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = (
            nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()
        )

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class SpatialTransformer(nn.Module):
    """Text cross-attention over the spatial locations of each frame"""

    def __init__(self, channels: int, context_dim: int, heads: int):
        super().__init__()
        self.norm = _norm(channels)
        self.proj_in = nn.Conv2d(channels, channels, 1)
        self.norm1 = nn.LayerNorm(channels)
        self.cross_attn = CrossAttention(channels, context_dim, heads)
        self.norm2 = nn.LayerNorm(channels)
        self.ff = nn.Sequential(
            nn.Linear(channels, channels * 4), nn.GELU(), nn.Linear(channels * 4, channels)
        )
        self.proj_out = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        _, _, height, width = x.shape
        h = self.proj_in(self.norm(x))
        h = rearrange(h, "n c h w -> n (h w) c")
        attended, probs = self.cross_attn(self.norm1(h), context)
        h = h + attended
        h = h + self.ff(self.norm2(h))
        h = rearrange(h, "n (h w) c -> n c h w", h=height, w=width)
        return x + self.proj_out(h), probs


class TemporalTransformer(nn.Module):
    """Self-attention across frames at every location, then text cross-attention"""

    def __init__(self, channels: int, context_dim: Optional[int], heads: int, max_frames: int):
        super().__init__()
        self.register_buffer(
            "frame_positions", frame_position_table(max_frames, channels), persistent=False
        )
        self.norm1 = nn.LayerNorm(channels)
        self.self_attn = CrossAttention(channels, None, heads)
        self.norm2 = nn.LayerNorm(channels)
        self.cross_attn = CrossAttention(channels, context_dim, heads) if context_dim else None
        self.proj_out = nn.Linear(channels, channels)
        nn.init.zeros_(self.proj_out.weight)
        nn.init.zeros_(self.proj_out.bias)

    def forward(self, x: torch.Tensor, context: torch.Tensor, frames: int) -> torch.Tensor:
        _, _, height, width = x.shape
        if frames > self.frame_positions.shape[0]:
            raise InvalidArgumentError(
                f"{frames} frames exceed the temporal table of {self.frame_positions.shape[0]}"
            )
        h = rearrange(x, "(b l) c h w -> (b h w) l c", l=frames)
        h = h + self.frame_positions[:frames][None]
        h = h + self.self_attn(self.norm1(h))[0]
        if self.cross_attn is not None:
            per_location = repeat(context, "b t c -> (b n) t c", n=height * width)
            h = h + self.cross_attn(self.norm2(h), per_location)[0]
        h = self.proj_out(h)
        h = rearrange(h, "(b h w) l c -> (b l) c h w", h=height, w=width)
        return x + h


class StageBlock(nn.Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        config: DenoiserConfig,
        with_cross_attention: bool,
    ):
        super().__init__()
        self.res = ResBlock(in_channels, out_channels, config.time_embedding_width)
        self.spatial = (
            SpatialTransformer(out_channels, config.text_embedding_width, config.attention_head_count)
            if with_cross_attention
            else None
        )
        self.temporal = (
            TemporalTransformer(
                out_channels,
                config.text_embedding_width if with_cross_attention else None,
                config.attention_head_count,
                config.max_frames,
            )
            if config.temporal_layers_enabled
            else None
        )

    def forward(
        self,
        x: torch.Tensor,
        temb: torch.Tensor,
        frame_context: torch.Tensor,
        context: torch.Tensor,
        frames: int,
    ) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        h = self.res(x, temb)
        probs = None
        if self.spatial is not None:
            h, probs = self.spatial(h, frame_context)
        if self.temporal is not None:
            h = self.temporal(h, context, frames)
        return h, probs


class LevelBlocks(nn.Module):
    def __init__(self, index: int, config: DenoiserConfig):
        super().__init__()
        channels = config.level_channel_counts
        level_channels = channels[index]
        down_in = channels[max(index - 1, 0)]
        up_in = (channels[index + 1] if index < 3 else channels[3]) + level_channels
        with_cross = ALL_LEVELS[index] in config.cross_attention_levels

        self.down = StageBlock(down_in, level_channels, config, with_cross)
        self.downsample = (
            nn.Conv2d(level_channels, level_channels, 3, stride=2, padding=1) if index < 3 else None
        )
        self.up = StageBlock(up_in, level_channels, config, with_cross)
        self.upsample = nn.Conv2d(level_channels, level_channels, 3, padding=1) if index > 0 else None


class VideoDenoiser(nn.Module):
    """Noise predictor eps_theta(z_t, c, t) over [B, L, H, W, D] latents"""

    def __init__(self, config: Optional[DenoiserConfig] = None):
        super().__init__()
        self.config = config or DenoiserConfig()
        cfg = self.config
        channels = cfg.level_channel_counts
        time_width = cfg.time_embedding_width

        self.time_mlp = nn.Sequential(
            nn.Linear(time_width, time_width), nn.SiLU(), nn.Linear(time_width, time_width)
        )
        self.stem = nn.Conv2d(cfg.in_channels, channels[0], 3, stride=cfg.input_stride, padding=1)
        self.levels = nn.ModuleList([LevelBlocks(k, cfg) for k in range(4)])
        self.mid = ResBlock(channels[3], channels[3], time_width)
        self.out_norm = _norm(channels[0])
        self.out_conv = nn.Conv2d(channels[0], cfg.in_channels, 3, padding=1)

    def check_input(self, zt: torch.Tensor, text_embedding: torch.Tensor):
        validate_latent(zt, "zt")
        batch, frames, height, width, depth = zt.shape
        divisor = self.config.spatial_divisor
        if height % divisor or width % divisor:
            raise InvalidArgumentError(f"spatial size {height}x{width} must be divisible by {divisor}")
        if depth != self.config.in_channels:
            raise InvalidArgumentError(f"expected {self.config.in_channels} channels, got {depth}")
        if text_embedding.dim() != 3 or text_embedding.shape[0] != batch:
            raise InvalidArgumentError("text embedding must be [B, tokens, width] with matching batch")
        if text_embedding.shape[-1] != self.config.text_embedding_width:
            raise InvalidArgumentError(
                f"text embedding width {text_embedding.shape[-1]} does not match "
                f"{self.config.text_embedding_width}"
            )
        if frames > self.config.max_frames:
            raise InvalidArgumentError(f"{frames} frames exceed max_frames={self.config.max_frames}")

    def forward(
        self,
        zt: torch.Tensor,
        t: torch.Tensor,
        text_embedding: torch.Tensor,
        capture: Sequence[AttentionLevel] = (),
    ) -> Tuple[torch.Tensor, Dict[AttentionLevel, List[torch.Tensor]]]:
        batch, frames, height, width, _ = zt.shape
        captured: Dict[AttentionLevel, List[torch.Tensor]] = {level: [] for level in capture}

        temb = self.time_mlp(timestep_embedding(t, self.config.time_embedding_width).to(zt.dtype))
        temb = repeat(temb, "b c -> (b l) c", l=frames)
        frame_context = repeat(text_embedding, "b t c -> (b l) t c", l=frames)

        h = self.stem(rearrange(zt, "b l h w d -> (b l) d h w"))
        skips = []
        for k, level in enumerate(self.levels):
            h, probs = level.down(h, temb, frame_context, text_embedding, frames)
            if probs is not None and ALL_LEVELS[k] in captured:
                captured[ALL_LEVELS[k]].append(probs)
            skips.append(h)
            if level.downsample is not None:
                h = level.downsample(h)

        h = self.mid(h, temb)

        for k in reversed(range(4)):
            level = self.levels[k]
            h = torch.cat([h, skips[k]], dim=1)
            h, probs = level.up(h, temb, frame_context, text_embedding, frames)
            if probs is not None and ALL_LEVELS[k] in captured:
                captured[ALL_LEVELS[k]].append(probs)
            if level.upsample is not None:
                h = level.upsample(F.interpolate(h, scale_factor=2, mode="nearest"))

        h = F.silu(self.out_norm(h))
        h = F.interpolate(h, scale_factor=self.config.input_stride, mode="nearest")
        out = self.out_conv(h)
        out = rearrange(out, "(b l) d h w -> b l h w d", b=batch, l=frames)
        return out, captured


def _as_timestep_tensor(t: Timestep, batch: int, device: torch.device) -> torch.Tensor:
    if isinstance(t, torch.Tensor):
        t = t.to(device=device, dtype=torch.long).reshape(-1)
        if t.numel() == 1:
            t = t.expand(batch)
        if t.numel() != batch:
            raise InvalidArgumentError("timestep tensor needs one entry per batch element")
        return t
    return torch.full((batch,), int(t), dtype=torch.long, device=device)


def predict_noise(
    model: VideoDenoiser,
    zt: torch.Tensor,
    text_embedding: torch.Tensor,
    t: Timestep,
    taps: Sequence[AttentionTap] = (),
) -> Tuple[torch.Tensor, List[AttentionMapSet]]:
    """Predict the noise in ``zt`` and fill every requested attention tap.

    Captured maps are averaged over heads, frames and over the down and up
    layers of the tapped level.
    """
    model.check_input(zt, text_embedding)
    for tap in taps:
        if tap.level not in model.config.cross_attention_levels:
            raise InvalidArgumentError(f"level {tap.level.value} has no cross-attention layer")

    batch, frames, height, width, _ = zt.shape
    levels = list(dict.fromkeys(tap.level for tap in taps))
    timesteps = _as_timestep_tensor(t, batch, zt.device)
    eps_pred, captured = model(zt, timesteps, text_embedding, capture=levels)

    map_sets = []
    stride = model.config.input_stride
    for tap in taps:
        map_height = height // (stride * 2 ** (tap.level.index - 1))
        map_width = width // (stride * 2 ** (tap.level.index - 1))
        all_tokens = reduce_attention(captured[tap.level], batch, frames, map_height, map_width)
        tap.captured = build_map_set(tap.level, all_tokens, tap.indices_for_batch(batch))
        map_sets.append(tap.captured)
    return eps_pred, map_sets
