from enum import Enum
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..attention_control.losses import Reduction
from ..attention_control.models import DEFAULT_ETA, MAX_ABS_ETA
from ..composition.synthetic import CATALOGUE
from ..diffusion.attention import AttentionLevel
from ..text.vocabulary import TokenInit


class AblationFlag(str, Enum):
    NO_CONCAT = "no-concat"
    SINGLE_AND_CONCAT = "single-and-concat"
    NO_POS_ATTN = "no-pos-attn"
    NO_NEG_ATTN = "no-neg-attn"
    NO_BACKGROUND_REMOVAL = "no-background-removal"


class PriorLayout(str, Enum):
    SPLIT = "split"  # batch_size is shared: 2 -> 1 composite + 1 prior
    DOUBLE = "double"  # batch_size composites + batch_size priors


class TrainConfig(BaseModel):
    """Fine-tuning settings; defaults are the published ones"""
    model_config = ConfigDict(extra="forbid")

    steps: int = Field(default=500, gt=0, description="Optimizer steps")
    batch_size: int = Field(default=2, gt=0, description="Samples per step")
    learning_rate: float = Field(default=4e-5, gt=0, description="AdamW learning rate")
    weight_decay: float = Field(default=1e-2, ge=0, description="AdamW decoupled weight decay")
    alpha: float = Field(default=0.2, ge=0, description="Attention loss weight")
    beta: float = Field(default=1.0, ge=0, description="Prior preservation loss weight")
    eta: float = Field(default=DEFAULT_ETA, le=0, description="Target value outside subjects")
    levels: List[AttentionLevel] = Field(
        default_factory=lambda: [AttentionLevel.L3], description="Levels supervised by the attention loss"
    )
    prior_image_count: int = Field(default=200, gt=0, description="Class-prior composites to generate")
    seed: int = Field(default=0, description="Seed for data order, noise and timesteps")
    frames: int = Field(default=1, ge=1, description="Frames per training video")
    height: int = Field(default=32, gt=0, description="Training height")
    width: int = Field(default=48, gt=0, description="Training width")
    token_init: TokenInit = Field(default=TokenInit.CLASS_WORD_COPY, description="Learnable token init")
    prior_layout: PriorLayout = Field(default=PriorLayout.SPLIT, description="Composite/prior batching")
    attention_reduction: Reduction = Field(default=Reduction.MEAN, description="Spatial reduction")
    adam_betas: Tuple[float, float] = Field(default=(0.9, 0.999), description="AdamW betas")
    adam_eps: float = Field(default=1e-8, gt=0, description="AdamW epsilon")
    augment: bool = Field(default=True, description="Random flip and crop/zoom augmentation")
    log_every: int = Field(default=10, ge=1, description="Steps between log events")
    heatmap_every: int = Field(default=100, ge=0, description="Steps between heatmap dumps, 0 disables")
    checkpoint_every: int = Field(default=0, ge=0, description="Steps between intermediate checkpoints")
    ablations: List[AblationFlag] = Field(default_factory=list, description="Enabled ablation flags")

    @field_validator("levels", mode="before")
    @classmethod
    def parse_levels(cls, value):
        return [AttentionLevel.parse(level) for level in value]

    @field_validator("eta")
    @classmethod
    def check_eta(cls, value):
        if abs(value) >= MAX_ABS_ETA:
            raise ValueError(f"|eta| must stay below {MAX_ABS_ETA}")
        return value

    def has(self, flag: AblationFlag) -> bool:
        return flag in self.ablations

    @property
    def effective_eta(self) -> float:
        return 0.0 if self.has(AblationFlag.NO_NEG_ATTN) else self.eta

    @property
    def composites_per_step(self) -> int:
        if self.prior_layout == PriorLayout.DOUBLE:
            return self.batch_size
        return (self.batch_size + 1) // 2

    @property
    def priors_per_step(self) -> int:
        if self.prior_layout == PriorLayout.DOUBLE:
            return self.batch_size
        return self.batch_size // 2


class PretrainConfig(BaseModel):
    """Base-model training on synthetic class scenes"""
    model_config = ConfigDict(extra="forbid")

    steps: int = Field(default=3000, gt=0, description="Optimizer steps")
    batch_size: int = Field(default=8, gt=0, description="Videos per step")
    learning_rate: float = Field(default=2e-4, gt=0, description="AdamW learning rate")
    weight_decay: float = Field(default=0.0, ge=0, description="AdamW weight decay")
    frames: int = Field(default=4, ge=1, description="Frames per training video")
    height: int = Field(default=32, gt=0, description="Video height")
    width: int = Field(default=48, gt=0, description="Video width")
    prompt_dropout: float = Field(default=0.1, ge=0, le=1, description="Share of empty prompts")
    max_subjects: int = Field(default=2, ge=1, le=3, description="Subjects per scene")
    drift_pixels: int = Field(default=1, ge=0, description="Horizontal drift per frame")
    classes: List[str] = Field(default_factory=lambda: list(CATALOGUE), description="Scene classes")
    seed: int = Field(default=0, description="Seed for data, noise and initialization")
    log_every: int = Field(default=50, ge=1, description="Steps between log events")

    @field_validator("classes")
    @classmethod
    def known_classes(cls, value):
        unknown = [name for name in value if name not in CATALOGUE]
        if unknown:
            raise ValueError(f"unknown classes: {unknown}")
        if not value:
            raise ValueError("at least one class is required")
        return value
