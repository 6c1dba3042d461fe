import math
from typing import List

from pydantic import BaseModel, Field, model_validator

TOTAL_TOLERANCE = 1e-6


class LossBreakdown(BaseModel):
    """Loss terms of one step; total = recon + alpha * attn + beta * prior"""
    recon: float = Field(description="Noise reconstruction loss")
    attn: float = Field(description="Attention loss")
    prior: float = Field(description="Prior preservation loss")
    total: float = Field(description="Weighted total")
    alpha: float = Field(default=0.2, description="Attention weight used")
    beta: float = Field(default=1.0, description="Prior weight used")

    @model_validator(mode="after")
    def check_total(self):
        expected = self.recon + self.alpha * self.attn + self.beta * self.prior
        if not math.isclose(self.total, expected, rel_tol=TOTAL_TOLERANCE, abs_tol=1e-12):
            raise ValueError(f"total {self.total} does not equal the weighted sum {expected}")
        return self


class TrainableParamSet(BaseModel):
    """Parameter names that receive gradient updates"""
    names: List[str] = Field(default_factory=list, description="Selected parameter names")

    @property
    def cross_attention_names(self) -> List[str]:
        return [name for name in self.names if ".cross_attn." in name]

    @property
    def token_names(self) -> List[str]:
        return [name for name in self.names if name.startswith("text.learnable.")]

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.names)


class TrainingResult(BaseModel):
    """Files and counters produced by a fine-tuning run"""
    checkpoint_path: str
    loss_log_path: str
    steps: int
    heatmap_dir: str = ""
    final: LossBreakdown
