from typing import Any, Dict, List

from pydantic import BaseModel, Field

from ..utils.errors import InvalidArgumentError
from .config import AblationFlag, TrainConfig


class AblationRow(BaseModel):
    """One row of an ablation table: a label plus the settings it changes"""
    label: str = Field(description="Row label as printed in the report")
    ablations: List[AblationFlag] = Field(default_factory=list, description="Flags enabled for this row")
    overrides: Dict[str, Any] = Field(default_factory=dict, description="TrainConfig fields to replace")

    def apply(self, config: TrainConfig) -> TrainConfig:
        values = config.model_dump()
        values.update(self.overrides)
        values["ablations"] = list(dict.fromkeys(list(config.ablations) + list(self.ablations)))
        return TrainConfig(**values)


def component_grid() -> List[AblationRow]:
    return [
        AblationRow(label="w/o remove bg", ablations=[AblationFlag.NO_BACKGROUND_REMOVAL]),
        AblationRow(label="w/o concat", ablations=[AblationFlag.NO_CONCAT]),
        AblationRow(label="both single and concat", ablations=[AblationFlag.SINGLE_AND_CONCAT]),
        AblationRow(label="w/o pos. attn.", ablations=[AblationFlag.NO_POS_ATTN]),
        AblationRow(label="w/o neg. attn.", ablations=[AblationFlag.NO_NEG_ATTN]),
        AblationRow(label="full"),
    ]


LEVEL_COMBINATIONS = [
    ["l1"], ["l2"], ["l3"], ["l4"],
    ["l1", "l2"], ["l3", "l4"], ["l2", "l3"], ["l1", "l4"],
    ["l1", "l2", "l3", "l4"],
]


def level_grid() -> List[AblationRow]:
    return [
        AblationRow(label="+".join(combo), overrides={"levels": combo}) for combo in LEVEL_COMBINATIONS
    ]


def alpha_grid() -> List[AblationRow]:
    return [AblationRow(label=f"alpha={alpha}", overrides={"alpha": alpha}) for alpha in (1.0, 0.2, 0.01)]


def eta_grid() -> List[AblationRow]:
    return [AblationRow(label=f"eta={eta:g}", overrides={"eta": eta}) for eta in (-1e-5, -1e-8, -1e-11)]


def reduction_grid() -> List[AblationRow]:
    """Spatial mean versus spatial sum inside the attention loss"""
    return [
        AblationRow(label="mean", overrides={"attention_reduction": "mean"}),
        AblationRow(label="sum", overrides={"attention_reduction": "sum"}),
    ]


ABLATION_GRIDS = {
    "components": component_grid,
    "levels": level_grid,
    "alpha": alpha_grid,
    "eta": eta_grid,
    "reduction": reduction_grid,
}


def get_grid(name: str) -> List[AblationRow]:
    factory = ABLATION_GRIDS.get(name)
    if factory is None:
        raise InvalidArgumentError(f"Unknown ablation grid: {name}. Choose from {sorted(ABLATION_GRIDS)}")
    return factory()
