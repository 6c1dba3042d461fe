"""Metric reports, their averages and CSV/rich-table output."""

import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator
from rich.console import Console
from rich.table import Table

from ..monitoring.logfire_setup import log_metric_report
from ..utils.errors import FileIOError, InvalidArgumentError

REPORT_COLUMNS = ["CLIP-T", "CLIP-I", "DINO-I", "T. Cons.", "Co-occ.", "Identity", "Attn IoU"]


class MetricReport(BaseModel):
    """Metrics of one generated video, or the average of several"""
    label: str = Field(default="", description="Row label")
    clip_t: Optional[float] = Field(default=None, description="Textual alignment")
    clip_i: Optional[float] = Field(default=None, description="Image alignment, first extractor")
    dino_i: Optional[float] = Field(default=None, description="Image alignment, second extractor")
    temporal_consistency: Optional[float] = Field(default=None, description="Consecutive-frame similarity")
    cooccurrence: Optional[float] = Field(default=None, description="Share of frames showing every subject")
    identity: Dict[str, float] = Field(default_factory=dict, description="Shape agreement per subject")
    attention_iou: Dict[str, float] = Field(default_factory=dict, description="Map/mask IoU per token")
    video_count: int = Field(default=1, description="Videos averaged into this report")

    @model_validator(mode="after")
    def check_ranges(self):
        for name in ("clip_t", "clip_i", "dino_i", "temporal_consistency"):
            value = getattr(self, name)
            if value is not None and (not math.isfinite(value) or not -1.0 <= value <= 1.0):
                raise ValueError(f"{name} must be a finite cosine in [-1, 1], got {value}")
        values = list(self.identity.values()) + list(self.attention_iou.values())
        if self.cooccurrence is not None:
            values.append(self.cooccurrence)
        for value in values:
            if not math.isfinite(value) or not 0.0 <= value <= 1.0:
                raise ValueError(f"oracle metrics must lie in [0, 1], got {value}")
        return self

    def row(self) -> Dict[str, Optional[float]]:
        """Flat values in report column order"""
        return {
            "label": self.label,
            "CLIP-T": self.clip_t,
            "CLIP-I": self.clip_i,
            "DINO-I": self.dino_i,
            "T. Cons.": self.temporal_consistency,
            "Co-occ.": self.cooccurrence,
            "Identity": float(np.mean(list(self.identity.values()))) if self.identity else None,
            "Attn IoU": float(np.mean(list(self.attention_iou.values()))) if self.attention_iou else None,
        }


def _mean(values: List[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def _mean_dict(dicts: List[Dict[str, float]]) -> Dict[str, float]:
    keys = list(dict.fromkeys(key for d in dicts for key in d))
    return {key: float(np.mean([d[key] for d in dicts if key in d])) for key in keys}


def average_reports(reports: Sequence[MetricReport], label: str = "") -> MetricReport:
    if not reports:
        raise InvalidArgumentError("cannot average an empty list of reports")
    return MetricReport(
        label=label or reports[0].label,
        clip_t=_mean([r.clip_t for r in reports]),
        clip_i=_mean([r.clip_i for r in reports]),
        dino_i=_mean([r.dino_i for r in reports]),
        temporal_consistency=_mean([r.temporal_consistency for r in reports]),
        cooccurrence=_mean([r.cooccurrence for r in reports]),
        identity=_mean_dict([r.identity for r in reports]),
        attention_iou=_mean_dict([r.attention_iou for r in reports]),
        video_count=sum(r.video_count for r in reports),
    )


def reports_frame(reports: Sequence[MetricReport]) -> pd.DataFrame:
    return pd.DataFrame([report.row() for report in reports], columns=["label"] + REPORT_COLUMNS)


def render_table(reports: Sequence[MetricReport], title: str = "Evaluation") -> Table:
    table = Table(show_header=True, header_style="bold magenta", title=title)
    table.add_column("Method", style="cyan")
    for column in REPORT_COLUMNS:
        table.add_column(column, justify="right")
    for report in reports:
        row = report.row()
        table.add_row(
            row["label"] or "-",
            *("-" if row[column] is None else f"{row[column]:.4f}" for column in REPORT_COLUMNS),
        )
    return table


def write_report(
    reports: Sequence[MetricReport],
    path: Union[str, Path],
    console: Optional[Console] = None,
    title: str = "Evaluation",
) -> Path:
    """CSV with the report columns; the same rows are printed as a rich table when a console is given"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        reports_frame(reports).to_csv(path, index=False)
    except OSError as e:
        raise FileIOError(f"cannot write report {path}: {e}", str(path))

    for report in reports:
        log_metric_report(report.label, {k: v for k, v in report.row().items() if k != "label" and v is not None})
    if console is not None:
        console.print(render_table(reports, title))
    return path
