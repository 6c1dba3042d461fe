"""Per-step loss history of a run, persisted as CSV."""

from pathlib import Path
from typing import Any, Dict, List, Union

import pandas as pd
from pydantic import BaseModel

from ..utils.errors import FileIOError, NotFoundError
from .models import LossBreakdown

CSV_COLUMNS = ["step", "recon", "attn", "prior", "total"]


class LossRecord(BaseModel):
    """Loss terms recorded for one optimizer step"""
    step: int
    recon: float
    attn: float
    prior: float
    total: float


class LossLog:
    """Per-step loss history with CSV persistence"""

    def __init__(self):
        self.records: List[LossRecord] = []

    def append(self, step: int, breakdown: LossBreakdown) -> LossRecord:
        record = LossRecord(
            step=step,
            recon=breakdown.recon,
            attn=breakdown.attn,
            prior=breakdown.prior,
            total=breakdown.total,
        )
        self.records.append(record)
        return record

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([record.model_dump() for record in self.records], columns=CSV_COLUMNS)

    def save_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.to_frame().to_csv(path, index=False)
        except OSError as e:
            raise FileIOError(f"cannot write loss log {path}: {e}", str(path))
        return path

    @classmethod
    def load_csv(cls, path: Union[str, Path]) -> "LossLog":
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"loss log not found: {path}")
        log = cls()
        for row in pd.read_csv(path).to_dict(orient="records"):
            log.records.append(LossRecord(**row))
        return log

    def summary(self) -> Dict[str, Any]:
        """Run statistics for display and checkpoint metadata"""
        if not self.records:
            return {"steps": 0}

        frame = self.to_frame()
        return {
            "steps": len(self.records),
            "final_total": float(frame["total"].iloc[-1]),
            "mean_total": float(frame["total"].mean()),
            "min_total": float(frame["total"].min()),
            "mean_recon": float(frame["recon"].mean()),
            "mean_attn": float(frame["attn"].mean()),
            "mean_prior": float(frame["prior"].mean()),
        }
