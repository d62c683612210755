"""CSV reports for encodes and RD sweeps."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, List

import pandas as pd
from pydantic import BaseModel

from lib.codec.encoder import EncodeReport

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["scenario", "lambda", "qstep_t", "qstep_p", "nodes", "mask", "rate_bytes", "motion_bytes", "rmse"]
RD_COLUMNS = ["gof", "frame", "mask", "rate_bytes", "distortion", "cost", "selected"]


class SweepRow(BaseModel):
    scenario: str
    lambda_: float
    qstep_t: float
    qstep_p: float
    nodes: int
    # masks chosen per GoF (or per frame), joined with "/"
    mask: str
    # whole stream, headers and I-frames included
    rate_bytes: int
    # P-frame blocks only
    motion_bytes: int
    rmse: float

    def as_record(self) -> dict:
        record = self.model_dump()
        record["lambda"] = record.pop("lambda_")
        return record


def rd_frame(report: EncodeReport) -> pd.DataFrame:
    df = pd.DataFrame([p.model_dump() for p in report.rd_points], columns=RD_COLUMNS)
    return df.rename(columns={"cost": "J"})


def frames_frame(report: EncodeReport) -> pd.DataFrame:
    return pd.DataFrame([f.model_dump() for f in report.frames])


def sweep_frame(rows: Iterable[SweepRow]) -> pd.DataFrame:
    """Sweep rows ordered by rate (then rmse for equal rates)."""
    df = pd.DataFrame([r.as_record() for r in rows], columns=SWEEP_COLUMNS)
    return df.sort_values(["rate_bytes", "rmse"], kind="stable").reset_index(drop=True)


def write_csv(df: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    logger.info("Wrote %d rows to %s", len(df), path)
    return path


def frame_rmse_table(rmse: List[float]) -> pd.DataFrame:
    return pd.DataFrame({"frame": range(len(rmse)), "rmse": rmse})
