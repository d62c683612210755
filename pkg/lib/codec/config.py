from __future__ import annotations

import logging
from enum import StrEnum
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from lib.coding.entropy import snap_step
from lib.errors import ConfigError
from lib.mesh.models import SegmentationConfig
from lib.motion.affine import CombinationMask
from lib.motion.keynodes import GeneratorConfig
from lib.motion.solver import SolverConfig
from lib.settings import settings

logger = logging.getLogger(__name__)


class RDStrategy(StrEnum):
    # mask chosen on the first P-frame, reused for the whole GoF
    FIRST_P = "first-p"
    PER_FRAME = "per-frame"


class RDConfig(BaseModel):
    lambda_: float = Field(default=1e-4, alias="lambda")
    strategy: RDStrategy = RDStrategy.FIRST_P

    model_config = ConfigDict(populate_by_name=True)

    @field_validator("lambda_")
    def lambda_non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("lambda must be >= 0")
        return v


class ToggleConfig(BaseModel):
    seg_corr: bool = True
    translation_predcode: bool = True


class CodecConfig(BaseModel):
    gof_size: int = Field(default=8, le=0xFFFFFFFF)
    # position inside the GoF of the frame used for node generation, stored as u8
    key_pframe_index: int = Field(default=1, le=255)

    qstep_t: float = 1e-3
    qstep_p: float = 1e-3
    qstep_nodes: float = 1e-3

    up_axis: Literal["x", "y", "z"] = "y"

    # bypasses RD selection when set
    forced_mask: Optional[CombinationMask] = None

    segmentation: SegmentationConfig = SegmentationConfig()
    rd: RDConfig = RDConfig()
    solver: SolverConfig = SolverConfig()
    generator: GeneratorConfig = GeneratorConfig()
    toggles: ToggleConfig = ToggleConfig()

    @field_validator("qstep_t", "qstep_p", "qstep_nodes")
    def snap_qstep(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("quantization steps must be > 0")
        return snap_step(v)

    @field_validator("forced_mask", mode="before")
    def parse_mask(cls, v: Any) -> Any:
        return CombinationMask.parse(v) if isinstance(v, (str, int)) else v

    @model_validator(mode="after")
    def check_gof(self) -> "CodecConfig":
        if self.gof_size < 2:
            raise ValueError("gof_size must be >= 2")
        if not 1 <= self.key_pframe_index < self.gof_size:
            raise ValueError("key_pframe_index must lie in [1, gof_size)")
        if self.forced_mask is not None and not self.forced_mask.is_legal:
            raise ValueError("forced_mask must enable translation")
        return self

    @property
    def effective_solver(self) -> SolverConfig:
        """Solver settings with the codec-wide segmentation and toggles applied."""
        return self.solver.model_copy(
            update={"segmentation": self.segmentation, "seg_corr_enabled": self.toggles.seg_corr}
        )

    @property
    def q(self) -> int:
        return self.solver.q

    @classmethod
    def load_config(cls, path: str | Path | None = None) -> CodecConfig:
        """Load codec configuration from a YAML file (``settings.config_path`` by default)."""
        path = Path(path or settings.config_path)
        try:
            parsed = yaml.safe_load(path.read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(parsed, dict):
            raise ConfigError(f"{path} must contain a mapping")
        # a scenario file may carry the codec settings under "codec"
        parsed = parsed.get("codec", parsed)
        try:
            config = cls(**parsed)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        logger.info("Loaded codec configuration from %s", path)
        return config
