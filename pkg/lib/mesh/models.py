from __future__ import annotations

from enum import IntEnum, StrEnum
from functools import cached_property
from typing import Any, FrozenSet, List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class BodyPart(IntEnum):
    """Segmentation labels. Ordinal order is the traversal order of body parts."""

    HEAD = 0
    LEFT_UPPER_ARM = 1
    LEFT_LOWER_ARM = 2
    LEFT_HAND = 3
    RIGHT_UPPER_ARM = 4
    RIGHT_LOWER_ARM = 5
    RIGHT_HAND = 6
    TORSO = 7
    LEFT_THIGH = 8
    LEFT_LEG = 9
    LEFT_FOOT = 10
    RIGHT_THIGH = 11
    RIGHT_LEG = 12
    RIGHT_FOOT = 13

    @property
    def display_name(self) -> str:
        """CamelCase name, e.g. ``LeftUpperArm``."""
        return "".join(word.capitalize() for word in self.name.split("_"))

    @classmethod
    def parse(cls, value: Any) -> "BodyPart":
        """Accept ordinals, enum names (``LEFT_HAND``) or display names (``LeftHand``)."""
        if isinstance(value, BodyPart):
            return value
        if isinstance(value, int):
            return cls(value)
        text = str(value).strip()
        if text.isdigit():
            return cls(int(text))
        normalized = text.replace("_", "").replace("-", "").replace(" ", "").lower()
        for part in cls:
            if part.name.replace("_", "").lower() == normalized:
                return part
        raise ValueError(f"Unknown body part '{value}'")


class SegmentationMode(StrEnum):
    AUTO = "auto"
    MANUAL = "manual"
    # no label filtering and no affine typing: the all-rigid baseline
    OFF = "off"


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class Mesh(BaseModel):
    """One frame: vertex positions, triangle connectivity and optional per-vertex labels.

    Arrays are copied on construction and made read-only, so a Mesh can be
    shared between threads without locking.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    vertices: np.ndarray
    faces: np.ndarray = Field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    labels: np.ndarray | None = None

    @field_validator("vertices", mode="before")
    def to_vertex_array(cls, v: Any) -> np.ndarray:
        array = np.array(v, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(array)):
            raise ValueError("vertex positions must be finite")
        return _readonly(array)

    @field_validator("faces", mode="before")
    def to_face_array(cls, v: Any) -> np.ndarray:
        array = np.array(v if v is not None else [], dtype=np.int64).reshape(-1, 3)
        return _readonly(array)

    @field_validator("labels", mode="before")
    def to_label_array(cls, v: Any) -> np.ndarray | None:
        if v is None:
            return None
        array = np.array(v, dtype=np.int64).reshape(-1)
        if array.size and (array.min() < 0 or array.max() >= len(BodyPart)):
            raise ValueError("labels must be BodyPart ordinals")
        return _readonly(array)

    @model_validator(mode="after")
    def check_invariants(self) -> "Mesh":
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError(
                f"face index out of range for {len(self.vertices)} vertices"
            )
        if self.labels is not None and len(self.labels) != len(self.vertices):
            raise ValueError(
                f"{len(self.labels)} labels for {len(self.vertices)} vertices"
            )
        return self

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    @cached_property
    def bbox_diagonal(self) -> float:
        if not len(self.vertices):
            return 0.0
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def parts(self) -> List[BodyPart]:
        """Body parts present in this mesh, in ordinal order."""
        if self.labels is None:
            return []
        return [BodyPart(p) for p in np.unique(self.labels)]

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same connectivity and labels, new positions."""
        return Mesh(vertices=vertices, faces=self.faces, labels=self.labels)

    def with_labels(self, labels: np.ndarray | None) -> "Mesh":
        return Mesh(vertices=self.vertices, faces=self.faces, labels=labels)


class Sequence(BaseModel):
    """Ordered frames; vertex count and connectivity may change between frames."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frames: List[Mesh]
    frame_rate: float = 30.0

    @field_validator("frames")
    def not_empty(cls, v: List[Mesh]) -> List[Mesh]:
        if not v:
            raise ValueError("a sequence needs at least one frame")
        return v

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def has_labels(self) -> bool:
        return all(frame.has_labels for frame in self.frames)


class SegmentationConfig(BaseModel):
    mode: SegmentationMode = SegmentationMode.AUTO
    affine_parts: FrozenSet[BodyPart] = frozenset({BodyPart.TORSO})

    @field_validator("affine_parts", mode="before")
    def parse_parts(cls, v: Any) -> FrozenSet[BodyPart]:
        if isinstance(v, str):
            v = [p for p in v.split(",") if p.strip()]
        return frozenset(BodyPart.parse(p) for p in v)

    @model_validator(mode="after")
    def affine_parts_required(self) -> "SegmentationConfig":
        if self.mode != SegmentationMode.OFF and not self.affine_parts:
            raise ValueError("affine_parts must not be empty when bi-modal typing is on")
        return self

    @property
    def filtering(self) -> bool:
        return self.mode != SegmentationMode.OFF

    @property
    def affine_mask_bits(self) -> int:
        """affine_parts as a 14-bit set, bit i for ordinal i."""
        return sum(1 << int(p) for p in self.affine_parts)

    @classmethod
    def from_mask_bits(cls, mode: SegmentationMode, bits: int) -> "SegmentationConfig":
        parts = [p for p in BodyPart if bits & (1 << int(p))]
        return cls(mode=mode, affine_parts=frozenset(parts))
