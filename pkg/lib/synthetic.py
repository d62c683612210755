"""Deterministic labelled test sequences.

A capsule humanoid (one ellipsoid per body part, y up, facing +z) animated by
forward kinematics:

* ``walker``: scripted limb swings about the x axis plus a slow forward drift
* ``swish``: walker plus a torso scale/shear oscillation
* ``drift``: the rest pose translated by ``k * velocity`` in frame k
"""

from __future__ import annotations

import logging
import math
from enum import StrEnum
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator

from lib.errors import ConfigError, UnknownScenario
from lib.mesh.models import BodyPart, Mesh, Sequence
from lib.motion.affine import rotation_from_euler

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]


class Scenario(StrEnum):
    WALKER = "walker"
    SWISH = "swish"
    DRIFT = "drift"

    @classmethod
    def parse(cls, value: str) -> "Scenario":
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise UnknownScenario(
                f"unknown scenario '{value}', expected one of {', '.join(s.value for s in cls)}"
            ) from None


class ScenarioConfig(BaseModel):
    scenario: str = Scenario.WALKER.value
    frames: int = 16
    seed: int = 0
    # ellipsoid latitude bands per part; longitude uses twice as many
    resolution: int = 8
    # torso scale/shear amplitude for swish
    amplitude: float = 0.2
    velocity: Vec3 = (0.01, 0.0, 0.0)
    # frames per gait cycle
    period: int = 16
    forward_speed: float = 0.005
    frame_rate: float = 30.0

    @field_validator("frames", "period")
    def positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("resolution")
    def enough_bands(cls, v: int) -> int:
        if v < 3:
            raise ValueError("resolution must be >= 3")
        return v

    @property
    def kind(self) -> Scenario:
        return Scenario.parse(self.scenario)

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        """Read the ``scenario`` section of a YAML scenario file (or the whole file)."""
        path = Path(path)
        try:
            parsed = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
        section = parsed.get("scenario", parsed)
        if isinstance(section, str):
            section = {k: v for k, v in parsed.items() if k != "codec"}
        try:
            return cls(**section)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc


class PartShape(BaseModel):
    center: Vec3
    axes: Vec3
    # joint the part rotates about
    pivot: Vec3


def _mirror(v: Vec3) -> Vec3:
    return (-v[0], v[1], v[2])


_LEFT_SHAPES: Dict[str, PartShape] = {
    "UPPER_ARM": PartShape(center=(0.2, 1.26, 0.0), axes=(0.05, 0.14, 0.05), pivot=(0.2, 1.4, 0.0)),
    "LOWER_ARM": PartShape(center=(0.2, 0.995, 0.0), axes=(0.045, 0.125, 0.045), pivot=(0.2, 1.12, 0.0)),
    "HAND": PartShape(center=(0.2, 0.82, 0.0), axes=(0.04, 0.05, 0.025), pivot=(0.2, 0.87, 0.0)),
    "THIGH": PartShape(center=(0.1, 0.65, 0.0), axes=(0.07, 0.2, 0.07), pivot=(0.1, 0.85, 0.0)),
    "LEG": PartShape(center=(0.1, 0.255, 0.0), axes=(0.055, 0.195, 0.055), pivot=(0.1, 0.45, 0.0)),
    "FOOT": PartShape(center=(0.1, 0.03, 0.05), axes=(0.045, 0.03, 0.1), pivot=(0.1, 0.06, 0.0)),
}


def body_shapes() -> Dict[BodyPart, PartShape]:
    shapes = {
        BodyPart.HEAD: PartShape(center=(0.0, 1.6, 0.0), axes=(0.1, 0.12, 0.1), pivot=(0.0, 1.45, 0.0)),
        BodyPart.TORSO: PartShape(center=(0.0, 1.15, 0.0), axes=(0.17, 0.3, 0.1), pivot=(0.0, 1.15, 0.0)),
    }
    for suffix, shape in _LEFT_SHAPES.items():
        shapes[BodyPart[f"LEFT_{suffix}"]] = shape
        shapes[BodyPart[f"RIGHT_{suffix}"]] = PartShape(
            center=_mirror(shape.center), axes=shape.axes, pivot=_mirror(shape.pivot)
        )
    return shapes


def ellipsoid(center: Vec3, axes: Vec3, resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    """UV ellipsoid: two poles plus (resolution - 1) rings of 2 * resolution vertices."""
    segments = 2 * resolution
    theta = np.linspace(0.0, math.pi, resolution + 1)[1:-1]
    phi = np.linspace(0.0, 2.0 * math.pi, segments, endpoint=False)
    t, p = np.meshgrid(theta, phi, indexing="ij")
    ring = np.stack([np.sin(t) * np.cos(p), np.cos(t), np.sin(t) * np.sin(p)], axis=-1).reshape(-1, 3)
    unit = np.vstack([[0.0, 1.0, 0.0], ring, [0.0, -1.0, 0.0]])
    vertices = unit * np.asarray(axes) + np.asarray(center)

    faces: List[Tuple[int, int, int]] = []
    bottom = len(unit) - 1
    for j in range(segments):
        k = (j + 1) % segments
        faces.append((0, 1 + k, 1 + j))
        last = 1 + (resolution - 2) * segments
        faces.append((bottom, last + j, last + k))
    for i in range(resolution - 2):
        for j in range(segments):
            k = (j + 1) % segments
            a, b = 1 + i * segments + j, 1 + i * segments + k
            c, d = a + segments, b + segments
            faces.append((a, b, d))
            faces.append((a, d, c))
    return vertices, np.asarray(faces, dtype=np.int64)


def rest_pose(resolution: int = 8) -> Mesh:
    vertices, faces, labels = [], [], []
    offset = 0
    for part, shape in sorted(body_shapes().items()):
        v, f = ellipsoid(shape.center, shape.axes, resolution)
        vertices.append(v)
        faces.append(f + offset)
        labels.append(np.full(len(v), int(part), dtype=np.int64))
        offset += len(v)
    return Mesh(vertices=np.vstack(vertices), faces=np.vstack(faces), labels=np.concatenate(labels))


class Gait(BaseModel):
    """Seeded joint-angle script."""

    phase: float
    arm: float
    elbow: float
    hip: float
    knee: float

    @classmethod
    def from_seed(cls, seed: int) -> "Gait":
        rng = np.random.default_rng(seed)
        return cls(
            phase=float(rng.uniform(0.0, 2.0 * math.pi)),
            arm=0.5 * float(rng.uniform(0.8, 1.2)),
            elbow=0.6 * float(rng.uniform(0.8, 1.2)),
            hip=0.45 * float(rng.uniform(0.8, 1.2)),
            knee=0.7 * float(rng.uniform(0.8, 1.2)),
        )

    def angles(self, frame: int, period: int) -> Dict[str, float]:
        w = 2.0 * math.pi * frame / period + self.phase
        return {
            "LEFT_SHOULDER": self.arm * math.sin(w),
            "RIGHT_SHOULDER": -self.arm * math.sin(w),
            "LEFT_ELBOW": -self.elbow * 0.5 * (1.0 + math.sin(w + 0.5 * math.pi)),
            "RIGHT_ELBOW": -self.elbow * 0.5 * (1.0 + math.sin(w - 0.5 * math.pi)),
            "LEFT_HIP": -self.hip * math.sin(w),
            "RIGHT_HIP": self.hip * math.sin(w),
            "LEFT_KNEE": self.knee * max(0.0, math.sin(w + 0.5 * math.pi)),
            "RIGHT_KNEE": self.knee * max(0.0, math.sin(w - 0.5 * math.pi)),
        }


Rigid = Tuple[np.ndarray, np.ndarray]


def _about(pivot: Vec3, angle: float) -> Rigid:
    rotation = rotation_from_euler(angle, 0.0, 0.0)
    p = np.asarray(pivot)
    return rotation, p - rotation @ p


def _chain(outer: Rigid, inner: Rigid) -> Rigid:
    return outer[0] @ inner[0], outer[0] @ inner[1] + outer[1]


def part_transforms(angles: Dict[str, float], root: np.ndarray) -> Dict[BodyPart, Rigid]:
    shapes = body_shapes()
    base: Rigid = (np.eye(3), root)
    out: Dict[BodyPart, Rigid] = {BodyPart.HEAD: base, BodyPart.TORSO: base}
    for side in ("LEFT", "RIGHT"):
        shoulder = _chain(base, _about(shapes[BodyPart[f"{side}_UPPER_ARM"]].pivot, angles[f"{side}_SHOULDER"]))
        elbow = _chain(shoulder, _about(shapes[BodyPart[f"{side}_LOWER_ARM"]].pivot, angles[f"{side}_ELBOW"]))
        out[BodyPart[f"{side}_UPPER_ARM"]] = shoulder
        out[BodyPart[f"{side}_LOWER_ARM"]] = elbow
        out[BodyPart[f"{side}_HAND"]] = elbow
        hip = _chain(base, _about(shapes[BodyPart[f"{side}_THIGH"]].pivot, angles[f"{side}_HIP"]))
        knee = _chain(hip, _about(shapes[BodyPart[f"{side}_LEG"]].pivot, angles[f"{side}_KNEE"]))
        out[BodyPart[f"{side}_THIGH"]] = hip
        out[BodyPart[f"{side}_LEG"]] = knee
        out[BodyPart[f"{side}_FOOT"]] = knee
    return out


def pose(rest: Mesh, transforms: Dict[BodyPart, Rigid]) -> np.ndarray:
    assert rest.labels is not None
    vertices = np.empty_like(rest.vertices)
    for part, (rotation, translation) in transforms.items():
        sel = rest.labels == int(part)
        vertices[sel] = rest.vertices[sel] @ rotation.T + translation
    return vertices


def torso_matrix(amplitude: float, frame: int, period: int, phase: float) -> np.ndarray:
    s = amplitude * math.sin(2.0 * math.pi * frame / period + phase)
    return np.array([[1.0 + s, 0.5 * s, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0 + 0.5 * s]])


def walker(cfg: ScenarioConfig, amplitude: float = 0.0) -> Sequence:
    rest = rest_pose(cfg.resolution)
    gait = Gait.from_seed(cfg.seed)
    torso = rest.labels == int(BodyPart.TORSO)
    frames = []
    for k in range(cfg.frames):
        root = np.array([0.0, 0.0, cfg.forward_speed * k])
        vertices = pose(rest, part_transforms(gait.angles(k, cfg.period), root))
        # x + (M - I)(x - c) is exactly x when the amplitude is 0
        m = torso_matrix(amplitude, k, cfg.period, gait.phase)
        local = vertices[torso] - vertices[torso].mean(axis=0)
        vertices[torso] = vertices[torso] + local @ (m - np.eye(3)).T
        frames.append(rest.with_vertices(vertices))
    return Sequence(frames=frames, frame_rate=cfg.frame_rate)


def swish(cfg: ScenarioConfig) -> Sequence:
    return walker(cfg, amplitude=cfg.amplitude)


def drift(cfg: ScenarioConfig) -> Sequence:
    rest = rest_pose(cfg.resolution)
    velocity = np.asarray(cfg.velocity, dtype=np.float64)
    frames = [rest.with_vertices(rest.vertices + k * velocity) for k in range(cfg.frames)]
    return Sequence(frames=frames, frame_rate=cfg.frame_rate)


def synthesize(cfg: ScenarioConfig) -> Sequence:
    kind = cfg.kind
    seq = {Scenario.WALKER: walker, Scenario.SWISH: swish, Scenario.DRIFT: drift}[kind](cfg)
    logger.info(
        "Synthesized %s: %d frames, %d vertices", kind.value, len(seq), seq.frames[0].vertex_count
    )
    return seq
