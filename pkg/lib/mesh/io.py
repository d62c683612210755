"""Mesh file ingestion and emission.

OBJ is parsed and written directly (``v``/``f`` records only). PLY is read
through trimesh and written as ASCII or binary little-endian with double
precision vertices, so positions round-trip bit-exactly in both formats.
Segmentation labels live in a ``<mesh>.labels`` sidecar, one BodyPart
ordinal per line.
"""

from __future__ import annotations

import logging
from enum import StrEnum
from pathlib import Path
from typing import List

import numpy as np
import trimesh
import yaml
from pydantic import ValidationError

from lib.errors import LabelMismatch, MeshIOError, ParseError
from lib.mesh.models import Mesh, Sequence

logger = logging.getLogger(__name__)

MESH_SUFFIXES = (".obj", ".ply")
SEQUENCE_META_FILE = "sequence.yml"


class MeshFormat(StrEnum):
    OBJ = "obj"
    PLY = "ply"
    PLY_ASCII = "ply-ascii"

    @classmethod
    def from_path(cls, path: Path) -> "MeshFormat":
        suffix = path.suffix.lower()
        if suffix == ".obj":
            return cls.OBJ
        if suffix == ".ply":
            return cls.PLY
        raise ParseError(f"Cannot infer mesh format from '{path.name}'")


def label_path(path: Path) -> Path:
    return path.with_suffix(".labels")


def _parse_obj(path: Path) -> tuple[np.ndarray, np.ndarray]:
    vertices: List[List[float]] = []
    faces: List[List[int]] = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 text at byte {exc.start}") from exc
    for line_no, line in enumerate(lines, start=1):
        values = line.split()
        if not values or values[0].startswith("#"):
            continue
        try:
            if values[0] == "v":
                vertices.append([float(values[k]) for k in range(1, 4)])
            elif values[0] == "f":
                # "f 1/2/3 4//6 7" -> vertex indices only, negative = relative
                corners = []
                for token in values[1:]:
                    idx = int(token.split("/")[0])
                    corners.append(idx - 1 if idx > 0 else len(vertices) + idx)
                if len(corners) < 3:
                    raise ParseError(f"{path}:{line_no}: face with {len(corners)} corners")
                # fan-triangulate polygons
                for k in range(1, len(corners) - 1):
                    faces.append([corners[0], corners[k], corners[k + 1]])
        except (IndexError, ValueError) as exc:
            raise ParseError(f"{path}:{line_no}: {exc}") from exc
    return (
        np.array(vertices, dtype=np.float64).reshape(-1, 3),
        np.array(faces, dtype=np.int64).reshape(-1, 3),
    )


def _parse_ply(path: Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        loaded = trimesh.load(str(path), file_type="ply", process=False)
    except Exception as exc:
        raise ParseError(f"{path}: {exc}") from exc
    vertices = np.asarray(getattr(loaded, "vertices", None), dtype=np.float64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise ParseError(f"{path}: no vertex element")
    faces = getattr(loaded, "faces", None)
    faces = np.zeros((0, 3), dtype=np.int64) if faces is None else np.asarray(faces, dtype=np.int64)
    return vertices, faces.reshape(-1, 3)


def _read_labels(path: Path, vertex_count: int) -> np.ndarray | None:
    sidecar = label_path(path)
    if not sidecar.exists():
        return None
    try:
        labels = np.loadtxt(sidecar, dtype=np.int64, ndmin=1)
    except ValueError as exc:
        raise ParseError(f"{sidecar}: {exc}") from exc
    if len(labels) != vertex_count:
        raise LabelMismatch(
            f"{sidecar.name} has {len(labels)} labels for {vertex_count} vertices"
        )
    return labels


def load_mesh(path: str | Path, format: MeshFormat | None = None) -> Mesh:
    """Load one frame, preserving the file's vertex order exactly."""
    path = Path(path)
    if not path.exists():
        raise MeshIOError(f"Mesh file '{path}' not found")
    format = format or MeshFormat.from_path(path)

    if format == MeshFormat.OBJ:
        vertices, faces = _parse_obj(path)
    else:
        vertices, faces = _parse_ply(path)

    labels = _read_labels(path, len(vertices))
    try:
        return Mesh(vertices=vertices, faces=faces, labels=labels)
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc.errors()[0]['msg']}") from exc


def _write_obj(mesh: Mesh, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        # %.17g round-trips every float64
        for x, y, z in mesh.vertices:
            f.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces:
            f.write(f"f {a + 1} {b + 1} {c + 1}\n")


def _write_ply(mesh: Mesh, path: Path, binary: bool) -> None:
    encoding = "binary_little_endian" if binary else "ascii"
    header = "\n".join(
        [
            "ply",
            f"format {encoding} 1.0",
            f"element vertex {mesh.vertex_count}",
            "property double x",
            "property double y",
            "property double z",
            f"element face {mesh.face_count}",
            "property list uchar int vertex_indices",
            "end_header",
        ]
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii") + b"\n")
        if binary:
            f.write(mesh.vertices.astype("<f8").tobytes())
            face_dtype = np.dtype([("count", "u1"), ("index", "<i4", (3,))])
            face_data = np.zeros(mesh.face_count, dtype=face_dtype)
            face_data["count"] = 3
            face_data["index"] = mesh.faces
            f.write(face_data.tobytes())
        else:
            lines = [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
            lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
            f.write(("\n".join(lines) + "\n").encode("ascii"))


def save_mesh(mesh: Mesh, path: str | Path, format: MeshFormat | None = None) -> None:
    """Write a frame (and its label sidecar when the mesh is labelled)."""
    path = Path(path)
    format = format or MeshFormat.from_path(path)
    try:
        if format == MeshFormat.OBJ:
            _write_obj(mesh, path)
        else:
            _write_ply(mesh, path, binary=format == MeshFormat.PLY)
        if mesh.labels is not None:
            np.savetxt(label_path(path), mesh.labels, fmt="%d")
    except OSError as exc:
        raise MeshIOError(f"Cannot write '{path}': {exc}") from exc


def frame_files(directory: Path) -> List[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in MESH_SUFFIXES)


def load_sequence(directory: str | Path) -> Sequence:
    """Load all OBJ/PLY frames of a directory in file-name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MeshIOError(f"'{directory}' is not a directory")
    files = frame_files(directory)
    if not files:
        raise ParseError(f"No OBJ/PLY frames in '{directory}'")

    frame_rate = 30.0
    meta = directory / SEQUENCE_META_FILE
    if meta.exists():
        frame_rate = float((yaml.safe_load(meta.read_text()) or {}).get("frame_rate", frame_rate))

    frames = [load_mesh(p) for p in files]
    logger.info("Loaded %d frames from %s", len(frames), directory)
    return Sequence(frames=frames, frame_rate=frame_rate)


def save_sequence(
    seq: Sequence, directory: str | Path, format: MeshFormat = MeshFormat.OBJ
) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    suffix = ".obj" if format == MeshFormat.OBJ else ".ply"
    paths = []
    for index, frame in enumerate(seq.frames):
        path = directory / f"frame_{index:04d}{suffix}"
        save_mesh(frame, path, format)
        paths.append(path)
    (directory / SEQUENCE_META_FILE).write_text(
        yaml.safe_dump({"frame_rate": seq.frame_rate, "frames": len(seq.frames)})
    )
    return paths
