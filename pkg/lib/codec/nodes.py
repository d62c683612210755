"""Key-node and I-frame blocks."""

from __future__ import annotations

import numpy as np

from lib.coding.entropy import decode_symbols, encode_symbols, fit_model, quantize
from lib.codec.container import ByteReader, ByteWriter
from lib.errors import CorruptBlock
from lib.mesh.models import BodyPart, Mesh, SegmentationConfig
from lib.motion.models import KeyNodeSet

RAW_CODEC = 0
# mask byte of a node block whose P-frames each carry their own mask
MASK_PER_FRAME = 0xFF


def canonical_order(nodes: KeyNodeSet) -> np.ndarray:
    """Sort by label ordinal, then height (y) descending, then index."""
    index = np.arange(nodes.count)
    labels = nodes.labels if nodes.labels is not None else np.zeros(nodes.count, dtype=np.int64)
    return np.lexsort((index, -nodes.positions[:, 1], labels))


def quantize_nodes(nodes: KeyNodeSet, qstep: float, seg: SegmentationConfig) -> KeyNodeSet:
    """The node set exactly as the decoder will see it."""
    quantized = KeyNodeSet(positions=quantize(nodes.positions, qstep) * qstep, labels=nodes.labels)
    order = canonical_order(quantized)
    labels = None if nodes.labels is None else nodes.labels[order]
    affine = None if labels is None else KeyNodeSet.typing(labels, seg)
    return KeyNodeSet(positions=quantized.positions[order], labels=labels, affine=affine)


def encode_nodes(nodes: KeyNodeSet, qstep: float, mask_code: int = MASK_PER_FRAME) -> bytes:
    """First node absolute, the rest as Cauchy-coded symbol deltas, then u8 labels."""
    order = canonical_order(nodes)
    symbols = quantize(nodes.positions[order], qstep)
    writer = ByteWriter()
    writer.u16(nodes.count)
    writer.u8(mask_code)
    writer.u8(nodes.labels is not None)
    if nodes.count:
        for value in symbols[0]:
            writer.i32(int(value))
    if nodes.count > 1:
        deltas = np.diff(symbols, axis=0)
        model = fit_model(deltas * qstep, qstep)
        writer.model(model)
        writer.bits(encode_symbols(deltas, model))
    if nodes.labels is not None:
        writer.array(nodes.labels[order], "u1")
    return writer.getvalue()


def decode_nodes(
    payload: bytes, qstep: float, seg: SegmentationConfig, gof: int | None = None
) -> tuple[KeyNodeSet, int]:
    """Decoded node set (canonical order, typed by ``seg``) and the block's mask byte."""
    reader = ByteReader(payload, gof=gof)
    count = reader.u16()
    mask_code = reader.u8()
    has_labels = reader.u8()
    symbols = np.zeros((count, 3), dtype=np.int64)
    if count:
        symbols[0] = [reader.i32() for _ in range(3)]
    if count > 1:
        model = reader.model(qstep)
        deltas = decode_symbols(reader.bits(), model, 3 * (count - 1)).reshape(-1, 3)
        symbols[1:] = symbols[0] + np.cumsum(deltas, axis=0)
    labels = None
    if has_labels:
        labels = reader.array(count, "u1").astype(np.int64)
        if count and labels.max() >= len(BodyPart):
            raise CorruptBlock("node label out of range", gof=gof)
    affine = None if labels is None else KeyNodeSet.typing(labels, seg)
    return KeyNodeSet(positions=symbols * qstep, labels=labels, affine=affine), mask_code


def decoded_iframe(mesh: Mesh) -> Mesh:
    """Positions rounded through float32 as stored."""
    return mesh.with_vertices(mesh.vertices.astype(np.float32).astype(np.float64))


def encode_iframe(mesh: Mesh) -> bytes:
    writer = ByteWriter()
    writer.u8(RAW_CODEC)
    writer.u32(mesh.vertex_count)
    writer.u32(mesh.face_count)
    writer.array(mesh.vertices, "f4")
    writer.array(mesh.faces, "u4")
    writer.u8(mesh.labels is not None)
    if mesh.labels is not None:
        writer.array(mesh.labels, "u1")
    return writer.getvalue()


def decode_iframe(payload: bytes, gof: int | None = None) -> Mesh:
    reader = ByteReader(payload, gof=gof)
    codec = reader.u8()
    if codec != RAW_CODEC:
        raise CorruptBlock(f"unknown I-frame codec {codec}", gof=gof)
    vertex_count = reader.u32()
    face_count = reader.u32()
    vertices = reader.array(3 * vertex_count, "f4").astype(np.float64).reshape(-1, 3)
    faces = reader.array(3 * face_count, "u4").astype(np.int64).reshape(-1, 3)
    labels = reader.array(vertex_count, "u1").astype(np.int64) if reader.u8() else None
    try:
        return Mesh(vertices=vertices, faces=faces, labels=labels)
    except ValueError as exc:
        raise CorruptBlock(f"invalid I-frame: {exc}", gof=gof) from exc
