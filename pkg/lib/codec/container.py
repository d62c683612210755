"""The ``.bmkn`` container.

Little-endian throughout. Layout::

    header   "BMKN" | u16 version | u32 frame_count | u32 gof_size | u16 flags
    config   u32 length | u8 Q | u8 up_axis | u8 key_pframe_index | u16 affine parts
             | i32 qstep_t | i32 qstep_p | i32 qstep_nodes | i32 frame_rate   (fixed point, 2^-20)
    GoF *    u32 length | ( u8 tag | u32 length | payload )*

Unknown sub-block tags are skipped.
"""

from __future__ import annotations

import struct
from enum import IntEnum
from typing import Iterator, Literal, Tuple

import numpy as np
from pydantic import BaseModel

from lib.coding.bitio import Bits
from lib.coding.entropy import CauchyModel, from_fixed, to_fixed
from lib.errors import BadMagic, CorruptBlock, TruncatedStream, VersionUnsupported
from lib.mesh.models import SegmentationConfig, SegmentationMode

MAGIC = b"BMKN"
VERSION = 1
HEADER_SIZE = 16

_SEG_MODES = [SegmentationMode.AUTO, SegmentationMode.MANUAL, SegmentationMode.OFF]
_AXES = ["x", "y", "z"]


class BlockTag(IntEnum):
    IFRAME = 1
    NODES = 2
    PFRAME = 3


class Flags(IntEnum):
    SEG_CORR = 1 << 0
    PREDCODE = 1 << 1
    # bits 2-3 hold the segmentation mode
    PER_FRAME = 1 << 4


class ByteWriter:
    def __init__(self) -> None:
        self.buffer = bytearray()

    def __len__(self) -> int:
        return len(self.buffer)

    def pack(self, fmt: str, *values: int | float) -> None:
        self.buffer += struct.pack("<" + fmt, *values)

    def u8(self, value: int) -> None:
        self.pack("B", value)

    def u16(self, value: int) -> None:
        self.pack("H", value)

    def u32(self, value: int) -> None:
        self.pack("I", value)

    def i32(self, value: int) -> None:
        self.pack("i", value)

    def array(self, values: np.ndarray, dtype: str) -> None:
        self.buffer += np.ascontiguousarray(values, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()

    def bits(self, bits: Bits) -> None:
        """u32 bit length followed by the payload bytes."""
        self.u32(bits.length)
        self.buffer += bits.data

    def model(self, model: CauchyModel) -> None:
        for value in model.header():
            self.i32(value)

    def block(self, tag: int, payload: bytes) -> None:
        self.u8(tag)
        self.u32(len(payload))
        self.buffer += payload

    def getvalue(self) -> bytes:
        return bytes(self.buffer)


class ByteReader:
    def __init__(self, data: bytes, gof: int | None = None):
        self.data = data
        self.offset = 0
        self.gof = gof

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def take(self, size: int) -> bytes:
        if size < 0 or self.offset + size > len(self.data):
            raise TruncatedStream(f"needed {size} bytes at offset {self.offset}", gof=self.gof)
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def u8(self) -> int:
        return self.unpack("B")[0]

    def u16(self) -> int:
        return self.unpack("H")[0]

    def u32(self) -> int:
        return self.unpack("I")[0]

    def i32(self) -> int:
        return self.unpack("i")[0]

    def array(self, count: int, dtype: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(count * dt.itemsize), dtype=dt).astype(dtype)

    def bits(self) -> Bits:
        length = self.u32()
        return Bits(self.take((length + 7) // 8), length)

    def model(self, qstep: float) -> CauchyModel:
        values = self.unpack("iiii")
        try:
            return CauchyModel.from_header(values, qstep)  # type: ignore[arg-type]
        except ValueError as exc:
            raise CorruptBlock(f"invalid model header {values}", gof=self.gof) from exc

    def blocks(self) -> Iterator[Tuple[int, bytes]]:
        while self.remaining:
            tag = self.u8()
            size = self.u32()
            yield tag, self.take(size)


class StreamHeader(BaseModel):
    """Everything the decoder needs besides the GoF payloads."""

    frame_count: int
    gof_size: int
    seg_corr: bool = True
    predcode: bool = True
    seg_mode: SegmentationMode = SegmentationMode.AUTO
    per_frame: bool = False
    q: int = 4
    up_axis: Literal["x", "y", "z"] = "y"
    key_pframe_index: int = 1
    affine_bits: int = 0
    qstep_t: float = 1e-3
    qstep_p: float = 1e-3
    qstep_nodes: float = 1e-3
    frame_rate: float = 30.0
    version: int = VERSION

    @property
    def flags(self) -> int:
        flags = _SEG_MODES.index(self.seg_mode) << 2
        if self.seg_corr:
            flags |= Flags.SEG_CORR
        if self.predcode:
            flags |= Flags.PREDCODE
        if self.per_frame:
            flags |= Flags.PER_FRAME
        return flags

    @property
    def segmentation(self) -> SegmentationConfig:
        return SegmentationConfig.from_mask_bits(self.seg_mode, self.affine_bits)

    @property
    def gof_count(self) -> int:
        return -(-self.frame_count // self.gof_size)

    def write(self, writer: ByteWriter) -> None:
        writer.buffer += MAGIC
        writer.u16(self.version)
        writer.u32(self.frame_count)
        writer.u32(self.gof_size)
        writer.u16(self.flags)

        config = ByteWriter()
        config.u8(self.q)
        config.u8(_AXES.index(self.up_axis))
        config.u8(self.key_pframe_index)
        config.u16(self.affine_bits)
        for value in (self.qstep_t, self.qstep_p, self.qstep_nodes, self.frame_rate):
            config.i32(to_fixed(value))
        writer.u32(len(config))
        writer.buffer += config.buffer

    @classmethod
    def read(cls, reader: ByteReader) -> "StreamHeader":
        magic = reader.take(len(MAGIC))
        if magic != MAGIC:
            raise BadMagic(f"expected {MAGIC!r}, found {magic!r}")
        version = reader.u16()
        if version != VERSION:
            raise VersionUnsupported(f"bitstream version {version}, supported {VERSION}")
        frame_count = reader.u32()
        gof_size = reader.u32()
        flags = reader.u16()
        mode_index = (flags >> 2) & 0b11
        if mode_index >= len(_SEG_MODES):
            raise CorruptBlock(f"unknown segmentation mode {mode_index}")

        config = ByteReader(reader.take(reader.u32()))
        q, axis, key_index, affine_bits = config.unpack("BBBH")
        steps = [from_fixed(config.i32()) for _ in range(4)]
        if axis >= len(_AXES) or q < 1 or gof_size < 2:
            raise CorruptBlock("invalid stream configuration")
        return cls(
            version=version,
            frame_count=frame_count,
            gof_size=gof_size,
            seg_corr=bool(flags & Flags.SEG_CORR),
            predcode=bool(flags & Flags.PREDCODE),
            seg_mode=_SEG_MODES[mode_index],
            per_frame=bool(flags & Flags.PER_FRAME),
            q=q,
            up_axis=_AXES[axis],  # type: ignore[arg-type]
            key_pframe_index=key_index,
            affine_bits=affine_bits,
            qstep_t=steps[0],
            qstep_p=steps[1],
            qstep_nodes=steps[2],
            frame_rate=steps[3],
        )
