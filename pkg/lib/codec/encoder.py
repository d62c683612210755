"""Sequence encoder.

Each GoF starts with a raw I-frame. Key nodes are generated on the pair
(decoded I-frame, key P-frame); every P-frame is then fitted from the
previously *decoded* frame so encoder and decoder share one reference.
"""

from __future__ import annotations

import logging
from typing import List, NamedTuple, Optional

from pydantic import BaseModel, Field

from lib.codec.config import CodecConfig, RDStrategy
from lib.codec.container import BlockTag, ByteWriter, StreamHeader
from lib.codec.frames import BLOCK_OVERHEAD, FrameCode, FrameCoder, FrameContext
from lib.codec.nodes import MASK_PER_FRAME, decoded_iframe, encode_iframe, encode_nodes, quantize_nodes
from lib.codec.rdopt import RDPoint, select_mask
from lib.errors import ConfigError
from lib.mesh.models import Mesh, SegmentationMode, Sequence
from lib.motion.affine import CombinationMask
from lib.motion.keynodes import generate

logger = logging.getLogger(__name__)

GOF_PREFIX = 4


class BlockRecord(BaseModel):
    gof: int
    frame: Optional[int] = None
    kind: str
    bytes: int


class FrameRecord(BaseModel):
    gof: int
    frame: int
    kind: str
    mode: Optional[str] = None
    mask: Optional[str] = None
    bytes: int
    translation_bytes: int = 0
    param_bytes: int = 0
    distortion: float = 0.0


class RDRecord(BaseModel):
    gof: int
    frame: int
    mask: str
    rate_bytes: int
    distortion: float
    cost: float
    selected: bool


class EncodeReport(BaseModel):
    header_bytes: int = 0
    blocks: List[BlockRecord] = Field(default_factory=list)
    frames: List[FrameRecord] = Field(default_factory=list)
    rd_points: List[RDRecord] = Field(default_factory=list)
    node_counts: List[int] = Field(default_factory=list)

    @property
    def total_bytes(self) -> int:
        return self.header_bytes + sum(b.bytes for b in self.blocks)

    @property
    def motion_bytes(self) -> int:
        return sum(f.bytes for f in self.frames if f.kind == "P")

    def gof_masks(self) -> List[str]:
        return [f.mask for f in self.frames if f.kind == "P" and f.mask is not None]


class EncodeResult(NamedTuple):
    data: bytes
    report: EncodeReport
    # the encoder's decoded frames, identical to what the decoder produces
    reconstructed: List[Mesh]


def stream_header(cfg: CodecConfig, frame_count: int, frame_rate: float) -> StreamHeader:
    return StreamHeader(
        frame_count=frame_count,
        gof_size=cfg.gof_size,
        seg_corr=cfg.toggles.seg_corr,
        predcode=cfg.toggles.translation_predcode,
        seg_mode=cfg.segmentation.mode,
        per_frame=cfg.forced_mask is None and cfg.rd.strategy == RDStrategy.PER_FRAME,
        q=cfg.q,
        up_axis=cfg.up_axis,
        key_pframe_index=cfg.key_pframe_index,
        affine_bits=cfg.segmentation.affine_mask_bits,
        qstep_t=cfg.qstep_t,
        qstep_p=cfg.qstep_p,
        qstep_nodes=cfg.qstep_nodes,
        frame_rate=frame_rate,
    )


class SequenceEncoder:
    def __init__(self, cfg: CodecConfig):
        self.cfg = cfg
        self.report = EncodeReport()

    def check(self, seq: Sequence) -> None:
        if seq.has_labels:
            return
        if self.cfg.segmentation.mode != SegmentationMode.OFF:
            raise ConfigError("segmentation needs labelled frames; use segmentation mode 'off'")
        if self.cfg.toggles.translation_predcode:
            raise ConfigError("translation predictive coding needs labelled frames")

    def encode(self, seq: Sequence) -> EncodeResult:
        self.check(seq)
        header = stream_header(self.cfg, len(seq), seq.frame_rate)
        coder = FrameCoder(header, self.cfg.effective_solver)
        self.report = EncodeReport()

        writer = ByteWriter()
        header.write(writer)
        self.report.header_bytes = len(writer)

        reconstructed: List[Mesh] = []
        for gof, start in enumerate(range(0, len(seq), self.cfg.gof_size)):
            frames = seq.frames[start : start + self.cfg.gof_size]
            payload, decoded = self.encode_gof(gof, start, frames, coder)
            writer.u32(len(payload))
            writer.buffer += payload
            self.report.blocks.append(BlockRecord(gof=gof, kind="gof", bytes=GOF_PREFIX))
            reconstructed.extend(decoded)

        data = writer.getvalue()
        logger.info(
            "Encoded %d frames in %d GoFs: %d bytes (%d motion)",
            len(seq),
            header.gof_count,
            len(data),
            self.report.motion_bytes,
        )
        return EncodeResult(data, self.report, reconstructed)

    def _block(
        self, writer: ByteWriter, tag: BlockTag, payload: bytes, gof: int, frame: int | None, kind: str
    ) -> int:
        writer.block(tag, payload)
        size = len(payload) + BLOCK_OVERHEAD
        self.report.blocks.append(BlockRecord(gof=gof, frame=frame, kind=kind, bytes=size))
        return size

    def _record_points(self, gof: int, frame: int, points: List[RDPoint], chosen: CombinationMask) -> None:
        for p in points:
            self.report.rd_points.append(
                RDRecord(
                    gof=gof,
                    frame=frame,
                    mask=p.mask.name,
                    rate_bytes=p.rate,
                    distortion=p.distortion,
                    cost=p.cost,
                    selected=p.mask == chosen,
                )
            )

    def encode_gof(
        self, gof: int, start: int, frames: List[Mesh], coder: FrameCoder
    ) -> tuple[bytes, List[Mesh]]:
        cfg = self.cfg
        writer = ByteWriter()
        reference = decoded_iframe(frames[0])
        size = self._block(writer, BlockTag.IFRAME, encode_iframe(frames[0]), gof, start, "iframe")
        self.report.frames.append(FrameRecord(gof=gof, frame=start, kind="I", bytes=size))
        decoded = [reference]
        if len(frames) == 1:
            return writer.getvalue(), decoded

        key = min(cfg.key_pframe_index, len(frames) - 1)
        generated = generate((reference, frames[key]), cfg.generator, cfg.effective_solver)
        nodes = quantize_nodes(generated, cfg.qstep_nodes, cfg.segmentation)
        self.report.node_counts.append(nodes.count)
        logger.info("GoF %d: %d key nodes (%d affine)", gof, nodes.count, int(nodes.affine_flags.sum()))

        per_frame = cfg.forced_mask is None and cfg.rd.strategy == RDStrategy.PER_FRAME
        initial_nodes = nodes
        context = FrameContext()
        gof_mask = cfg.forced_mask
        codes: List[FrameCode] = []
        for offset, target in enumerate(frames[1:], start=1):
            frame = start + offset
            if gof_mask is None or per_frame:
                mask, points = select_mask((reference, target), nodes, coder, cfg.rd, context)
                self._record_points(gof, frame, points, mask)
                chosen = next(p for p in points if p.mask == mask)
                assert chosen.coded is not None
                code = chosen.coded
                if not per_frame:
                    gof_mask = mask
            else:
                code = coder.encode(reference, target, nodes, gof_mask, context)
            codes.append(code)
            logger.info(
                "GoF %d frame %d: mask %s, %s translations, %d bytes, distortion %.6g",
                gof,
                frame,
                code.mask.name,
                code.mode.label,
                code.rate,
                code.distortion,
            )
            context = code.next_context()
            reference = code.predicted
            nodes = nodes.with_positions(nodes.positions + code.translations)
            decoded.append(reference)

        mask_code = MASK_PER_FRAME if per_frame or gof_mask is None else gof_mask.code_value
        self._block(
            writer,
            BlockTag.NODES,
            encode_nodes(initial_nodes, cfg.qstep_nodes, mask_code),
            gof,
            None,
            "nodes",
        )
        for offset, code in enumerate(codes, start=1):
            frame = start + offset
            size = self._block(writer, BlockTag.PFRAME, code.payload, gof, frame, "pframe")
            self.report.frames.append(
                FrameRecord(
                    gof=gof,
                    frame=frame,
                    kind="P",
                    mode=code.mode.label,
                    mask=code.mask.name,
                    bytes=size,
                    translation_bytes=code.translation_bytes,
                    param_bytes=code.param_bytes,
                    distortion=code.distortion,
                )
            )
        return writer.getvalue(), decoded


def encode_sequence(seq: Sequence, cfg: CodecConfig) -> EncodeResult:
    return SequenceEncoder(cfg).encode(seq)
