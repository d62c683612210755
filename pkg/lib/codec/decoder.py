from __future__ import annotations

import logging
from typing import List

from pydantic import ValidationError

from lib.codec.container import BlockTag, ByteReader, StreamHeader
from lib.codec.frames import FrameCoder, FrameContext
from lib.codec.nodes import decode_iframe, decode_nodes
from lib.errors import CorruptBlock, TruncatedStream
from lib.mesh.models import Mesh, SegmentationConfig, Sequence
from lib.motion.models import KeyNodeSet

logger = logging.getLogger(__name__)


class SequenceDecoder:
    def __init__(self, data: bytes):
        self.reader = ByteReader(data)
        self.header = StreamHeader.read(self.reader)
        try:
            self.seg: SegmentationConfig = self.header.segmentation
        except ValidationError as exc:
            raise CorruptBlock(f"invalid segmentation settings: {exc}") from exc
        self.coder = FrameCoder(self.header)

    def decode(self) -> Sequence:
        frames: List[Mesh] = []
        for gof in range(self.header.gof_count):
            self.reader.gof = gof
            payload = self.reader.take(self.reader.u32())
            try:
                frames.extend(self.decode_gof(gof, len(frames), payload))
            except TruncatedStream as exc:
                if exc.gof is not None:
                    raise
                raise TruncatedStream(str(exc), gof=gof) from exc
        if len(frames) != self.header.frame_count:
            raise CorruptBlock(f"decoded {len(frames)} of {self.header.frame_count} frames")
        if self.reader.remaining:
            logger.warning("Ignoring %d trailing bytes", self.reader.remaining)
        logger.info("Decoded %d frames in %d GoFs", len(frames), self.header.gof_count)
        return Sequence(frames=frames, frame_rate=self.header.frame_rate)

    def decode_gof(self, gof: int, first_frame: int, payload: bytes) -> List[Mesh]:
        reader = ByteReader(payload, gof=gof)
        decoded: List[Mesh] = []
        nodes: KeyNodeSet | None = None
        context = FrameContext()
        for tag, block in reader.blocks():
            frame = first_frame + len(decoded)
            if tag == BlockTag.IFRAME:
                if decoded:
                    raise CorruptBlock("second I-frame in GoF", gof=gof, frame=frame)
                decoded.append(decode_iframe(block, gof))
            elif tag == BlockTag.NODES:
                nodes, _ = decode_nodes(block, self.header.qstep_nodes, self.seg, gof)
            elif tag == BlockTag.PFRAME:
                if not decoded or nodes is None:
                    raise CorruptBlock("P-frame before I-frame and key nodes", gof=gof, frame=frame)
                code = self.coder.decode(block, decoded[-1], nodes, context, gof, frame)
                context = code.next_context()
                nodes = nodes.with_positions(nodes.positions + code.translations)
                decoded.append(code.predicted)
            else:
                logger.debug("Skipping unknown block tag %d in GoF %d", tag, gof)
        if not decoded:
            raise CorruptBlock("GoF without I-frame", gof=gof)
        return decoded


def decode_sequence(data: bytes) -> Sequence:
    return SequenceDecoder(data).decode()
