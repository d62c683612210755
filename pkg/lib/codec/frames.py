"""P-frame motion payloads.

Payload::

    u8 mode | u8 mask | T model (4 x i32) | [delta bits] | T bits
    | u8 has_params | [P model (4 x i32) | P bits]

Bit fields are ``u32 bit length + bytes``. P concatenates all R' values
(nodes using rotation, node order), then all S', then all H'.
"""

from __future__ import annotations

import logging
from enum import IntEnum
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from lib.codec.container import ByteReader, ByteWriter, StreamHeader
from lib.coding.entropy import CauchyModel, decode_symbols, encode_symbols, fit_model, quantize
from lib.coding.predcode import (
    direct_decode,
    direct_encode,
    plan_traversal,
    spatial_decode,
    spatial_encode,
    spatiotemporal_decode,
    spatiotemporal_encode,
)
from lib.errors import CorruptBlock
from lib.mesh.metrics import frame_distortion
from lib.mesh.models import Mesh
from lib.motion.affine import EULER, PARAM_COUNT, SCALE, SHEAR, TRANSLATION, CombinationMask
from lib.motion.deform import build_influence_map, deform_mesh
from lib.motion.keynodes import build_influence_graph
from lib.motion.models import InfluenceGraph, InfluenceMap, KeyNodeSet, NodeTransforms
from lib.motion.solver import SolverConfig, fit_transforms

logger = logging.getLogger(__name__)

# the (u8 tag, u32 length) prefix every block carries
BLOCK_OVERHEAD = 5
_GROUPS = (EULER, SCALE, SHEAR)


class TranslationMode(IntEnum):
    DIRECT = 0
    SPATIAL = 1
    SPATIOTEMPORAL = 2

    @property
    def label(self) -> str:
        return self.name.lower()


class FrameContext(BaseModel):
    """Closed-loop state carried from one P-frame of a GoF to the next."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    translations: np.ndarray | None = None
    model: CauchyModel | None = None

    def mode(self, predcode: bool) -> TranslationMode:
        if not predcode:
            return TranslationMode.DIRECT
        if self.model is None or self.translations is None:
            return TranslationMode.SPATIAL
        return TranslationMode.SPATIOTEMPORAL


class FrameCode(BaseModel):
    """One coded P-frame together with everything the encoder reconstructs from it."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mask: CombinationMask
    mode: TranslationMode
    payload: bytes
    transforms: NodeTransforms
    translation_model: CauchyModel
    predicted: Mesh
    translation_bytes: int = 0
    param_bytes: int = 0
    loss: float = 0.0
    distortion: float = 0.0

    @property
    def rate(self) -> int:
        """Coded bytes of this frame's motion block."""
        return len(self.payload) + BLOCK_OVERHEAD

    @property
    def translations(self) -> np.ndarray:
        return self.transforms.translations

    def next_context(self) -> FrameContext:
        return FrameContext(translations=self.translations, model=self.translation_model)


def param_values(transforms: NodeTransforms) -> np.ndarray:
    """R', S' and H' concatenated, each over the nodes that use it."""
    params = transforms.masked_params
    flags = transforms.flags
    return np.concatenate([params[flags[:, g.start], g].ravel() for g in _GROUPS])


def assemble_params(
    values: np.ndarray, translations: np.ndarray, flags: np.ndarray
) -> np.ndarray:
    params = np.zeros((len(flags), PARAM_COUNT))
    params[:, TRANSLATION] = translations
    offset = 0
    for g in _GROUPS:
        rows = flags[:, g.start]
        size = 3 * int(rows.sum())
        params[rows, g] = values[offset : offset + size].reshape(-1, 3)
        offset += size
    return params


class FrameCoder:
    """Encodes and decodes P-frame motion under a stream configuration."""

    def __init__(self, header: StreamHeader, solver: SolverConfig | None = None):
        self.header = header
        self.seg = header.segmentation
        self.solver = (solver or SolverConfig()).model_copy(
            update={"segmentation": self.seg, "seg_corr_enabled": header.seg_corr, "q": header.q}
        )

    def influence(self, reference: Mesh, nodes: KeyNodeSet) -> Tuple[InfluenceMap, InfluenceGraph]:
        infl = build_influence_map(reference, nodes, self.seg, self.header.q)
        return infl, build_influence_graph(infl, nodes.count)

    def encode(
        self,
        reference: Mesh,
        target: Mesh,
        nodes: KeyNodeSet,
        mask: CombinationMask,
        context: FrameContext | None = None,
    ) -> FrameCode:
        """Fit, code and reconstruct one P-frame from the decoded reference."""
        context = context or FrameContext()
        infl, graph = self.influence(reference, nodes)
        fitted, loss = fit_transforms(reference, target, nodes, mask, self.solver, infl, graph)

        mode = context.mode(self.header.predcode)
        writer = ByteWriter()
        writer.u8(mode)
        writer.u8(mask.code_value)

        translations = fitted.translations
        start = len(writer)
        if mode == TranslationMode.DIRECT:
            code = direct_encode(translations, self.header.qstep_t)
            writer.model(code.model)
            writer.bits(code.bits)
            t_model, decoded_t = code.model, code.decoded
        elif mode == TranslationMode.SPATIAL:
            plan = plan_traversal(nodes, graph, self.header.up_axis)
            code = spatial_encode(translations, plan, self.header.qstep_t)
            writer.model(code.model)
            writer.bits(code.bits)
            t_model, decoded_t = code.model, code.decoded
        else:
            st = spatiotemporal_encode(
                translations, context.translations, nodes.labels, context.model, self.header.qstep_t
            )
            writer.model(st.model)
            writer.bits(st.delta_bits)
            writer.bits(st.bits)
            t_model, decoded_t = st.model, st.decoded
        translation_bytes = len(writer) - start

        values = param_values(fitted)
        start = len(writer)
        writer.u8(values.size > 0)
        decoded_values = values
        if values.size:
            p_model = fit_model(values, self.header.qstep_p)
            symbols = quantize(values, p_model.qstep)
            writer.model(p_model)
            writer.bits(encode_symbols(symbols, p_model))
            decoded_values = symbols * p_model.qstep
        param_bytes = len(writer) - start

        transforms = fitted.with_params(assemble_params(decoded_values, decoded_t, fitted.flags))
        predicted = deform_mesh(reference, nodes, transforms, infl)
        return FrameCode(
            mask=mask,
            mode=mode,
            payload=writer.getvalue(),
            transforms=transforms,
            translation_model=t_model,
            predicted=predicted,
            translation_bytes=translation_bytes,
            param_bytes=param_bytes,
            loss=loss,
            distortion=frame_distortion(predicted, target),
        )

    def decode(
        self,
        payload: bytes,
        reference: Mesh,
        nodes: KeyNodeSet,
        context: FrameContext | None = None,
        gof: int | None = None,
        frame: int | None = None,
    ) -> FrameCode:
        context = context or FrameContext()
        reader = ByteReader(payload, gof=gof)
        try:
            mode = TranslationMode(reader.u8())
            mask = CombinationMask.from_code(reader.u8())
        except ValueError as exc:
            raise CorruptBlock(f"bad P-frame header: {exc}", gof=gof, frame=frame) from exc
        if not mask.is_legal:
            raise CorruptBlock(f"illegal mask {mask.code}", gof=gof, frame=frame)

        infl, graph = self.influence(reference, nodes)
        t_model = reader.model(self.header.qstep_t)
        if mode == TranslationMode.DIRECT:
            translations = direct_decode(reader.bits(), t_model, nodes.count)
        elif mode == TranslationMode.SPATIAL:
            plan = plan_traversal(nodes, graph, self.header.up_axis)
            translations = spatial_decode(reader.bits(), t_model, plan)
        else:
            delta_bits = reader.bits()
            translations = spatiotemporal_decode(
                delta_bits, reader.bits(), context.model, t_model, context.translations, nodes.labels
            )

        identity = NodeTransforms.identity(nodes, mask)
        values = np.zeros(0)
        if reader.u8():
            p_model = reader.model(self.header.qstep_p)
            count = 3 * int(sum(identity.flags[:, g.start].sum() for g in _GROUPS))
            values = decode_symbols(reader.bits(), p_model, count) * p_model.qstep
        transforms = identity.with_params(assemble_params(values, translations, identity.flags))
        predicted = deform_mesh(reference, nodes, transforms, infl)
        return FrameCode(
            mask=mask,
            mode=mode,
            payload=payload,
            transforms=transforms,
            translation_model=t_model,
            predicted=predicted,
        )
