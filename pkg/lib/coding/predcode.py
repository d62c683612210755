"""Predictive coding of per-node translations.

Spatial scheme: nodes are visited in a top-down spiral over the influence
graph and each translation is predicted from the previously decoded one.
Spatio-temporal scheme: each body part gets one representative temporal
delta, coded with the previous frame's model, and nodes are predicted as
previous decoded translation plus their part's delta. Both loops predict
from decoded values so the decoder mirrors the encoder exactly.
"""

from __future__ import annotations

import itertools
import logging
import math
from typing import Dict, List, Literal, NamedTuple, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from lib.coding.bitio import Bits
from lib.coding.entropy import (
    CauchyModel,
    decode_symbols,
    encode_symbols,
    fit_model,
    quantize,
)
from lib.errors import EmptyNodeSet, MissingPreviousModel, UnlabeledNodes
from lib.mesh.models import BodyPart
from lib.motion.models import InfluenceGraph, KeyNodeSet

logger = logging.getLogger(__name__)

UpAxis = Literal["x", "y", "z"]
_AXES = {"x": 0, "y": 1, "z": 2}
# horizontal (first, second) axes used for the clockwise angle
_PLANE = {"x": (1, 2), "y": (0, 2), "z": (0, 1)}

# start node next to the head, then next to the torso
_HEAD_ANCHORED = {BodyPart.LEFT_UPPER_ARM, BodyPart.RIGHT_UPPER_ARM, BodyPart.TORSO}
_TORSO_ANCHORED = {BodyPart.LEFT_THIGH, BodyPart.RIGHT_THIGH}


class TraversalPlan(BaseModel):
    """Visiting order of the nodes and the reference each start node is predicted from."""

    model_config = ConfigDict(frozen=True)

    order: List[int]
    # (start node, reference node or None)
    start_markers: List[Tuple[int, int | None]]

    def __len__(self) -> int:
        return len(self.order)

    def predecessors(self) -> List[int]:
        """Per plan position, the node predicting it (-1 = zero predictor)."""
        references = {start: ref for start, ref in self.start_markers}
        result = []
        for position, node in enumerate(self.order):
            ref = references.get(node)
            if ref is not None:
                result.append(ref)
            elif position == 0:
                result.append(-1)
            else:
                result.append(self.order[position - 1])
        return result


def _clockwise(nodes: List[int], positions: np.ndarray, up_axis: UpAxis) -> List[int]:
    if len(nodes) < 2:
        return list(nodes)
    a, b = _PLANE[up_axis]
    points = positions[nodes]
    centroid = points.mean(axis=0)
    angles = np.arctan2(points[:, b] - centroid[b], points[:, a] - centroid[a])
    return [nodes[i] for i in np.lexsort((np.asarray(nodes), -angles))]


def _spiral(
    start: int, graph: InfluenceGraph, positions: np.ndarray, visited: np.ndarray, up_axis: UpAxis
) -> List[int]:
    order = [start]
    visited[start] = True
    layer = [start]
    while layer:
        ring = sorted(
            {int(n) for node in layer for n in graph.neighbors(node) if not visited[n]}
        )
        if not ring:
            break
        ring = _clockwise(ring, positions, up_axis)
        for node in ring:
            visited[node] = True
        order.extend(ring)
        layer = ring
    return order


def _highest(candidates: np.ndarray, positions: np.ndarray, up: int) -> int:
    heights = positions[candidates, up]
    return int(candidates[np.lexsort((candidates, -heights))[0]])


def _nearest_to(
    candidates: np.ndarray, anchors: np.ndarray, positions: np.ndarray
) -> Tuple[int, int]:
    diff = positions[candidates][:, None, :] - positions[anchors][None, :, :]
    dist = np.sum(diff**2, axis=2)
    flat = int(np.argmin(dist))
    i, j = divmod(flat, len(anchors))
    return int(candidates[i]), int(anchors[j])


def plan_traversal(nodes: KeyNodeSet, graph: InfluenceGraph, up_axis: UpAxis = "y") -> TraversalPlan:
    """Top-down spiral traversal, body parts in ordinal order."""
    if nodes.labels is None:
        raise UnlabeledNodes("traversal needs labelled nodes")
    positions = nodes.positions
    labels = nodes.labels
    up = _AXES[up_axis]
    visited = np.zeros(nodes.count, dtype=bool)
    order: List[int] = []
    markers: List[Tuple[int, int | None]] = []

    for part in BodyPart:
        while True:
            candidates = np.flatnonzero((labels == int(part)) & ~visited)
            if not len(candidates):
                break
            anchor_part = (
                BodyPart.HEAD if part in _HEAD_ANCHORED
                else BodyPart.TORSO if part in _TORSO_ANCHORED
                else None
            )
            anchors = np.flatnonzero(labels == int(anchor_part)) if anchor_part is not None else []
            if len(anchors):
                start, reference = _nearest_to(candidates, np.asarray(anchors), positions)
                ref: int | None = reference
            else:
                start, ref = _highest(candidates, positions, up), None
            markers.append((start, ref))
            order.extend(_spiral(start, graph, positions, visited, up_axis))

    return TraversalPlan(order=order, start_markers=markers)


class TranslationCode(NamedTuple):
    """Coded translations plus the encoder's reconstruction of them."""

    bits: Bits
    model: CauchyModel
    decoded: np.ndarray


def spatial_encode(translations: np.ndarray, plan: TraversalPlan, qstep: float) -> TranslationCode:
    if not len(plan):
        raise EmptyNodeSet("cannot code translations of an empty node set")
    t = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
    predecessors = plan.predecessors()

    pseudo = np.empty((len(plan), 3))
    for position, (node, ref) in enumerate(zip(plan.order, predecessors)):
        pseudo[position] = t[node] - (t[ref] if ref >= 0 else 0.0)
    model = fit_model(pseudo, qstep)

    decoded = np.zeros_like(t)
    symbols = np.empty((len(plan), 3), dtype=np.int64)
    for position, (node, ref) in enumerate(zip(plan.order, predecessors)):
        predicted = decoded[ref] if ref >= 0 else np.zeros(3)
        s = quantize(t[node] - predicted, model.qstep)
        symbols[position] = s
        decoded[node] = predicted + s * model.qstep
    return TranslationCode(encode_symbols(symbols, model), model, decoded)


def spatial_decode(bits: Bits, model: CauchyModel, plan: TraversalPlan) -> np.ndarray:
    decoded = np.zeros((len(plan), 3))
    if not len(plan):
        return decoded
    symbols = decode_symbols(bits, model, 3 * len(plan)).reshape(-1, 3)
    for position, (node, ref) in enumerate(zip(plan.order, plan.predecessors())):
        predicted = decoded[ref] if ref >= 0 else np.zeros(3)
        decoded[node] = predicted + symbols[position] * model.qstep
    return decoded


class PartDelta(BaseModel):
    """Decoded representative temporal delta per body part."""

    model_config = ConfigDict(frozen=True)

    deltas: Dict[BodyPart, Tuple[float, float, float]]

    def per_node(self, labels: np.ndarray) -> np.ndarray:
        out = np.zeros((len(labels), 3))
        for part, delta in self.deltas.items():
            out[labels == int(part)] = delta
        return out


class SpatioTemporalCode(NamedTuple):
    delta_bits: Bits
    bits: Bits
    deltas: PartDelta
    model: CauchyModel
    decoded: np.ndarray


def _parts_present(labels: np.ndarray) -> List[BodyPart]:
    return [BodyPart(int(p)) for p in np.unique(labels)]


def _best_delta(changes: np.ndarray, qstep: float) -> np.ndarray:
    """Symbols of the quantized delta minimising the squared prediction error.

    Starts from the quantized mean change and searches its 27 grid neighbours.
    """
    base = quantize(changes.mean(axis=0), qstep)
    best, best_cost = base, math.inf
    for offset in itertools.product((-1, 0, 1), repeat=3):
        candidate = base + np.asarray(offset, dtype=np.int64)
        cost = float(np.sum((changes - candidate * qstep) ** 2))
        if cost < best_cost:
            best, best_cost = candidate, cost
    return best


def spatiotemporal_encode(
    translations: np.ndarray,
    previous: np.ndarray,
    labels: np.ndarray,
    prev_model: CauchyModel | None,
    qstep: float,
) -> SpatioTemporalCode:
    if prev_model is None:
        raise MissingPreviousModel("spatio-temporal coding follows a spatially coded P-frame")
    t = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
    prev = np.asarray(previous, dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(labels, dtype=np.int64)

    parts = _parts_present(labels)
    delta_symbols = np.array(
        [_best_delta(t[labels == int(p)] - prev[labels == int(p)], prev_model.qstep) for p in parts],
        dtype=np.int64,
    ).reshape(-1, 3)
    deltas = PartDelta(
        deltas={p: tuple(float(v) for v in s * prev_model.qstep) for p, s in zip(parts, delta_symbols)}
    )

    predicted = prev + deltas.per_node(labels)
    residuals = t - predicted
    model = fit_model(residuals, qstep)
    symbols = quantize(residuals, model.qstep)
    decoded = predicted + symbols * model.qstep
    return SpatioTemporalCode(
        delta_bits=encode_symbols(delta_symbols, prev_model),
        bits=encode_symbols(symbols, model),
        deltas=deltas,
        model=model,
        decoded=decoded,
    )


def decode_part_deltas(
    bits: Bits, prev_model: CauchyModel | None, labels: np.ndarray
) -> PartDelta:
    if prev_model is None:
        raise MissingPreviousModel("spatio-temporal coding follows a spatially coded P-frame")
    parts = _parts_present(np.asarray(labels, dtype=np.int64))
    symbols = decode_symbols(bits, prev_model, 3 * len(parts)).reshape(-1, 3)
    return PartDelta(
        deltas={p: tuple(float(v) for v in s * prev_model.qstep) for p, s in zip(parts, symbols)}
    )


def spatiotemporal_decode(
    delta_bits: Bits,
    bits: Bits,
    prev_model: CauchyModel | None,
    model: CauchyModel,
    previous: np.ndarray,
    labels: np.ndarray,
) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    deltas = decode_part_deltas(delta_bits, prev_model, labels)
    predicted = np.asarray(previous, dtype=np.float64).reshape(-1, 3) + deltas.per_node(labels)
    symbols = decode_symbols(bits, model, predicted.size).reshape(-1, 3)
    return predicted + symbols * model.qstep


def direct_encode(translations: np.ndarray, qstep: float) -> TranslationCode:
    """Plain Cauchy-Huffman coding of the quantized translations."""
    t = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
    model = fit_model(t, qstep)
    symbols = quantize(t, model.qstep)
    return TranslationCode(encode_symbols(symbols, model), model, symbols * model.qstep)


def direct_decode(bits: Bits, model: CauchyModel, count: int) -> np.ndarray:
    return decode_symbols(bits, model, 3 * count).reshape(-1, 3) * model.qstep

