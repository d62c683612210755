"""Key-node generation on the key P-frame pair.

Nodes start as a dense farthest-point sample of the source frame. Each round
fits the transforms, measures the prediction error and then prunes low-error
nodes or inserts nodes at high-error vertices until the requested count is
reached and the fit has settled.
"""

from __future__ import annotations

import logging
import math
from typing import Any, List, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.spatial import cKDTree

from lib.errors import TooFewVertices
from lib.mesh.metrics import per_vertex_error
from lib.mesh.models import Mesh, SegmentationConfig, SegmentationMode
from lib.motion.affine import FULL_MASK, CombinationMask
from lib.motion.deform import build_influence_map, deform_mesh
from lib.motion.models import INFLUENCE_THRESHOLD, InfluenceGraph, InfluenceMap, KeyNodeSet
from lib.motion.solver import SolverConfig, fit_transforms

logger = logging.getLogger(__name__)


class GeneratorConfig(BaseModel):
    target_count: int = 24
    # None = twice the target count
    initial_count: int | None = None
    max_rounds: int = 20
    # None = half of the surplus per round
    prune_batch: int | None = None
    # None = twice the median nearest-neighbour node spacing
    min_dist: float | None = None
    refine: bool = True
    seed: int = 0
    fit_mask: CombinationMask = FULL_MASK

    @field_validator("fit_mask", mode="before")
    def parse_mask(cls, v: Any) -> Any:
        return CombinationMask.parse(v) if isinstance(v, (str, int)) else v

    @field_validator("target_count", "max_rounds")
    def positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @model_validator(mode="after")
    def check_counts(self) -> "GeneratorConfig":
        if self.initial_count is not None and self.initial_count < 1:
            raise ValueError("initial_count must be >= 1")
        if self.prune_batch is not None and self.prune_batch < 1:
            raise ValueError("prune_batch must be >= 1")
        if self.min_dist is not None and self.min_dist < 0:
            raise ValueError("min_dist must be >= 0")
        if not self.fit_mask.is_legal:
            raise ValueError("fit_mask must enable translation")
        return self


class GenerationRound(BaseModel):
    index: int
    node_count: int
    loss: float
    removed: int = 0
    inserted: int = 0


class GenerationReport(BaseModel):
    rounds: List[GenerationRound] = Field(default_factory=list)
    converged: bool = False

    @property
    def final_count(self) -> int:
        return self.rounds[-1].node_count if self.rounds else 0


def farthest_point_sample(points: np.ndarray, count: int, start: int) -> np.ndarray:
    """Indices of a greedy farthest-point sample beginning at ``start``."""
    selected = np.empty(count, dtype=np.int64)
    selected[0] = start
    distances = np.sum((points - points[start]) ** 2, axis=1)
    for i in range(1, count):
        selected[i] = int(np.argmax(distances))
        distances = np.minimum(distances, np.sum((points - points[selected[i]]) ** 2, axis=1))
    return selected


def init_nodes(
    mesh: Mesh, target_count: int, seed: int, seg: SegmentationConfig | None = None
) -> KeyNodeSet:
    """Farthest-point sampled vertices; the first one is drawn from ``seed``."""
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    if target_count > mesh.vertex_count:
        raise TooFewVertices(f"{target_count} nodes requested from {mesh.vertex_count} vertices")
    start = int(np.random.default_rng(seed).integers(mesh.vertex_count))
    indices = farthest_point_sample(mesh.vertices, target_count, start)
    return KeyNodeSet.from_positions(mesh.vertices[indices], mesh, seg or SegmentationConfig())


def build_influence_graph(infl: InfluenceMap, node_count: int) -> InfluenceGraph:
    """Connect every pair of distinct nodes sharing an influence row."""
    idx = infl.indices
    pairs = [
        np.stack([idx[:, a], idx[:, b]], axis=1)
        for a in range(infl.q)
        for b in range(a + 1, infl.q)
    ]
    if not pairs:
        return InfluenceGraph(node_count=node_count, edges=np.zeros((0, 2), dtype=np.int64))
    edges = np.vstack(pairs)
    edges = edges[edges[:, 0] != edges[:, 1]]
    edges = np.sort(edges, axis=1)
    edges = np.unique(edges, axis=0) if len(edges) else edges.reshape(0, 2)
    return InfluenceGraph(node_count=node_count, edges=edges)


def node_errors(
    vertex_errors: np.ndarray, infl: InfluenceMap, threshold: float = INFLUENCE_THRESHOLD
) -> np.ndarray:
    """Mean vertex error over the vertices each node affects with weight > threshold."""
    affected = infl.affected(threshold).astype(np.float64)
    totals = np.asarray(affected.T @ vertex_errors).ravel()
    counts = np.asarray(affected.sum(axis=0)).ravel()
    return np.divide(totals, counts, out=np.zeros_like(totals), where=counts > 0)


def select_prunable(
    infl: InfluenceMap,
    per_node_error: np.ndarray,
    batch: int,
    keep_at_least: int = 1,
    labels: np.ndarray | None = None,
) -> List[int]:
    """Lowest-error nodes that pairwise share no vertex above the influence threshold.

    With ``labels`` the last node carrying each label is never selected.
    """
    errors = np.asarray(per_node_error, dtype=np.float64)
    n = len(errors)
    affected = infl.affected().astype(np.int64)
    conflicts = (affected.T @ affected).toarray() > 0
    limit = min(batch, max(n - keep_at_least, 0))
    order = np.lexsort((np.arange(n), errors))
    survivors: dict[int, int] = {}
    if labels is not None:
        values, counts = np.unique(labels, return_counts=True)
        survivors = dict(zip(values.tolist(), counts.tolist()))
    removed: List[int] = []
    for node in order:
        if len(removed) >= limit:
            break
        if any(conflicts[node, other] for other in removed):
            continue
        if labels is not None:
            label = int(labels[node])
            if survivors[label] <= 1:
                continue
            survivors[label] -= 1
        removed.append(int(node))
    return removed


def prune_nodes(
    nodes: KeyNodeSet,
    infl: InfluenceMap,
    per_node_error: np.ndarray,
    batch: int,
    seg: SegmentationConfig | None = None,
) -> KeyNodeSet:
    """Drop up to ``batch`` nodes; manual segmentation keeps one node per labelled part."""
    labels = None
    if seg is not None and seg.mode == SegmentationMode.MANUAL and nodes.labels is not None:
        labels = nodes.labels
    removed = select_prunable(infl, per_node_error, batch, labels=labels)
    keep = np.setdiff1d(np.arange(nodes.count), removed)
    return nodes.subset(keep)


def default_min_dist(nodes: KeyNodeSet) -> float:
    if nodes.count < 2:
        return 0.0
    distances, _ = cKDTree(nodes.positions).query(nodes.positions, k=2)
    return 2.0 * float(np.median(distances[:, 1]))


def insert_nodes(
    nodes: KeyNodeSet,
    mesh: Mesh,
    per_vertex_error: np.ndarray,
    deficit: int,
    min_dist: float,
    seg: SegmentationConfig | None = None,
) -> KeyNodeSet:
    """Add up to ``deficit`` nodes at the highest-error vertices, keeping min_dist spacing."""
    if deficit < 1:
        raise ValueError("deficit must be >= 1")
    errors = np.asarray(per_vertex_error, dtype=np.float64)
    order = np.lexsort((np.arange(len(errors)), -errors))
    tree = cKDTree(nodes.positions) if nodes.count else None
    added: List[np.ndarray] = []
    for vertex in order:
        if len(added) >= deficit:
            break
        candidate = mesh.vertices[vertex]
        if tree is not None and tree.query(candidate, k=1)[0] < min_dist:
            continue
        if any(np.linalg.norm(candidate - p) < min_dist for p in added):
            continue
        added.append(candidate)
    if not added:
        return nodes
    new = KeyNodeSet.from_positions(np.array(added), mesh, seg or SegmentationConfig())
    return nodes.extended(new) if nodes.count else new


def refine_positions(nodes: KeyNodeSet, mesh: Mesh, infl: InfluenceMap) -> KeyNodeSet:
    """Snap each node to the vertex nearest the weighted centroid of what it controls.

    A node keeps its position if it controls nothing or its snap target is
    already taken by another node.
    """
    matrix = infl.matrix.tocsc()
    affected = infl.affected()
    tree = cKDTree(mesh.vertices)
    positions = nodes.positions.copy()
    taken = set()
    for position in positions:
        taken.add(tuple(position))
    for j in range(nodes.count):
        rows = affected[:, j].nonzero()[0]
        if not len(rows):
            continue
        weights = matrix[rows, j].toarray().ravel()
        centroid = weights @ mesh.vertices[rows] / weights.sum()
        _, nearest = tree.query(centroid, k=1)
        snapped = mesh.vertices[int(nearest)]
        key = tuple(snapped)
        if key in taken:
            continue
        taken.discard(tuple(positions[j]))
        taken.add(key)
        positions[j] = snapped
    return nodes.with_positions(positions)


class KeyNodeGenerator:
    """Integrated refine / prune / insert loop around the transform fit."""

    def __init__(
        self,
        source: Mesh,
        target: Mesh,
        cfg: GeneratorConfig,
        solver: SolverConfig | None = None,
    ):
        self.source = source
        self.target = target
        self.cfg = cfg
        self.solver = solver or SolverConfig()
        self.report = GenerationReport()

    @property
    def seg(self) -> SegmentationConfig:
        return self.solver.segmentation

    def vertex_errors(self, predicted: Mesh) -> np.ndarray:
        if predicted.vertex_count == self.target.vertex_count:
            return per_vertex_error(predicted, self.target)
        distances, _ = cKDTree(self.target.vertices).query(predicted.vertices, k=1)
        return np.asarray(distances)

    def generate(self) -> KeyNodeSet:
        cfg = self.cfg
        target_count = min(cfg.target_count, self.source.vertex_count)
        initial = cfg.initial_count or 2 * target_count
        initial = min(initial, self.source.vertex_count)
        nodes = init_nodes(self.source, initial, cfg.seed, self.seg)
        self.report = GenerationReport()

        previous_loss: float | None = None
        for index in range(cfg.max_rounds):
            infl = build_influence_map(self.source, nodes, self.seg, self.solver.q)
            graph = build_influence_graph(infl, nodes.count)
            transforms, loss = fit_transforms(
                self.source, self.target, nodes, cfg.fit_mask, self.solver, infl, graph
            )
            record = GenerationRound(index=index, node_count=nodes.count, loss=loss)
            self.report.rounds.append(record)

            settled = loss <= 1e-12 or (
                previous_loss is not None
                and abs(previous_loss - loss) <= self.solver.convergence_tol * max(previous_loss, 1e-300)
            )
            if nodes.count == target_count and settled:
                self.report.converged = True
                logger.debug("Generator converged after %d rounds with %d nodes", index + 1, nodes.count)
                break
            previous_loss = loss if nodes.count == target_count else None

            predicted = deform_mesh(self.source, nodes, transforms, infl)
            errors = self.vertex_errors(predicted)

            if cfg.refine:
                nodes = refine_positions(nodes, self.source, infl)

            if nodes.count > target_count:
                surplus = nodes.count - target_count
                batch = min(cfg.prune_batch or max(1, math.ceil(surplus / 2)), surplus)
                before = nodes.count
                nodes = prune_nodes(nodes, infl, node_errors(errors, infl), batch, self.seg)
                record.removed = before - nodes.count
                if record.removed == 0:
                    logger.warning("No prunable nodes left at %d nodes, target %d", nodes.count, target_count)
                    break
            elif nodes.count < target_count:
                min_dist = cfg.min_dist if cfg.min_dist is not None else default_min_dist(nodes)
                before = nodes.count
                nodes = insert_nodes(
                    nodes, self.source, errors, target_count - nodes.count, min_dist, self.seg
                )
                record.inserted = nodes.count - before
                if record.inserted == 0:
                    logger.warning("No insertion candidates respect min_dist %.4g", min_dist)
                    break
            logger.debug(
                "Generator round %d: loss %.6g, %d nodes (-%d/+%d)",
                index,
                loss,
                nodes.count,
                record.removed,
                record.inserted,
            )
        else:
            logger.info("Generator stopped after %d rounds with %d nodes", cfg.max_rounds, nodes.count)
        return nodes


def generate(
    pair: Tuple[Mesh, Mesh], cfg: GeneratorConfig, solver: SolverConfig | None = None
) -> KeyNodeSet:
    """Key nodes for a (reference, key P-frame) pair, positioned on the reference."""
    source, target = pair
    return KeyNodeGenerator(source, target, cfg, solver).generate()
