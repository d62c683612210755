"""Bi-modal embedded deformation: influence weights, blending and loss terms.

A vertex x moves to

    x' = sum_j w_j [A_j (x - n_j) + t_j + n_j]

over its Q controlling nodes. The blend is evaluated in displacement form,
x + sum_j w_j [(A_j - I)(x - n_j) + t_j], which is algebraically the same
(weights sum to one) and leaves positions bit-identical under identity
transforms.
"""

from __future__ import annotations

import logging
from typing import Dict

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from lib.errors import AlignmentError, EmptyNodeSet, NoValidNodes
from lib.mesh.models import BodyPart, Mesh, SegmentationConfig, SegmentationMode
from lib.motion.models import InfluenceGraph, InfluenceMap, KeyNodeSet, NodeTransforms

logger = logging.getLogger(__name__)

DEFAULT_Q = 4
# squared distances are clamped so a vertex sitting on a node gets a finite weight
MIN_DIST2 = 1e-12
REJECT_FACTOR = 3.0


def build_influence_map(
    mesh: Mesh, nodes: KeyNodeSet, seg: SegmentationConfig, q: int = DEFAULT_Q
) -> InfluenceMap:
    """Q nearest valid nodes per vertex with normalised inverse-square weights.

    With segmentation filtering a node is valid for a vertex only when their
    labels match. When fewer than Q valid nodes exist the closest one is
    replicated. A vertex without any valid node raises NoValidNodes in manual
    mode and falls back to the plain Q nearest nodes in auto mode.
    """
    if nodes.count == 0:
        raise EmptyNodeSet("cannot build an influence map without key nodes")
    if q < 1:
        raise ValueError("Q must be >= 1")

    vertex_count = mesh.vertex_count
    dist2 = cdist(mesh.vertices, nodes.positions, "sqeuclidean")
    width = min(q, nodes.count)

    filtering = seg.filtering and mesh.labels is not None and nodes.labels is not None
    if filtering:
        valid = mesh.labels[:, None] == nodes.labels[None, :]
        valid_count = valid.sum(axis=1)
        orphans = valid_count == 0
        if orphans.any():
            if seg.mode == SegmentationMode.MANUAL:
                part = BodyPart(int(mesh.labels[np.argmax(orphans)]))
                raise NoValidNodes(f"no key node labelled {part.display_name}")
            logger.debug("%d vertices fall back to label-free neighbours", int(orphans.sum()))
            valid[orphans] = True
            valid_count = valid.sum(axis=1)
        masked = np.where(valid, dist2, np.inf)
    else:
        valid_count = np.full(vertex_count, nodes.count)
        masked = dist2

    order = np.argsort(masked, axis=1, kind="stable")[:, :width]
    if width < q:
        order = np.hstack([order, np.repeat(order[:, :1], q - width, axis=1)])
    # columns past the number of valid nodes repeat the closest valid node
    usable = np.minimum(valid_count, q)
    columns = np.arange(q)[None, :]
    indices = np.where(columns < usable[:, None], order, order[:, :1])

    rows = np.arange(vertex_count)[:, None]
    raw = 1.0 / np.maximum(dist2[rows, indices], MIN_DIST2)
    weights = raw / raw.sum(axis=1, keepdims=True)
    return InfluenceMap(indices=indices, weights=weights, node_count=nodes.count)


def _check_alignment(vertex_count: int, nodes: KeyNodeSet, transforms: NodeTransforms, infl: InfluenceMap) -> None:
    if infl.vertex_count != vertex_count:
        raise AlignmentError(f"influence map has {infl.vertex_count} rows for {vertex_count} vertices")
    if infl.node_count != nodes.count or len(transforms) != nodes.count:
        raise AlignmentError(
            f"{nodes.count} nodes, {len(transforms)} transforms, map built for {infl.node_count}"
        )


def blend_displacements(
    vertices: np.ndarray,
    node_positions: np.ndarray,
    matrices: np.ndarray,
    translations: np.ndarray,
    infl: InfluenceMap,
) -> np.ndarray:
    """sum_j w_j [(A_j - I)(x - n_j) + t_j] for every vertex, (V, 3)."""
    idx = infl.indices
    local = vertices[:, None, :] - node_positions[idx]
    linear = matrices[idx] - np.eye(3)
    moved = np.einsum("vqab,vqb->vqa", linear, local) + translations[idx]
    return np.einsum("vq,vqa->va", infl.weights, moved)


def deform_mesh(
    mesh: Mesh, nodes: KeyNodeSet, transforms: NodeTransforms, infl: InfluenceMap
) -> Mesh:
    """Apply the blended node transforms; connectivity and labels are kept."""
    _check_alignment(mesh.vertex_count, nodes, transforms, infl)
    displacement = blend_displacements(
        mesh.vertices, nodes.positions, transforms.matrices, transforms.translations, infl
    )
    return mesh.with_vertices(mesh.vertices + displacement)


def orthogonality_terms(matrices: np.ndarray) -> np.ndarray:
    """Per-matrix sum of squared column dot products and (1 - |a_k|^2)^2."""
    gram = np.einsum("nka,nkb->nab", matrices, matrices)
    off = gram[:, 0, 1] ** 2 + gram[:, 0, 2] ** 2 + gram[:, 1, 2] ** 2
    diag = ((1.0 - np.diagonal(gram, axis1=1, axis2=2)) ** 2).sum(axis=1)
    return off + diag


def orthogonality_loss(transforms: NodeTransforms) -> float:
    """Orthogonality penalty summed over affine nodes."""
    if not transforms.affine.any():
        return 0.0
    return float(orthogonality_terms(transforms.matrices[transforms.affine]).sum())


def data_loss(source_deformed: Mesh, target: Mesh, correspondences: np.ndarray) -> float:
    """Sum of squared distances to corresponding target vertices (-1 = rejected)."""
    corr = np.asarray(correspondences, dtype=np.int64)
    if len(corr) != source_deformed.vertex_count:
        raise AlignmentError("correspondences must cover every source vertex")
    keep = corr >= 0
    diff = source_deformed.vertices[keep] - target.vertices[corr[keep]]
    return float(np.sum(diff**2))


def edge_residuals(
    node_positions: np.ndarray, matrices: np.ndarray, translations: np.ndarray, edges: np.ndarray
) -> np.ndarray:
    """A_j (n_k - n_j) + n_j + t_j - (n_k + t_k) for directed edges (j, k)."""
    j, k = edges[:, 0], edges[:, 1]
    offset = node_positions[k] - node_positions[j]
    predicted = np.einsum("eab,eb->ea", matrices[j], offset) + node_positions[j] + translations[j]
    return predicted - (node_positions[k] + translations[k])


def reg_loss(nodes: KeyNodeSet, transforms: NodeTransforms, graph: InfluenceGraph) -> float:
    """Smoothness: each node's transform should predict its neighbours' motion."""
    if not len(graph.edges):
        return 0.0
    residuals = edge_residuals(
        nodes.positions, transforms.matrices, transforms.translations, graph.directed_edges()
    )
    return float(np.sum(residuals**2))


def _bbox_centroid(points: np.ndarray) -> np.ndarray:
    return 0.5 * (points.min(axis=0) + points.max(axis=0))


def seg_guided_prealign(source: Mesh, target: Mesh) -> Dict[BodyPart, np.ndarray]:
    """Per body part, target minus source bounding-box centroid.

    Parts missing from either mesh get a zero offset.
    """
    offsets: Dict[BodyPart, np.ndarray] = {}
    if source.labels is None:
        return offsets
    for part in source.parts():
        offset = np.zeros(3)
        if target.labels is not None:
            tgt = target.vertices[target.labels == int(part)]
            if len(tgt):
                src = source.vertices[source.labels == int(part)]
                offset = _bbox_centroid(tgt) - _bbox_centroid(src)
        offsets[part] = offset
    return offsets


def offset_per_vertex(mesh: Mesh, offsets: Dict[BodyPart, np.ndarray]) -> np.ndarray:
    shift = np.zeros((mesh.vertex_count, 3))
    if mesh.labels is None:
        return shift
    for part, offset in offsets.items():
        shift[mesh.labels == int(part)] = offset
    return shift


def find_correspondences(
    query: np.ndarray, target: Mesh, tree: cKDTree | None = None, reject_factor: float = REJECT_FACTOR
) -> np.ndarray:
    """Nearest target vertex per query point; matches beyond reject_factor x median are -1."""
    tree = tree or cKDTree(target.vertices)
    distances, nearest = tree.query(query, k=1)
    nearest = np.asarray(nearest, dtype=np.int64)
    median = float(np.median(distances)) if len(distances) else 0.0
    if median > 0:
        rejected = distances > reject_factor * median
        if rejected.any():
            logger.debug("Rejected %d of %d correspondences", int(rejected.sum()), len(nearest))
        nearest = np.where(rejected, -1, nearest)
    return nearest
