from __future__ import annotations

from enum import StrEnum
from functools import cached_property
from typing import Any, List

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from lib.errors import AlignmentError
from lib.mesh.models import BodyPart, Mesh, SegmentationConfig
from lib.motion.affine import (
    PARAM_COUNT,
    RIGID_MASK,
    TRANSLATION,
    CombinationMask,
    TransformParams,
    batch_compose,
)

# influence weight above which a node counts as "affecting" a vertex
INFLUENCE_THRESHOLD = 0.01


class NodeType(StrEnum):
    RIGID = "rigid"
    AFFINE = "affine"


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class KeyNodeSet(BaseModel):
    """Sparse control nodes with their body-part label and rigid/affine type."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    positions: np.ndarray
    labels: np.ndarray | None = None
    affine: np.ndarray | None = None

    @field_validator("positions", mode="before")
    def to_positions(cls, v: Any) -> np.ndarray:
        return _readonly(np.array(v, dtype=np.float64).reshape(-1, 3))

    @field_validator("labels", mode="before")
    def to_labels(cls, v: Any) -> np.ndarray | None:
        return None if v is None else _readonly(np.array(v, dtype=np.int64).reshape(-1))

    @field_validator("affine", mode="before")
    def to_affine(cls, v: Any) -> np.ndarray | None:
        return None if v is None else _readonly(np.array(v, dtype=bool).reshape(-1))

    @model_validator(mode="after")
    def check_alignment(self) -> "KeyNodeSet":
        n = len(self.positions)
        if self.labels is not None and len(self.labels) != n:
            raise ValueError(f"{len(self.labels)} labels for {n} nodes")
        if self.affine is not None and len(self.affine) != n:
            raise ValueError(f"{len(self.affine)} types for {n} nodes")
        return self

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def count(self) -> int:
        return len(self.positions)

    @cached_property
    def affine_flags(self) -> np.ndarray:
        if self.affine is None:
            return np.zeros(self.count, dtype=bool)
        return self.affine

    @property
    def types(self) -> List[NodeType]:
        return [NodeType.AFFINE if a else NodeType.RIGID for a in self.affine_flags]

    def label_of(self, index: int) -> BodyPart | None:
        return None if self.labels is None else BodyPart(int(self.labels[index]))

    @classmethod
    def from_positions(
        cls, positions: np.ndarray, mesh: Mesh, seg: SegmentationConfig
    ) -> "KeyNodeSet":
        """Label each node from its closest mesh vertex; affine iff label is an affine part."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        if mesh.labels is None or not len(positions):
            return cls(positions=positions)
        _, nearest = cKDTree(mesh.vertices).query(positions, k=1)
        labels = mesh.labels[np.atleast_1d(nearest)]
        return cls(positions=positions, labels=labels, affine=cls.typing(labels, seg))

    @staticmethod
    def typing(labels: np.ndarray, seg: SegmentationConfig) -> np.ndarray:
        if not seg.filtering:
            return np.zeros(len(labels), dtype=bool)
        parts = np.array([int(p) for p in seg.affine_parts], dtype=np.int64)
        return np.isin(labels, parts)

    def retyped(self, seg: SegmentationConfig) -> "KeyNodeSet":
        if self.labels is None:
            return self
        return KeyNodeSet(positions=self.positions, labels=self.labels, affine=self.typing(self.labels, seg))

    def all_rigid(self) -> "KeyNodeSet":
        return KeyNodeSet(
            positions=self.positions, labels=self.labels, affine=np.zeros(self.count, dtype=bool)
        )

    def subset(self, indices: np.ndarray | List[int]) -> "KeyNodeSet":
        idx = np.asarray(indices, dtype=np.int64)
        return KeyNodeSet(
            positions=self.positions[idx],
            labels=None if self.labels is None else self.labels[idx],
            affine=None if self.affine is None else self.affine[idx],
        )

    def with_positions(self, positions: np.ndarray) -> "KeyNodeSet":
        return KeyNodeSet(positions=positions, labels=self.labels, affine=self.affine)

    def extended(self, other: "KeyNodeSet") -> "KeyNodeSet":
        if (self.labels is None) != (other.labels is None):
            raise AlignmentError("cannot merge labelled and unlabelled node sets")
        return KeyNodeSet(
            positions=np.vstack([self.positions, other.positions]),
            labels=None if self.labels is None else np.concatenate([self.labels, other.labels]),
            affine=np.concatenate([self.affine_flags, other.affine_flags]),
        )


class InfluenceMap(BaseModel):
    """Per vertex, exactly Q (node index, weight) pairs; weights sum to 1."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    indices: np.ndarray
    weights: np.ndarray
    node_count: int

    @model_validator(mode="after")
    def check_shapes(self) -> "InfluenceMap":
        if self.indices.shape != self.weights.shape or self.indices.ndim != 2:
            raise ValueError("indices and weights must both be (V, Q)")
        return self

    @property
    def q(self) -> int:
        return self.indices.shape[1]

    @property
    def vertex_count(self) -> int:
        return self.indices.shape[0]

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        """(V, N) sparse weights; replicated entries are summed."""
        rows = np.repeat(np.arange(self.vertex_count), self.q)
        return sparse.csr_matrix(
            (self.weights.ravel(), (rows, self.indices.ravel())),
            shape=(self.vertex_count, self.node_count),
        )

    def affected(self, threshold: float = INFLUENCE_THRESHOLD) -> sparse.csc_matrix:
        """Boolean (V, N) matrix of vertices a node affects with weight > threshold."""
        return (self.matrix > threshold).tocsc()


class InfluenceGraph(BaseModel):
    """Undirected node graph: i ~ j iff some vertex is influenced by both."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    node_count: int
    edges: np.ndarray

    @field_validator("edges", mode="before")
    def to_edges(cls, v: Any) -> np.ndarray:
        return _readonly(np.array(v, dtype=np.int64).reshape(-1, 2))

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        n = self.node_count
        data = np.ones(2 * len(self.edges))
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    def neighbors(self, node: int) -> np.ndarray:
        adj = self.adjacency
        return np.sort(adj.indices[adj.indptr[node] : adj.indptr[node + 1]])

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.edges}

    def components(self) -> np.ndarray:
        """Connected-component id per node."""
        _, component_ids = connected_components(self.adjacency, directed=False)
        return component_ids

    def directed_edges(self) -> np.ndarray:
        """Both orientations of every edge, (2E, 2)."""
        return np.vstack([self.edges, self.edges[:, ::-1]])


class NodeTransforms(BaseModel):
    """Per-node parameters aligned with a KeyNodeSet.

    Rigid nodes always use R and T; affine nodes use ``mask``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    params: np.ndarray
    mask: CombinationMask
    affine: np.ndarray

    @field_validator("params", mode="before")
    def to_params(cls, v: Any) -> np.ndarray:
        return _readonly(np.array(v, dtype=np.float64).reshape(-1, PARAM_COUNT))

    @field_validator("affine", mode="before")
    def to_affine(cls, v: Any) -> np.ndarray:
        return _readonly(np.array(v, dtype=bool).reshape(-1))

    @model_validator(mode="after")
    def check_alignment(self) -> "NodeTransforms":
        if len(self.params) != len(self.affine):
            raise ValueError(f"{len(self.params)} transforms for {len(self.affine)} nodes")
        return self

    def __len__(self) -> int:
        return len(self.params)

    @classmethod
    def identity(cls, nodes: KeyNodeSet, mask: CombinationMask) -> "NodeTransforms":
        return cls(params=np.zeros((nodes.count, PARAM_COUNT)), mask=mask, affine=nodes.affine_flags)

    @cached_property
    def flags(self) -> np.ndarray:
        """(N, 12) booleans: which parameters each node actually uses."""
        rigid = RIGID_MASK.param_flags()
        masked = self.mask.param_flags()
        return np.where(self.affine[:, None], masked[None, :], rigid[None, :])

    @cached_property
    def masked_params(self) -> np.ndarray:
        return np.where(self.flags, self.params, 0.0)

    @cached_property
    def matrices(self) -> np.ndarray:
        return batch_compose(self.masked_params)

    @property
    def translations(self) -> np.ndarray:
        return self.masked_params[:, TRANSLATION]

    def node_mask(self, index: int) -> CombinationMask:
        return self.mask if self.affine[index] else RIGID_MASK

    def node_params(self, index: int) -> TransformParams:
        return TransformParams.from_vector(self.masked_params[index])

    def with_params(self, params: np.ndarray) -> "NodeTransforms":
        return NodeTransforms(params=params, mask=self.mask, affine=self.affine)
