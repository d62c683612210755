"""Fit node transforms to a target frame.

Alternates correspondence estimation (nearest neighbours, optionally after a
per-body-part pre-alignment) with minimisation of

    L_data + alpha_reg * L_reg + alpha_orth * L_orth

over the enabled decomposed parameters. Gradients are analytic.
"""

from __future__ import annotations

import logging
import math
from typing import List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy import sparse
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from lib.errors import DivergenceError
from lib.mesh.models import Mesh, SegmentationConfig
from lib.motion.affine import (
    EULER,
    PARAM_COUNT,
    SCALE,
    TRANSLATION,
    CombinationMask,
    batch_compose,
    batch_upper,
    rotation_derivative_factors,
    rotation_factors,
)
from lib.motion.deform import (
    DEFAULT_Q,
    REJECT_FACTOR,
    blend_displacements,
    build_influence_map,
    find_correspondences,
    offset_per_vertex,
    seg_guided_prealign,
)
from lib.motion.models import InfluenceGraph, InfluenceMap, KeyNodeSet, NodeTransforms

logger = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MIN_STEP = 1e-18
# weight of an off-diagonal Gram entry: (a_i.a_j)^2 appears once for i<j
_ORTH_WEIGHTS = np.array([[1.0, 0.5, 0.5], [0.5, 1.0, 0.5], [0.5, 0.5, 1.0]])


class SolverConfig(BaseModel):
    alpha_reg: float = 1.0
    alpha_orth: float = 0.1
    max_outer_iters: int = 10
    max_inner_iters: int = 50
    convergence_tol: float = 1e-6
    seg_corr_enabled: bool = True

    optimizer: Literal["gradient_descent", "lbfgs"] = "gradient_descent"
    reject_factor: float = REJECT_FACTOR
    # stored as u8 in the stream header
    q: int = Field(default=DEFAULT_Q, le=255)
    segmentation: SegmentationConfig = Field(default_factory=SegmentationConfig)

    @field_validator("alpha_reg", "alpha_orth", "convergence_tol", "reject_factor")
    def non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("weights and tolerances must be >= 0")
        return v

    @field_validator("max_outer_iters", "max_inner_iters", "q")
    def at_least_one(cls, v: int) -> int:
        if v < 1:
            raise ValueError("iteration counts must be >= 1")
        return v


class DeformationProblem:
    """Total loss and gradient for fixed correspondences.

    Works on the flat vector of *free* parameters; disabled components stay
    at their identity encoding (zero).
    """

    def __init__(
        self,
        vertices: np.ndarray,
        nodes: KeyNodeSet,
        infl: InfluenceMap,
        graph: InfluenceGraph,
        mask: CombinationMask,
        targets: np.ndarray,
        keep: np.ndarray,
        alpha_reg: float,
        alpha_orth: float,
    ):
        self.vertices = vertices
        self.node_positions = nodes.positions
        self.node_count = nodes.count
        self.infl = infl
        self.targets = targets
        self.keep = keep.astype(np.float64)[:, None]
        self.alpha_reg = alpha_reg
        self.alpha_orth = alpha_orth
        self.affine = nodes.affine_flags

        self.flags = NodeTransforms.identity(nodes, mask).flags
        self.free = np.flatnonzero(self.flags.ravel())
        self.scale_free = np.isin(self.free % PARAM_COUNT, np.arange(SCALE.start, SCALE.stop))

        self.local = vertices[:, None, :] - nodes.positions[infl.indices]
        vq = infl.indices.size
        # (N, V*Q) scatter matrix summing per-(vertex, slot) terms into nodes
        self.scatter = sparse.csr_matrix(
            (np.ones(vq), (infl.indices.ravel(), np.arange(vq))),
            shape=(nodes.count, vq),
        )
        self.edges = graph.directed_edges() if len(graph.edges) else np.zeros((0, 2), dtype=np.int64)
        self.edge_offsets = (
            self.node_positions[self.edges[:, 1]] - self.node_positions[self.edges[:, 0]]
        )

    def unpack(self, x: np.ndarray) -> np.ndarray:
        params = np.zeros(self.node_count * PARAM_COUNT)
        params[self.free] = x
        return params.reshape(self.node_count, PARAM_COUNT)

    def pack(self, params: np.ndarray) -> np.ndarray:
        return np.asarray(params, dtype=np.float64).ravel()[self.free].copy()

    def deformed(self, params: np.ndarray) -> np.ndarray:
        rx, ry, rz = rotation_factors(params[:, EULER])
        matrices = rz @ ry @ rx @ batch_upper(params)
        return self._deformed(matrices, params[:, TRANSLATION])

    def _deformed(self, matrices: np.ndarray, translations: np.ndarray) -> np.ndarray:
        idx = self.infl.indices
        moved = np.einsum("vqab,vqb->vqa", matrices[idx] - np.eye(3), self.local) + translations[idx]
        return self.vertices + np.einsum("vq,vqa->va", self.infl.weights, moved)

    def terms(self, x: np.ndarray) -> Tuple[float, float, float]:
        """(L_data, L_reg, L_orth) at ``x``."""
        params = self.unpack(x)
        rx, ry, rz = rotation_factors(params[:, EULER])
        matrices = rz @ ry @ rx @ batch_upper(params)
        translations = params[:, TRANSLATION]
        residual = (self._deformed(matrices, translations) - self.targets) * self.keep
        l_data = float(np.sum(residual**2))
        l_reg = 0.0
        if len(self.edges):
            l_reg = float(np.sum(self._edge_residuals(matrices, translations) ** 2))
        l_orth = 0.0
        if self.affine.any():
            a = matrices[self.affine]
            gram = np.einsum("nka,nkb->nab", a, a) - np.eye(3)
            l_orth = float(np.sum(_ORTH_WEIGHTS * gram**2))
        return l_data, l_reg, l_orth

    def _edge_residuals(self, matrices: np.ndarray, translations: np.ndarray) -> np.ndarray:
        j, k = self.edges[:, 0], self.edges[:, 1]
        return (
            np.einsum("eab,eb->ea", matrices[j], self.edge_offsets)
            + self.node_positions[j]
            + translations[j]
            - self.node_positions[k]
            - translations[k]
        )

    def _valid_scales(self, x: np.ndarray) -> bool:
        return bool(np.all(1.0 + x[self.scale_free] > 0))

    def value(self, x: np.ndarray) -> float:
        if not self._valid_scales(x):
            return math.inf
        l_data, l_reg, l_orth = self.terms(x)
        return l_data + self.alpha_reg * l_reg + self.alpha_orth * l_orth

    def value_and_grad(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        if not self._valid_scales(x):
            return math.inf, np.zeros_like(x)
        params = self.unpack(x)
        n = self.node_count
        rx, ry, rz = rotation_factors(params[:, EULER])
        rotations = rz @ ry @ rx
        upper = batch_upper(params)
        matrices = rotations @ upper
        translations = params[:, TRANSLATION]

        # data term
        residual = (self._deformed(matrices, translations) - self.targets) * self.keep
        loss = float(np.sum(residual**2))
        weighted = 2.0 * self.infl.weights[:, :, None] * residual[:, None, :]  # (V, Q, 3)
        outer = weighted[:, :, :, None] * self.local[:, :, None, :]  # (V, Q, 3, 3)
        grad_a = np.asarray(self.scatter @ outer.reshape(-1, 9)).reshape(n, 3, 3)
        grad_t = np.asarray(self.scatter @ weighted.reshape(-1, 3))

        # smoothness term
        if len(self.edges):
            e = self._edge_residuals(matrices, translations)
            loss += self.alpha_reg * float(np.sum(e**2))
            g = 2.0 * self.alpha_reg * e
            j, k = self.edges[:, 0], self.edges[:, 1]
            np.add.at(grad_a, j, g[:, :, None] * self.edge_offsets[:, None, :])
            np.add.at(grad_t, j, g)
            np.add.at(grad_t, k, -g)

        # orthogonality term, affine nodes only
        if self.affine.any():
            a = matrices[self.affine]
            gram = np.einsum("nka,nkb->nab", a, a) - np.eye(3)
            loss += self.alpha_orth * float(np.sum(_ORTH_WEIGHTS * gram**2))
            grad_a[self.affine] += self.alpha_orth * 4.0 * a @ (_ORTH_WEIGHTS * gram)

        grad = np.zeros((n, PARAM_COUNT))
        drx, dry, drz = rotation_derivative_factors(params[:, EULER])
        grad[:, 0] = np.sum(grad_a * (rz @ ry @ drx @ upper), axis=(1, 2))
        grad[:, 1] = np.sum(grad_a * (rz @ dry @ rx @ upper), axis=(1, 2))
        grad[:, 2] = np.sum(grad_a * (drz @ ry @ rx @ upper), axis=(1, 2))
        grad[:, TRANSLATION] = grad_t

        k_mat = np.transpose(rotations, (0, 2, 1)) @ grad_a  # R^T dL/dA
        hxy, hxz, hyz = params[:, 9], params[:, 10], params[:, 11]
        scales = 1.0 + params[:, SCALE]
        grad[:, 6] = k_mat[:, 0, 0] + k_mat[:, 0, 1] * hxy + k_mat[:, 0, 2] * hxz
        grad[:, 7] = k_mat[:, 1, 1] + k_mat[:, 1, 2] * hyz
        grad[:, 8] = k_mat[:, 2, 2]
        grad[:, 9] = scales[:, 0] * k_mat[:, 0, 1]
        grad[:, 10] = scales[:, 0] * k_mat[:, 0, 2]
        grad[:, 11] = scales[:, 1] * k_mat[:, 1, 2]

        return loss, grad.ravel()[self.free]


def gradient_descent(
    problem: DeformationProblem, x0: np.ndarray, max_iters: int, tol: float
) -> Tuple[np.ndarray, float]:
    """Steepest descent with Armijo backtracking; the step grows after each success."""
    x = x0.copy()
    f, g = problem.value_and_grad(x)
    if not math.isfinite(f):
        raise DivergenceError(f"initial loss is {f}")
    step = 1.0
    for iteration in range(max_iters):
        g2 = float(g @ g)
        if g2 == 0.0:
            break
        while True:
            candidate = x - step * g
            f_new = problem.value(candidate)
            if math.isfinite(f_new) and f_new <= f - ARMIJO_C * step * g2:
                break
            step *= 0.5
            if step < MIN_STEP:
                logger.debug("Line search stalled after %d iterations", iteration)
                return x, f
        decrease = f - f_new
        x = candidate
        f, g = problem.value_and_grad(x)
        step *= 2.0
        if decrease <= tol * max(f, 1e-300):
            break
    return x, f


def lbfgs(
    problem: DeformationProblem, x0: np.ndarray, max_iters: int, tol: float
) -> Tuple[np.ndarray, float]:
    bounds = [(-1.0 + 1e-6, None) if s else (None, None) for s in problem.scale_free]
    result = minimize(
        problem.value_and_grad,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iters, "ftol": tol},
    )
    x = np.asarray(result.x, dtype=np.float64)
    f = problem.value(x)
    # never hand back something worse than the start
    f0 = problem.value(x0)
    if not f <= f0:
        return x0.copy(), f0
    return x, f


class TransformFitter:
    """ICP-style alternation of correspondence search and loss minimisation."""

    def __init__(
        self,
        source: Mesh,
        target: Mesh,
        nodes: KeyNodeSet,
        mask: CombinationMask,
        cfg: SolverConfig,
        infl: InfluenceMap | None = None,
        graph: InfluenceGraph | None = None,
    ):
        from lib.motion.keynodes import build_influence_graph

        self.source = source
        self.target = target
        self.nodes = nodes
        self.mask = mask
        self.cfg = cfg
        self.infl = infl or build_influence_map(source, nodes, cfg.segmentation, cfg.q)
        self.graph = graph or build_influence_graph(self.infl, nodes.count)
        self.tree = cKDTree(target.vertices)
        self.history: List[float] = []

    def correspondences(self, deformed: np.ndarray) -> np.ndarray:
        query = deformed
        if self.cfg.seg_corr_enabled and self.source.labels is not None and self.target.labels is not None:
            current = self.source.with_vertices(deformed)
            offsets = seg_guided_prealign(current, self.target)
            query = deformed + offset_per_vertex(current, offsets)
        return find_correspondences(query, self.target, self.tree, self.cfg.reject_factor)

    def problem(self, corr: np.ndarray) -> DeformationProblem:
        return DeformationProblem(
            vertices=self.source.vertices,
            nodes=self.nodes,
            infl=self.infl,
            graph=self.graph,
            mask=self.mask,
            targets=self.target.vertices[np.maximum(corr, 0)],
            keep=corr >= 0,
            alpha_reg=self.cfg.alpha_reg,
            alpha_orth=self.cfg.alpha_orth,
        )

    def fit(self, initial: NodeTransforms | None = None) -> Tuple[NodeTransforms, float]:
        transforms = NodeTransforms.identity(self.nodes, self.mask)
        params = transforms.masked_params
        if initial is not None:
            params = np.where(transforms.flags, initial.params, 0.0)
        optimizer = gradient_descent if self.cfg.optimizer == "gradient_descent" else lbfgs

        self.history = []
        for outer in range(self.cfg.max_outer_iters):
            corr = self.correspondences(self._deform(params))
            problem = self.problem(corr)
            x0 = problem.pack(params)
            x, loss = optimizer(problem, x0, self.cfg.max_inner_iters, self.cfg.convergence_tol)
            if not math.isfinite(loss):
                raise DivergenceError(f"loss became {loss} in outer iteration {outer}")

            if self.history and loss > self.history[-1]:
                logger.debug("Outer iteration %d did not improve (%.6g), stopping", outer, loss)
                break
            params = problem.unpack(x)
            self.history.append(loss)
            logger.debug("Outer iteration %d: loss %.6g", outer, loss)

            if loss == 0.0:
                break
            if len(self.history) > 1:
                previous = self.history[-2]
                if previous - loss <= self.cfg.convergence_tol * max(previous, 1e-300):
                    break

        final = transforms.with_params(params)
        return final, self.history[-1] if self.history else math.inf

    def _deform(self, params: np.ndarray) -> np.ndarray:
        return self.source.vertices + blend_displacements(
            self.source.vertices,
            self.nodes.positions,
            batch_compose(params),
            params[:, TRANSLATION],
            self.infl,
        )


def fit_transforms(
    source: Mesh,
    target: Mesh,
    nodes: KeyNodeSet,
    mask: CombinationMask,
    cfg: SolverConfig,
    infl: InfluenceMap | None = None,
    graph: InfluenceGraph | None = None,
    initial: NodeTransforms | None = None,
) -> Tuple[NodeTransforms, float]:
    """Fit per-node transforms deforming ``source`` onto ``target``.

    Returns the transforms and the final total loss. The outer-iteration loss
    sequence is non-increasing: an iteration that would raise it ends the fit
    with the previous transforms.
    """
    return TransformFitter(source, target, nodes, mask, cfg, infl, graph).fit(initial)
