"""Tests for influence maps, blending, loss terms and correspondences."""

import numpy as np
import pytest

from lib.errors import AlignmentError, EmptyNodeSet, NoValidNodes
from lib.mesh.models import BodyPart, Mesh, SegmentationConfig, SegmentationMode
from lib.motion.affine import FULL_MASK, RIGID_MASK, compose
from lib.motion.deform import (
    build_influence_map,
    data_loss,
    deform_mesh,
    find_correspondences,
    offset_per_vertex,
    orthogonality_loss,
    reg_loss,
    seg_guided_prealign,
)
from lib.motion.keynodes import build_influence_graph
from lib.motion.models import KeyNodeSet, NodeTransforms

OFF = SegmentationConfig(mode=SegmentationMode.OFF)


@pytest.fixture
def nodes(grid_mesh):
    return KeyNodeSet.from_positions(grid_mesh.vertices[[0, 5, 30, 35, 14]], grid_mesh, SegmentationConfig())


def direct_blend(mesh, nodes, transforms, infl):
    """x' = sum_j w_j [A_j (x - n_j) + t_j + n_j], vertex by vertex."""
    out = np.zeros_like(mesh.vertices)
    for v, x in enumerate(mesh.vertices):
        for j, w in zip(infl.indices[v], infl.weights[v]):
            a = compose(transforms.node_params(int(j)))
            t = np.asarray(transforms.node_params(int(j)).translation)
            n = nodes.positions[j]
            out[v] += w * (a @ (x - n) + t + n)
    return out


class TestInfluenceMap:
    def test_weights_sum_to_one(self, grid_mesh, nodes):
        infl = build_influence_map(grid_mesh, nodes, SegmentationConfig(), q=4)
        assert infl.indices.shape == (grid_mesh.vertex_count, 4)
        np.testing.assert_allclose(infl.weights.sum(axis=1), 1.0)
        assert np.all(infl.weights > 0)

    def test_labels_filter_nodes(self, grid_mesh, nodes):
        infl = build_influence_map(grid_mesh, nodes, SegmentationConfig(), q=4)
        node_labels = nodes.labels[infl.indices]
        assert np.all(node_labels == grid_mesh.labels[:, None])

    def test_replicates_when_few_valid_nodes(self, grid_mesh):
        positions = grid_mesh.vertices[[0, 35]]
        nodes = KeyNodeSet.from_positions(positions, grid_mesh, SegmentationConfig())
        infl = build_influence_map(grid_mesh, nodes, SegmentationConfig(), q=3)
        # each half has exactly one node of its label
        assert np.all(infl.indices == infl.indices[:, :1])

    def test_manual_mode_requires_nodes_per_part(self, grid_mesh):
        nodes = KeyNodeSet.from_positions(grid_mesh.vertices[[0]], grid_mesh, SegmentationConfig())
        with pytest.raises(NoValidNodes):
            build_influence_map(grid_mesh, nodes, SegmentationConfig(mode=SegmentationMode.MANUAL))

    def test_auto_mode_falls_back(self, grid_mesh):
        nodes = KeyNodeSet.from_positions(grid_mesh.vertices[[0]], grid_mesh, SegmentationConfig())
        infl = build_influence_map(grid_mesh, nodes, SegmentationConfig(mode=SegmentationMode.AUTO), q=2)
        assert np.all(infl.indices == 0)

    def test_empty_nodes(self, grid_mesh):
        with pytest.raises(EmptyNodeSet):
            build_influence_map(grid_mesh, KeyNodeSet(positions=np.zeros((0, 3))), OFF)

    def test_node_on_vertex_is_finite(self, grid_mesh, nodes):
        infl = build_influence_map(grid_mesh, nodes, OFF)
        assert np.all(np.isfinite(infl.weights))
        # the vertex under node 0 is dominated by it
        assert infl.indices[0, 0] == 0
        assert infl.weights[0, 0] > 0.99


class TestDeformMesh:
    def test_identity_is_exact(self, grid_mesh, nodes):
        infl = build_influence_map(grid_mesh, nodes, SegmentationConfig())
        out = deform_mesh(grid_mesh, nodes, NodeTransforms.identity(nodes, FULL_MASK), infl)
        np.testing.assert_array_equal(out.vertices, grid_mesh.vertices)
        np.testing.assert_array_equal(out.labels, grid_mesh.labels)

    def test_matches_direct_evaluation(self, rng, grid_mesh, nodes):
        infl = build_influence_map(grid_mesh, nodes, OFF)
        affine = np.array([True, False, True, False, True])
        typed = KeyNodeSet(positions=nodes.positions, labels=nodes.labels, affine=affine)
        for _ in range(20):
            params = rng.normal(scale=0.2, size=(nodes.count, 12))
            transforms = NodeTransforms(params=params, mask=FULL_MASK, affine=affine)
            out = deform_mesh(grid_mesh, typed, transforms, infl)
            np.testing.assert_allclose(out.vertices, direct_blend(grid_mesh, typed, transforms, infl), atol=1e-12)

    def test_uniform_translation(self, grid_mesh, nodes):
        infl = build_influence_map(grid_mesh, nodes, OFF)
        params = np.zeros((nodes.count, 12))
        params[:, 3:6] = [0.5, -0.25, 1.0]
        out = deform_mesh(grid_mesh, nodes, NodeTransforms(params=params, mask=RIGID_MASK, affine=nodes.affine_flags), infl)
        np.testing.assert_allclose(out.vertices, grid_mesh.vertices + [0.5, -0.25, 1.0], atol=1e-12)

    def test_rigid_nodes_ignore_scale(self, grid_mesh, nodes):
        infl = build_influence_map(grid_mesh, nodes, OFF)
        params = np.zeros((nodes.count, 12))
        params[:, 6:9] = 0.5
        rigid = NodeTransforms(params=params, mask=FULL_MASK, affine=np.zeros(nodes.count, dtype=bool))
        out = deform_mesh(grid_mesh, nodes, rigid, infl)
        np.testing.assert_array_equal(out.vertices, grid_mesh.vertices)

    def test_alignment_checked(self, grid_mesh, nodes):
        infl = build_influence_map(grid_mesh, nodes, OFF)
        short = NodeTransforms.identity(nodes.subset([0, 1]), FULL_MASK)
        with pytest.raises(AlignmentError):
            deform_mesh(grid_mesh, nodes, short, infl)


class TestLosses:
    def test_identity_losses_are_zero(self, grid_mesh, nodes):
        infl = build_influence_map(grid_mesh, nodes, OFF)
        graph = build_influence_graph(infl, nodes.count)
        identity = NodeTransforms.identity(nodes, FULL_MASK)
        assert reg_loss(nodes, identity, graph) < 1e-24
        assert orthogonality_loss(identity) == 0.0
        corr = np.arange(grid_mesh.vertex_count)
        assert data_loss(grid_mesh, grid_mesh, corr) == 0.0

    def test_orthogonality_only_for_affine_nodes(self, nodes):
        params = np.zeros((nodes.count, 12))
        params[:, 6] = 1.0  # sx = 2
        rigid = NodeTransforms(params=params, mask=FULL_MASK, affine=np.zeros(nodes.count, dtype=bool))
        assert orthogonality_loss(rigid) == 0.0
        affine = NodeTransforms(params=params, mask=FULL_MASK, affine=np.ones(nodes.count, dtype=bool))
        # (1 - 4)^2 per node
        assert orthogonality_loss(affine) == pytest.approx(9.0 * nodes.count)

    def test_reg_loss_for_disagreeing_translations(self, grid_mesh, nodes):
        infl = build_influence_map(grid_mesh, nodes, OFF)
        graph = build_influence_graph(infl, nodes.count)
        params = np.zeros((nodes.count, 12))
        params[0, 3] = 1.0
        transforms = NodeTransforms(params=params, mask=RIGID_MASK, affine=nodes.affine_flags)
        degree = len(graph.neighbors(0))
        # each edge at node 0 contributes 1 per direction
        assert reg_loss(nodes, transforms, graph) == pytest.approx(2.0 * degree)

    def test_rejected_correspondences_ignored(self, grid_mesh):
        moved = grid_mesh.with_vertices(grid_mesh.vertices + 1.0)
        corr = np.full(grid_mesh.vertex_count, -1)
        assert data_loss(moved, grid_mesh, corr) == 0.0
        corr[0] = 0
        assert data_loss(moved, grid_mesh, corr) == pytest.approx(3.0)


class TestCorrespondences:
    def test_nearest_and_rejection(self, grid_mesh):
        query = grid_mesh.vertices + [0.0, 0.01, 0.0]
        query[0] += [0.0, 10.0, 0.0]
        corr = find_correspondences(query, grid_mesh)
        assert corr[0] == -1
        np.testing.assert_array_equal(corr[1:], np.arange(1, grid_mesh.vertex_count))

    def test_prealign_offsets(self, grid_mesh):
        shift = np.where(grid_mesh.labels[:, None] == int(BodyPart.HEAD), [0.0, 2.0, 0.0], [0.0, 0.0, 0.0])
        target = grid_mesh.with_vertices(grid_mesh.vertices + shift)
        offsets = seg_guided_prealign(grid_mesh, target)
        np.testing.assert_allclose(offsets[BodyPart.HEAD], [0.0, 2.0, 0.0])
        np.testing.assert_allclose(offsets[BodyPart.TORSO], 0.0)
        np.testing.assert_allclose(offset_per_vertex(grid_mesh, offsets), shift)

    def test_prealign_unlabelled(self, random_mesh):
        assert seg_guided_prealign(random_mesh, random_mesh) == {}
        assert not offset_per_vertex(random_mesh, {}).any()

    def test_prealign_missing_part(self, grid_mesh):
        target = Mesh(vertices=grid_mesh.vertices, labels=np.full(grid_mesh.vertex_count, int(BodyPart.TORSO)))
        offsets = seg_guided_prealign(grid_mesh, target)
        np.testing.assert_array_equal(offsets[BodyPart.HEAD], 0.0)
