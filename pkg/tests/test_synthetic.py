"""Tests for the synthetic humanoid scenarios."""

import numpy as np
import pytest
from pydantic import ValidationError

from lib.errors import ConfigError, UnknownScenario
from lib.mesh.models import BodyPart
from lib.synthetic import Scenario, ScenarioConfig, ellipsoid, rest_pose, synthesize


def edge_counts(faces: np.ndarray) -> np.ndarray:
    edges = np.sort(np.vstack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return counts


class TestBody:
    def test_default_resolution_size(self):
        mesh = rest_pose()
        assert 500 <= mesh.vertex_count <= 5000
        assert mesh.parts() == list(BodyPart)

    @pytest.mark.parametrize("resolution", [3, 4, 8])
    def test_ellipsoid_is_closed(self, resolution):
        vertices, faces = ellipsoid((0.0, 0.0, 0.0), (1.0, 2.0, 1.0), resolution)
        assert len(vertices) == 2 + (resolution - 1) * 2 * resolution
        assert np.all(edge_counts(faces) == 2)

    def test_ellipsoid_axes(self):
        vertices, _ = ellipsoid((1.0, 0.0, 0.0), (0.5, 2.0, 0.25), 6)
        np.testing.assert_allclose(vertices.max(axis=0), [1.5, 2.0, 0.25], atol=1e-12)
        np.testing.assert_allclose(vertices.min(axis=0), [0.5, -2.0, -0.25], atol=1e-12)


class TestScenarios:
    def test_drift_is_exact(self):
        cfg = ScenarioConfig(scenario="drift", frames=5, resolution=4, velocity=(0.02, -0.01, 0.0))
        seq = synthesize(cfg)
        rest = rest_pose(4)
        for k, frame in enumerate(seq.frames):
            np.testing.assert_array_equal(frame.vertices, rest.vertices + k * np.array([0.02, -0.01, 0.0]))
            np.testing.assert_array_equal(frame.labels, rest.labels)

    def test_swish_without_amplitude_is_walker(self):
        walker = synthesize(ScenarioConfig(scenario="walker", frames=4, resolution=4, seed=5))
        swish = synthesize(ScenarioConfig(scenario="swish", frames=4, resolution=4, seed=5, amplitude=0.0))
        for a, b in zip(walker.frames, swish.frames):
            np.testing.assert_array_equal(a.vertices, b.vertices)

    def test_swish_deforms_torso(self, walker_seq, swish_seq):
        torso = walker_seq.frames[0].labels == int(BodyPart.TORSO)
        diffs = [np.abs(a.vertices - b.vertices) for a, b in zip(walker_seq.frames, swish_seq.frames)]
        assert max(d[torso].max() for d in diffs) > 1e-3
        assert max(d[~torso].max() for d in diffs) == 0.0

    def test_walker_head_follows_root(self, walker_seq):
        head = walker_seq.frames[0].labels == int(BodyPart.HEAD)
        step = walker_seq.frames[1].vertices[head] - walker_seq.frames[0].vertices[head]
        np.testing.assert_allclose(step, np.tile([0.0, 0.0, 0.005], (int(head.sum()), 1)), atol=1e-12)

    def test_walker_moves_limbs(self, walker_seq):
        arm = walker_seq.frames[0].labels == int(BodyPart.LEFT_LOWER_ARM)
        assert np.abs(walker_seq.frames[2].vertices[arm] - walker_seq.frames[0].vertices[arm]).max() > 1e-3

    def test_seeded(self):
        cfg = ScenarioConfig(frames=3, resolution=4, seed=11)
        a, b = synthesize(cfg), synthesize(cfg)
        c = synthesize(cfg.model_copy(update={"seed": 12}))
        np.testing.assert_array_equal(a.frames[2].vertices, b.frames[2].vertices)
        assert not np.array_equal(a.frames[2].vertices, c.frames[2].vertices)

    def test_frame_rate(self):
        seq = synthesize(ScenarioConfig(frames=2, resolution=3, frame_rate=24.0))
        assert seq.frame_rate == 24.0
        assert len(seq) == 2


class TestScenarioConfig:
    def test_unknown_scenario(self):
        with pytest.raises(UnknownScenario):
            synthesize(ScenarioConfig(scenario="jog"))

    def test_parse_case_insensitive(self):
        assert Scenario.parse(" Swish ") == Scenario.SWISH

    @pytest.mark.parametrize("kwargs", [{"resolution": 2}, {"frames": 0}, {"period": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            ScenarioConfig(**kwargs)

    def test_load_section(self, tmp_path):
        path = tmp_path / "scenario.yml"
        path.write_text("scenario:\n  scenario: swish\n  frames: 3\ncodec:\n  gof_size: 4\n")
        cfg = ScenarioConfig.load(path)
        assert cfg.kind == Scenario.SWISH
        assert cfg.frames == 3

    def test_load_flat(self, tmp_path):
        path = tmp_path / "scenario.yml"
        path.write_text("scenario: drift\nframes: 2\nvelocity: [0.0, 0.1, 0.0]\n")
        cfg = ScenarioConfig.load(path)
        assert cfg.kind == Scenario.DRIFT
        assert cfg.velocity == (0.0, 0.1, 0.0)

    def test_load_invalid(self, tmp_path):
        path = tmp_path / "scenario.yml"
        path.write_text("scenario:\n  resolution: 1\n")
        with pytest.raises(ConfigError):
            ScenarioConfig.load(path)
