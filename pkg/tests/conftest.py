"""Shared fixtures: seeded meshes, small synthetic humanoids and fast codec settings.

The solver and generator limits are kept low so full encodes stay quick.
"""

import os

import numpy as np
import pytest

# process settings come from the environment; keep them deterministic
os.environ.setdefault("BMKN_LOG_LEVEL", "WARNING")
os.environ["BMKN_WORKERS"] = "1"
os.environ["BMKN_CONFIG_PATH"] = "does-not-exist.yml"

from lib.codec.config import CodecConfig  # noqa: E402
from lib.mesh.models import BodyPart, Mesh, Sequence  # noqa: E402
from lib.motion.keynodes import GeneratorConfig  # noqa: E402
from lib.motion.solver import SolverConfig  # noqa: E402
from lib.synthetic import ScenarioConfig, synthesize  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid_mesh():
    """A 6 x 6 labelled grid in the x/z plane: left half torso, right half head."""
    xs, zs = np.meshgrid(np.linspace(0.0, 1.0, 6), np.linspace(0.0, 1.0, 6), indexing="ij")
    vertices = np.stack([xs.ravel(), np.zeros(xs.size), zs.ravel()], axis=1)
    faces = []
    for i in range(5):
        for j in range(5):
            a = i * 6 + j
            faces.append((a, a + 6, a + 1))
            faces.append((a + 1, a + 6, a + 7))
    labels = np.where(vertices[:, 0] < 0.5, int(BodyPart.TORSO), int(BodyPart.HEAD))
    return Mesh(vertices=vertices, faces=np.array(faces), labels=labels)


@pytest.fixture
def random_mesh(rng):
    vertices = rng.normal(size=(40, 3))
    faces = rng.integers(0, 40, size=(30, 3))
    return Mesh(vertices=vertices, faces=faces)


def small_scenario(name: str, frames: int = 4, **kwargs) -> Sequence:
    return synthesize(ScenarioConfig(scenario=name, frames=frames, resolution=4, seed=3, **kwargs))


@pytest.fixture
def walker_seq():
    return small_scenario("walker")


@pytest.fixture
def swish_seq():
    return small_scenario("swish")


@pytest.fixture
def drift_seq():
    return small_scenario("drift", velocity=(0.01, 0.0, 0.0))


@pytest.fixture
def fast_solver():
    return SolverConfig(max_outer_iters=2, max_inner_iters=10)


@pytest.fixture
def fast_codec_config():
    return CodecConfig(
        gof_size=4,
        generator=GeneratorConfig(target_count=10, max_rounds=2),
        solver=SolverConfig(max_outer_iters=2, max_inner_iters=10),
    )
