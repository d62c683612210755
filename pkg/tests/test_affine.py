"""Tests for the affine algebra: composition, QR decomposition and combination masks."""

import math

import numpy as np
import pytest

from lib.errors import GimbalLock, NonPositiveScale, SingularMatrix
from lib.motion.affine import (
    FULL_MASK,
    RIGID_MASK,
    CombinationMask,
    TransformParams,
    batch_compose,
    compose,
    decompose,
    euler_from_rotation,
    legal_masks,
    mask_params,
    rotation_from_euler,
)


def random_params(rng) -> TransformParams:
    return TransformParams(
        euler=(rng.uniform(-math.pi, math.pi), rng.uniform(-1.4, 1.4), rng.uniform(-math.pi, math.pi)),
        translation=rng.normal(size=3),
        scale_resid=rng.uniform(0.5, 2.0, size=3) - 1.0,
        shear=rng.uniform(-0.5, 0.5, size=3),
    )


class TestCombinationMask:
    def test_eight_legal_masks(self):
        masks = legal_masks()
        assert len(masks) == 8
        assert all(m.t_on for m in masks)
        assert [m.code_value for m in masks] == sorted(m.code_value for m in masks)

    @pytest.mark.parametrize("text,name", [("1100", "RT"), ("RTSH", "RTSH"), ("ths", "TSH"), ("0100", "T")])
    def test_parse(self, text, name):
        assert CombinationMask.parse(text).name == name

    def test_parse_int_code(self):
        assert CombinationMask.parse(0b1101) == CombinationMask.from_name("RTH")

    @pytest.mark.parametrize("text", ["RTX", "RRT", "10101"])
    def test_invalid(self, text):
        with pytest.raises(ValueError):
            CombinationMask.parse(text)

    def test_param_flags_layout(self):
        flags = CombinationMask.from_name("TS").param_flags()
        assert flags.tolist() == [False] * 3 + [True] * 6 + [False] * 3

    def test_mask_params_zeroes_disabled(self, rng):
        params = random_params(rng)
        masked = mask_params(params, RIGID_MASK)
        assert masked.euler == params.euler
        assert masked.scale_resid == (0.0, 0.0, 0.0)
        assert masked.shear == (0.0, 0.0, 0.0)


class TestComposeDecompose:
    def test_round_trip(self, rng):
        for _ in range(10_000):
            params = random_params(rng)
            a = compose(params)
            recovered = decompose(a)
            assert np.linalg.norm(compose(recovered) - a) < 1e-9
            r = rotation_from_euler(*recovered.euler)
            assert np.abs(r @ r.T - np.eye(3)).max() < 1e-12
            assert abs(np.linalg.det(r) - 1.0) < 1e-12

    def test_rotation_is_orthonormal(self, rng):
        for _ in range(100):
            r = rotation_from_euler(*rng.uniform(-math.pi, math.pi, size=3))
            np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)

    def test_identity(self):
        np.testing.assert_array_equal(compose(TransformParams.identity()), np.eye(3))
        params = decompose(np.eye(3))
        assert params.scale_resid == (0.0, 0.0, 0.0)
        assert params.shear == (0.0, 0.0, 0.0)

    def test_positive_scales_recovered(self):
        a = np.diag([2.0, 0.5, 1.5])
        params = decompose(a)
        np.testing.assert_allclose(params.scale_resid, [1.0, -0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(params.euler, 0.0, atol=1e-12)

    def test_non_positive_scale(self):
        with pytest.raises(NonPositiveScale):
            compose(TransformParams(scale_resid=(-1.0, 0.0, 0.0)))

    @pytest.mark.parametrize("matrix", [np.zeros((3, 3)), np.diag([1.0, 1.0, -1.0])])
    def test_singular_or_reflection(self, matrix):
        with pytest.raises(SingularMatrix):
            decompose(matrix)

    def test_gimbal_lock_angles(self):
        a = rotation_from_euler(0.3, math.pi / 2, 0.2)
        euler, locked = euler_from_rotation(a)
        assert locked
        assert euler[0] == 0.0
        np.testing.assert_allclose(rotation_from_euler(*euler), a, atol=1e-12)

    def test_gimbal_lock_decompose(self, caplog, mocker):
        a = rotation_from_euler(0.3, math.pi / 2, 0.2)
        # exact factors so the locked branch is hit deterministically
        mocker.patch("lib.motion.affine.np.linalg.qr", return_value=(a, np.eye(3)))
        params = decompose(a)
        assert params.euler[0] == 0.0
        assert "Gimbal lock" in caplog.text
        with pytest.raises(GimbalLock):
            decompose(a, strict=True)

    def test_euler_principal_branch(self, rng):
        for _ in range(50):
            angles = (rng.uniform(-3.0, 3.0), rng.uniform(-1.4, 1.4), rng.uniform(-3.0, 3.0))
            recovered, locked = euler_from_rotation(rotation_from_euler(*angles))
            assert not locked
            np.testing.assert_allclose(recovered, angles, atol=1e-10)

    def test_batch_matches_single(self, rng):
        params = [random_params(rng) for _ in range(5)]
        batch = batch_compose(np.array([p.to_vector() for p in params]))
        for single, matrix in zip(params, batch):
            np.testing.assert_allclose(matrix, compose(single), atol=1e-12)

    def test_vector_round_trip(self, rng):
        params = random_params(rng)
        assert TransformParams.from_vector(params.to_vector()) == params

    def test_full_mask_enables_everything(self):
        assert FULL_MASK.enabled_count == 4
        assert FULL_MASK.code == "1111"
