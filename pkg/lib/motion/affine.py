"""Decomposed affine transforms: A = R(euler) . S . H.

R = Rz(tz) . Ry(ty) . Rx(tx), S = diag(1 + scale_resid) and H is unit upper
triangular with (hxy, hxz, hyz) above the diagonal. Besides the scalar API
(``compose``/``decompose``/``mask_params``) the module has batched helpers
working on (N, 12) parameter arrays laid out as

    [tx, ty, tz, t0, t1, t2, s0, s1, s2, hxy, hxz, hyz]

which is what the solver and the coders use.
"""

from __future__ import annotations

import logging
import math
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from lib.errors import GimbalLock, NonPositiveScale, SingularMatrix

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]

EULER = slice(0, 3)
TRANSLATION = slice(3, 6)
SCALE = slice(6, 9)
SHEAR = slice(9, 12)
PARAM_COUNT = 12

GIMBAL_EPS = 1e-9
SINGULAR_EPS = 1e-12


class CombinationMask(BaseModel):
    """Which of R, T, S, H are enabled for affine nodes."""

    model_config = ConfigDict(frozen=True)

    r_on: bool = True
    t_on: bool = True
    s_on: bool = True
    h_on: bool = True

    @property
    def code(self) -> str:
        """Bit string in R, T, S, H order, e.g. ``1011``."""
        return "".join("1" if on else "0" for on in (self.r_on, self.t_on, self.s_on, self.h_on))

    @property
    def name(self) -> str:
        """Enabled letters, e.g. ``RSH``."""
        return "".join(
            letter for letter, on in zip("RTSH", (self.r_on, self.t_on, self.s_on, self.h_on)) if on
        )

    @property
    def enabled_count(self) -> int:
        return sum((self.r_on, self.t_on, self.s_on, self.h_on))

    @property
    def code_value(self) -> int:
        """The code as a 4-bit integer (R is the most significant bit)."""
        return int(self.code, 2)

    @property
    def is_legal(self) -> bool:
        return self.t_on

    def param_flags(self) -> np.ndarray:
        """12 booleans, one per entry of the parameter layout."""
        return np.repeat([self.r_on, self.t_on, self.s_on, self.h_on], 3)

    @classmethod
    def from_code(cls, code: str | int) -> "CombinationMask":
        if isinstance(code, int):
            code = format(code, "04b")
        if len(code) != 4 or set(code) - {"0", "1"}:
            raise ValueError(f"Invalid combination code '{code}'")
        r, t, s, h = (c == "1" for c in code)
        return cls(r_on=r, t_on=t, s_on=s, h_on=h)

    @classmethod
    def from_name(cls, name: str) -> "CombinationMask":
        letters = name.strip().upper()
        if set(letters) - set("RTSH") or len(set(letters)) != len(letters):
            raise ValueError(f"Invalid combination name '{name}'")
        return cls(r_on="R" in letters, t_on="T" in letters, s_on="S" in letters, h_on="H" in letters)

    @classmethod
    def parse(cls, value: "str | int | CombinationMask") -> "CombinationMask":
        if isinstance(value, CombinationMask):
            return value
        if isinstance(value, int):
            return cls.from_code(value)
        if set(value) <= {"0", "1"} and len(value) == 4:
            return cls.from_code(value)
        return cls.from_name(value)

    def __str__(self) -> str:
        return self.name


RIGID_MASK = CombinationMask(r_on=True, t_on=True, s_on=False, h_on=False)
FULL_MASK = CombinationMask()
TRANSLATION_MASK = CombinationMask(r_on=False, t_on=True, s_on=False, h_on=False)


def legal_masks() -> List[CombinationMask]:
    """The 8 masks with translation enabled, in ascending code order."""
    masks = [CombinationMask.from_code(code) for code in range(16)]
    return [m for m in masks if m.t_on]


class TransformParams(BaseModel):
    """Per-node motion: Euler angles (rad), translation, scale residuals and shears."""

    model_config = ConfigDict(frozen=True)

    euler: Vec3 = (0.0, 0.0, 0.0)
    translation: Vec3 = (0.0, 0.0, 0.0)
    scale_resid: Vec3 = (0.0, 0.0, 0.0)
    shear: Vec3 = (0.0, 0.0, 0.0)

    @field_validator("euler", "translation", "scale_resid", "shear", mode="before")
    def to_floats(cls, v) -> Vec3:
        values = tuple(float(x) for x in np.asarray(v, dtype=np.float64).reshape(3))
        return values  # type: ignore[return-value]

    def to_vector(self) -> np.ndarray:
        return np.array(self.euler + self.translation + self.scale_resid + self.shear)

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "TransformParams":
        v = np.asarray(vector, dtype=np.float64).reshape(PARAM_COUNT)
        return cls(euler=v[EULER], translation=v[TRANSLATION], scale_resid=v[SCALE], shear=v[SHEAR])

    @classmethod
    def identity(cls) -> "TransformParams":
        return cls()


def _rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_euler(theta_x: float, theta_y: float, theta_z: float) -> np.ndarray:
    """R = Rz(theta_z) . Ry(theta_y) . Rx(theta_x)."""
    return _rz(theta_z) @ _ry(theta_y) @ _rx(theta_x)


def shear_matrix(shear: Vec3 | np.ndarray) -> np.ndarray:
    hxy, hxz, hyz = shear
    return np.array([[1.0, hxy, hxz], [0.0, 1.0, hyz], [0.0, 0.0, 1.0]])


def compose(params: TransformParams) -> np.ndarray:
    """A = R . S . H."""
    scales = 1.0 + np.asarray(params.scale_resid)
    if np.any(scales <= 0):
        raise NonPositiveScale(f"scales {scales.tolist()} must be positive")
    return rotation_from_euler(*params.euler) @ np.diag(scales) @ shear_matrix(params.shear)


def euler_from_rotation(rotation: np.ndarray) -> Tuple[Vec3, bool]:
    """Principal-branch angles for R = Rz.Ry.Rx; second value flags gimbal lock.

    theta_y = asin(-R[2,0]) in [-pi/2, pi/2]. At gimbal lock theta_x is
    pinned to 0 and theta_z absorbs the remaining rotation.
    """
    r = rotation
    theta_y = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    if abs(math.cos(theta_y)) < GIMBAL_EPS:
        theta_z = math.atan2(-r[0, 1], r[1, 1])
        return (0.0, theta_y, theta_z), True
    theta_x = math.atan2(r[2, 1], r[2, 2])
    theta_z = math.atan2(r[1, 0], r[0, 0])
    return (theta_x, theta_y, theta_z), False


def decompose(matrix: np.ndarray, strict: bool = False) -> TransformParams:
    """Factor A = R . S . H via A = Q . U with a positive diagonal on U.

    Raises SingularMatrix for det(A) <= 0. At gimbal lock a warning is logged,
    or GimbalLock raised when ``strict``.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.shape != (3, 3) or not np.all(np.isfinite(a)):
        raise SingularMatrix("expected a finite 3x3 matrix")
    det = float(np.linalg.det(a))
    if det <= 0 or abs(det) < SINGULAR_EPS:
        raise SingularMatrix(f"det(A) = {det:.3e}, decomposition needs det > 0")

    q, u = np.linalg.qr(a)
    signs = np.sign(np.diag(u))
    signs[signs == 0] = 1.0
    q = q * signs  # flips columns
    u = signs[:, None] * u  # flips rows
    scales = np.diag(u).copy()
    shear = u / scales[:, None]

    euler, locked = euler_from_rotation(q)
    if locked:
        if strict:
            raise GimbalLock("|cos(theta_y)| below 1e-9, theta_x pinned to 0")
        logger.warning("Gimbal lock while decomposing, theta_x pinned to 0")

    return TransformParams(
        euler=euler,
        translation=(0.0, 0.0, 0.0),
        scale_resid=scales - 1.0,
        shear=(shear[0, 1], shear[0, 2], shear[1, 2]),
    )


def mask_params(params: TransformParams, mask: CombinationMask) -> TransformParams:
    """Replace disabled components with their identity encoding."""
    zero = (0.0, 0.0, 0.0)
    return TransformParams(
        euler=params.euler if mask.r_on else zero,
        translation=params.translation if mask.t_on else zero,
        scale_resid=params.scale_resid if mask.s_on else zero,
        shear=params.shear if mask.h_on else zero,
    )


# batched helpers


def rotation_factors(euler: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rx, Ry, Rz for every row of an (N, 3) angle array, each (N, 3, 3)."""
    n = len(euler)
    cx, sx = np.cos(euler[:, 0]), np.sin(euler[:, 0])
    cy, sy = np.cos(euler[:, 1]), np.sin(euler[:, 1])
    cz, sz = np.cos(euler[:, 2]), np.sin(euler[:, 2])
    rx = np.zeros((n, 3, 3))
    rx[:, 0, 0] = 1.0
    rx[:, 1, 1], rx[:, 1, 2], rx[:, 2, 1], rx[:, 2, 2] = cx, -sx, sx, cx
    ry = np.zeros((n, 3, 3))
    ry[:, 1, 1] = 1.0
    ry[:, 0, 0], ry[:, 0, 2], ry[:, 2, 0], ry[:, 2, 2] = cy, sy, -sy, cy
    rz = np.zeros((n, 3, 3))
    rz[:, 2, 2] = 1.0
    rz[:, 0, 0], rz[:, 0, 1], rz[:, 1, 0], rz[:, 1, 1] = cz, -sz, sz, cz
    return rx, ry, rz


def rotation_derivative_factors(
    euler: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Element-wise derivatives dRx/dtx, dRy/dty, dRz/dtz."""
    n = len(euler)
    cx, sx = np.cos(euler[:, 0]), np.sin(euler[:, 0])
    cy, sy = np.cos(euler[:, 1]), np.sin(euler[:, 1])
    cz, sz = np.cos(euler[:, 2]), np.sin(euler[:, 2])
    drx = np.zeros((n, 3, 3))
    drx[:, 1, 1], drx[:, 1, 2], drx[:, 2, 1], drx[:, 2, 2] = -sx, -cx, cx, -sx
    dry = np.zeros((n, 3, 3))
    dry[:, 0, 0], dry[:, 0, 2], dry[:, 2, 0], dry[:, 2, 2] = -sy, cy, -cy, -sy
    drz = np.zeros((n, 3, 3))
    drz[:, 0, 0], drz[:, 0, 1], drz[:, 1, 0], drz[:, 1, 1] = -sz, -cz, cz, -sz
    return drx, dry, drz


def batch_rotations(euler: np.ndarray) -> np.ndarray:
    rx, ry, rz = rotation_factors(euler)
    return rz @ ry @ rx


def batch_upper(params: np.ndarray) -> np.ndarray:
    """U = S . H for every row of an (N, 12) parameter array."""
    n = len(params)
    scales = 1.0 + params[:, SCALE]
    u = np.zeros((n, 3, 3))
    u[:, 0, 0], u[:, 1, 1], u[:, 2, 2] = scales[:, 0], scales[:, 1], scales[:, 2]
    u[:, 0, 1] = scales[:, 0] * params[:, 9]
    u[:, 0, 2] = scales[:, 0] * params[:, 10]
    u[:, 1, 2] = scales[:, 1] * params[:, 11]
    return u


def batch_compose(params: np.ndarray) -> np.ndarray:
    """(N, 3, 3) affine matrices for an (N, 12) parameter array."""
    return batch_rotations(params[:, EULER]) @ batch_upper(params)
