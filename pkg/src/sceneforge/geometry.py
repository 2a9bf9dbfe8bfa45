"""Pinhole camera types, rigid transforms, projection and back-projection.

Coordinate conventions used throughout the package:

* World and camera frames are right-handed. The camera looks along +z,
  x points right, y points down (standard computer-vision convention).
* A :class:`CameraPose` is the world-to-camera map ``x_cam = R @ x_world + t``.
  The camera center in world coordinates is ``c = -R.T @ t``.
* Pixel coordinates are ``(u, v) = (column, row)`` with pixel centers at
  integer coordinates; ``u`` ranges over ``[0, width)``, ``v`` over
  ``[0, height)``.
* Depth is camera-space z, not ray length.
* Invalid depth entries carry a 0.0 sentinel and a False validity bit;
  statistics never touch them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInputError, ParameterError, ShapeError

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ParameterError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width <= 0 or self.height <= 0:
            raise ParameterError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ParameterError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]], dtype=np.float64
        )


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform ``x_cam = rotation @ x_world + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ShapeError(f"rotation must be 3x3, got {R.shape}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ParameterError("pose contains non-finite values")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > _ORTHO_TOL:
            raise ParameterError(f"rotation not orthonormal (max |R^T R - I| = {err:.3g})")
        det = np.linalg.det(R)
        if abs(det - 1.0) > _ORTHO_TOL:
            raise ParameterError(f"rotation determinant {det} != 1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def camera_center(self) -> np.ndarray:
        """Camera center in world coordinates, ``c = -R.T @ t``."""
        return -self.rotation.T @ self.translation

    @property
    def matrix(self) -> np.ndarray:
        """4x4 homogeneous world-to-camera matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def orthonormalized(self) -> "CameraPose":
        """Project the rotation back onto SO(3) via SVD."""
        u, _, vt = np.linalg.svd(self.rotation)
        R = u @ vt
        if np.linalg.det(R) < 0:
            R = u @ np.diag([1.0, 1.0, -1.0]) @ vt
        return CameraPose(R, self.translation)


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth with a validity bitmap.

    Invalid entries are forced to 0.0 and excluded from all statistics.
    """

    values: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.validity, dtype=bool)
        if vals.ndim != 2:
            raise ShapeError(f"depth values must be 2-D, got shape {vals.shape}")
        if valid.shape != vals.shape:
            raise ShapeError(f"validity shape {valid.shape} != values shape {vals.shape}")
        good = vals[valid]
        if good.size and (not np.all(np.isfinite(good)) or np.any(good < 0)):
            raise ParameterError("valid depth entries must be finite and >= 0")
        vals = np.where(valid, vals, 0.0)
        vals.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "validity", valid)

    @classmethod
    def full(cls, values: np.ndarray) -> "DepthMap":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def valid_values(self) -> np.ndarray:
        return self.values[self.validity]


@dataclass(frozen=True)
class BinaryMask:
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=bool)
        if vals.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def popcount(self) -> int:
        return int(np.count_nonzero(self.values))


@dataclass(frozen=True)
class PointCloud:
    """Colored 3-D points in world coordinates; colors clamped to [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        col = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(pos) != len(col):
            raise ShapeError(f"positions ({len(pos)}) and colors ({len(col)}) differ in length")
        if not np.all(np.isfinite(pos)):
            raise ParameterError("point positions must be finite")
        col = np.clip(col, 0.0, 1.0)
        pos.setflags(write=False)
        col.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return len(self.positions)


def backproject(
    depth: DepthMap,
    mask: BinaryMask,
    colors: np.ndarray,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
) -> PointCloud:
    """Lift masked pixels to world points through the inverse camera model.

    Each pixel (u, v) with ``mask = 1`` produces one point at
    ``E^-1 (D(u, v) * K^-1 (u, v, 1)^T)``, scanned in row-major order.
    """
    colors = np.asarray(colors, dtype=np.float64)
    h, w = depth.shape
    if mask.shape != (h, w):
        raise ShapeError(f"mask shape {mask.shape} != depth shape {(h, w)}")
    if colors.shape != (h, w, 3):
        raise ShapeError(f"colors shape {colors.shape} != {(h, w, 3)}")
    if (intrinsics.height, intrinsics.width) != (h, w):
        raise ShapeError(
            f"intrinsics are {intrinsics.width}x{intrinsics.height}, maps are {w}x{h}"
        )
    if np.any(mask.values & ~depth.validity):
        raise ParameterError("mask selects pixels with invalid depth")

    vv, uu = np.nonzero(mask.values)
    d = depth.values[vv, uu]
    x_cam = np.stack(
        [
            (uu - intrinsics.cx) / intrinsics.fx * d,
            (vv - intrinsics.cy) / intrinsics.fy * d,
            d,
        ],
        axis=1,
    )
    pos = (x_cam - pose.translation) @ pose.rotation
    return PointCloud(pos, colors[vv, uu])


def project(
    points: np.ndarray, intrinsics: CameraIntrinsics, pose: CameraPose
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project world points to pixels; returns (pixels, depths, in_front).

    Accepts a single (3,) point or an (N, 3) array. Points with camera-space
    z <= 0 are flagged rather than raised; their pixel entries are NaN.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ParameterError("points must be finite")
    cam = pts @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
    pix = np.stack([u, v], axis=1)
    pix[~in_front] = np.nan
    if single:
        return pix[0], z[0], in_front[0]
    return pix, z, in_front


def compose(a: CameraPose, b: CameraPose) -> CameraPose:
    """Pose applying b first, then a: ``compose(a, b).matrix = a.matrix @ b.matrix``."""
    return CameraPose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(a: CameraPose) -> CameraPose:
    return CameraPose(a.rotation.T, -a.rotation.T @ a.translation)


def relative(a: CameraPose, b: CameraPose) -> CameraPose:
    """Map from a's camera frame to b's camera frame."""
    return compose(b, invert(a))


def min_valid_depth(depth: DepthMap) -> float:
    good = depth.valid_values()
    if good.size == 0:
        raise EmptyInputError("depth map has no valid pixels")
    return float(good.min())
