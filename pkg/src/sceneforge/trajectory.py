"""Camera path planning: slerp/spline interpolation, zoom-out and orbit plans.

Positions are interpolated on camera centers (``c = -R.T t``); orientations
follow constant-speed spherical interpolation of the rotation components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ParameterError
from .geometry import CameraIntrinsics, CameraPose, DepthMap, min_valid_depth


@dataclass(frozen=True)
class Trajectory:
    """Ordered camera poses sharing one set of intrinsics."""

    poses: tuple[CameraPose, ...]
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) == 0:
            raise ParameterError("trajectory must contain at least one pose")

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i) -> CameraPose:
        return self.poses[i]


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def slerp(R0: np.ndarray, R1: np.ndarray, t: float) -> np.ndarray:
    """Constant-speed spherical interpolation between two rotations.

    The second quaternion is flipped into the hemisphere of the first; at an
    exact half-turn ambiguity (orthogonal quaternions with a sign tie) the
    flip makes the component of largest magnitude positive, which fixes one
    of the two equal-length geodesics deterministically.
    """
    q0 = rotation_to_quat(np.asarray(R0, dtype=np.float64))
    q1 = rotation_to_quat(np.asarray(R1, dtype=np.float64))
    dot = float(np.dot(q0, q1))
    if abs(dot) < 1e-12:
        if q1[np.argmax(np.abs(q1))] < 0:
            q1 = -q1
        dot = float(np.dot(q0, q1))
    elif dot < 0:
        q1, dot = -q1, -dot
    dot = min(dot, 1.0)
    omega = np.arccos(dot)
    if omega < 1e-9:
        q = (1.0 - t) * q0 + t * q1
    else:
        s = np.sin(omega)
        q = (np.sin((1.0 - t) * omega) / s) * q0 + (np.sin(t * omega) / s) * q1
    return quat_to_rotation(q)


def _interp_centers(c0, c1, waypoints, n, mode):
    ts = np.linspace(0.0, 1.0, n)
    if mode == "linear":
        return c0[None, :] * (1.0 - ts)[:, None] + c1[None, :] * ts[:, None]
    if mode == "cubic-spline":
        knots = np.array([c0] + [np.asarray(w, dtype=np.float64) for w in (waypoints or [])] + [c1])
        if len(knots) < 3:
            # A spline needs interior structure; two knots degenerate to a line.
            return c0[None, :] * (1.0 - ts)[:, None] + c1[None, :] * ts[:, None]
        u = np.linspace(0.0, 1.0, len(knots))
        spline = CubicSpline(u, knots, axis=0, bc_type="natural")
        return spline(ts)
    raise ParameterError(f"unknown position mode {mode!r}")


def interpolate(
    start: CameraPose,
    end: CameraPose,
    n: int,
    intrinsics: CameraIntrinsics,
    position_mode: str = "linear",
    waypoints=None,
) -> Trajectory:
    """Interpolate n poses from start to end; endpoints are reproduced exactly."""
    if n < 2:
        raise ParameterError(f"need at least 2 frames, got {n}")
    centers = _interp_centers(start.camera_center, end.camera_center, waypoints, n, position_mode)
    poses = [start]
    for k in range(1, n - 1):
        R = slerp(start.rotation, end.rotation, k / (n - 1))
        poses.append(CameraPose(R, -R @ centers[k]))
    poses.append(end)
    return Trajectory(tuple(poses), intrinsics)


def plan_zoom_out(
    start: CameraPose, travel: float, n: int, intrinsics: CameraIntrinsics
) -> Trajectory:
    """Translate the camera backward along its own viewing axis by ``travel``."""
    if travel <= 0:
        raise ParameterError(f"travel must be positive, got {travel}")
    if n < 2:
        raise ParameterError(f"need at least 2 frames, got {n}")
    R = start.rotation
    forward = R.T @ np.array([0.0, 0.0, 1.0])
    c0 = start.camera_center
    poses = [start]
    for k in range(1, n):
        c = c0 - forward * (travel * k / (n - 1))
        poses.append(CameraPose(R, -R @ c))
    return Trajectory(tuple(poses), intrinsics)


def plan_orbit(
    start: CameraPose,
    pivot: np.ndarray,
    total_angle_deg: float,
    n: int,
    intrinsics: CameraIntrinsics,
) -> Trajectory:
    """Revolve the camera center about the vertical axis through ``pivot``.

    The vertical axis is the start camera's up direction (-y row of the
    rotation); every frame re-aims at the pivot with that axis as up.
    Positive angles follow the right-hand rule about the up axis.
    """
    pivot = np.asarray(pivot, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(pivot)):
        raise ParameterError("pivot must be finite")
    if abs(total_angle_deg) > 360.0:
        raise ParameterError(f"|total_angle| must be <= 360, got {total_angle_deg}")
    if n < 2:
        raise ParameterError(f"need at least 2 frames, got {n}")
    up = -start.rotation[1, :]
    up = up / np.linalg.norm(up)
    offset = start.camera_center - pivot
    axial = np.dot(offset, up) * up
    radial = offset - axial
    if np.linalg.norm(radial) < 1e-9:
        raise ParameterError("camera center lies on the orbit axis through the pivot")

    poses = []
    for k in range(n):
        theta = np.deg2rad(total_angle_deg) * k / (n - 1)
        c, s = np.cos(theta), np.sin(theta)
        # Rodrigues rotation of the offset about the up axis.
        rot_off = offset * c + np.cross(up, offset) * s + up * np.dot(up, offset) * (1.0 - c)
        center = pivot + rot_off
        poses.append(_aim_at(center, pivot, up))
    return Trajectory(tuple(poses), intrinsics)


def _aim_at(center: np.ndarray, target: np.ndarray, up: np.ndarray) -> CameraPose:
    z = target - center
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise ParameterError("camera center coincides with the aim target")
    z = z / nz
    down = -up
    x = np.cross(down, z)
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise ParameterError("viewing direction parallel to the up axis")
    x = x / nx
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=0)
    return CameraPose(R, -R @ center)


def collision_bound(depth: DepthMap, safety: float = 0.8) -> float:
    """Cap forward travel at ``safety`` times the minimum valid scene depth."""
    if not (0.0 < safety <= 1.0):
        raise ParameterError(f"safety must be in (0, 1], got {safety}")
    return safety * min_valid_depth(depth)
