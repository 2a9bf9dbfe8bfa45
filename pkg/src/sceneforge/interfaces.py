"""Pluggable contracts for the neural stages, plus synthetic-world oracles.

Three capabilities are abstracted: view completion (turn incomplete renders
into full frames), dense stereo (depth maps and poses from images), and
image refinement. The oracle implementations here are backed by a
procedurally generated ground-truth scene, which makes end-to-end pipeline
behavior verifiable without any pretrained network. A remote completer
client speaks the HTTP wire protocol, so a real model can be dropped in
behind a service.
"""

from __future__ import annotations

import base64
import io
import time
import uuid
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import requests
from PIL import Image as PILImage
from scipy.ndimage import gaussian_filter

from .errors import CompleterTimeoutError, ParameterError, ProtocolError, TransportError
from .geometry import CameraIntrinsics, CameraPose, DepthMap
from .rng import SplitMix64, substream
from .splat import GaussianScene, render
from .trajectory import Trajectory

# ---------------------------------------------------------------------------
# Capability contracts


@runtime_checkable
class ViewCompleter(Protocol):
    def complete(
        self,
        incomplete_frames: Sequence[np.ndarray],
        alphas: Sequence[np.ndarray],
        trajectory: Trajectory,
    ) -> list[np.ndarray]:
        ...


@dataclass(frozen=True)
class StereoEstimate:
    depths: list[DepthMap]
    poses: list[CameraPose]


@runtime_checkable
class DenseStereo(Protocol):
    def estimate(
        self, frames: Sequence[np.ndarray], pose_hints: Sequence[CameraPose] | None = None
    ) -> StereoEstimate:
        ...


@runtime_checkable
class ImageRefiner(Protocol):
    def refine(self, image: np.ndarray, t: float) -> np.ndarray:
        ...


# ---------------------------------------------------------------------------
# Synthetic ground-truth world
#
# Recipe (fixed; independent implementations must reproduce it from the seed):
# a 5 m cube room centered at the origin, walls on 55x55 inclusive grids with
# 0.5 m checkerboards, plus four boxes standing on the floor (+y is down).
# Box parameters come from a SplitMix64 stream seeded with the world seed,
# six draws per box in order: angle jitter, ring radius, half-extent x,
# half-extent z, height, palette index.

ROOM_HALF = 2.5
WALL_GRID = 55
CHECKER_SIZE = 0.5
CHECKER_AMP = 0.10
WALL_SCALE = 0.055
BOX_SPACING = 0.055
BOX_SCALE = 0.033
WORLD_OPACITY_LOGIT = 2.9444389791664403  # sigmoid -> 0.95

WALL_BASES = {
    "+x": (0.62, 0.55, 0.45),
    "-x": (0.45, 0.58, 0.62),
    "+y": (0.50, 0.50, 0.50),
    "-y": (0.72, 0.70, 0.66),
    "+z": (0.55, 0.62, 0.48),
    "-z": (0.60, 0.48, 0.58),
}
BOX_PALETTE = [
    (0.60, 0.40, 0.35),
    (0.35, 0.55, 0.60),
    (0.55, 0.60, 0.35),
    (0.50, 0.40, 0.60),
    (0.62, 0.55, 0.35),
    (0.38, 0.60, 0.45),
    (0.58, 0.45, 0.50),
    (0.42, 0.48, 0.62),
]
BOX_FACE_GAIN = {"top": 1.05, "+x": 0.95, "-x": 0.9, "+z": 1.0, "-z": 0.85}


@dataclass(frozen=True)
class SyntheticWorld:
    scene: GaussianScene
    seed: int
    start_pose: CameraPose
    pivot: np.ndarray
    boxes: tuple


def _checker_color(base, u, v):
    parity = (np.floor((u + ROOM_HALF) / CHECKER_SIZE) + np.floor((v + ROOM_HALF) / CHECKER_SIZE)) % 2
    sign = np.where(parity == 0, 1.0, -1.0)
    col = np.stack([np.full_like(u, b) for b in base], axis=-1)
    return np.clip(col + CHECKER_AMP * sign[..., None], 0.0, 1.0)


def _wall_points():
    grid = np.linspace(-ROOM_HALF, ROOM_HALF, WALL_GRID)
    uu, vv = np.meshgrid(grid, grid, indexing="ij")
    u, v = uu.ravel(), vv.ravel()
    const = np.full_like(u, ROOM_HALF)
    walls = {
        "+x": (np.stack([const, u, v], axis=1)),
        "-x": (np.stack([-const, u, v], axis=1)),
        "+y": (np.stack([u, const, v], axis=1)),
        "-y": (np.stack([u, -const, v], axis=1)),
        "+z": (np.stack([u, v, const], axis=1)),
        "-z": (np.stack([u, v, -const], axis=1)),
    }
    points, colors = [], []
    for name, pos in walls.items():
        points.append(pos)
        colors.append(_checker_color(WALL_BASES[name], u, v))
    return np.concatenate(points), np.concatenate(colors)


def _grid_1d(lo, hi, spacing):
    n = max(2, int(np.ceil((hi - lo) / spacing)) + 1)
    return np.linspace(lo, hi, n)


def _box_points(box):
    cx, cz, hx, hz, height, color = box
    top = ROOM_HALF - height
    xs = _grid_1d(cx - hx, cx + hx, BOX_SPACING)
    zs = _grid_1d(cz - hz, cz + hz, BOX_SPACING)
    ys = _grid_1d(top, ROOM_HALF, BOX_SPACING)
    points, colors = [], []

    def emit(pos, gain):
        points.append(pos)
        col = np.clip(np.array(color) * gain, 0.0, 1.0)
        colors.append(np.broadcast_to(col, (len(pos), 3)).copy())

    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    emit(np.stack([gx.ravel(), np.full(gx.size, top), gz.ravel()], axis=1), BOX_FACE_GAIN["top"])
    gy, gz2 = np.meshgrid(ys, zs, indexing="ij")
    emit(
        np.stack([np.full(gy.size, cx + hx), gy.ravel(), gz2.ravel()], axis=1),
        BOX_FACE_GAIN["+x"],
    )
    emit(
        np.stack([np.full(gy.size, cx - hx), gy.ravel(), gz2.ravel()], axis=1),
        BOX_FACE_GAIN["-x"],
    )
    gy, gx2 = np.meshgrid(ys, xs, indexing="ij")
    emit(
        np.stack([gx2.ravel(), gy.ravel(), np.full(gy.size, cz + hz)], axis=1),
        BOX_FACE_GAIN["+z"],
    )
    emit(
        np.stack([gx2.ravel(), gy.ravel(), np.full(gy.size, cz - hz)], axis=1),
        BOX_FACE_GAIN["-z"],
    )
    return np.concatenate(points), np.concatenate(colors)


def world_boxes(seed: int) -> list[tuple]:
    rng = SplitMix64(seed)
    boxes = []
    for k in range(4):
        u_angle = rng.next_float()
        u_radius = rng.next_float()
        u_hx = rng.next_float()
        u_hz = rng.next_float()
        u_height = rng.next_float()
        u_hue = rng.next_float()
        angle = 2.0 * np.pi * (k + 0.25 + 0.5 * u_angle) / 4.0
        r = 0.85 + 0.25 * u_radius
        boxes.append(
            (
                r * np.sin(angle),
                r * np.cos(angle),
                0.18 + 0.12 * u_hx,
                0.18 + 0.12 * u_hz,
                1.3 + 1.5 * u_height,
                BOX_PALETTE[int(u_hue * 8) % 8],
            )
        )
    return boxes


def build_synthetic_world(seed: int = 42) -> SyntheticWorld:
    """Procedural enclosed room: checkerboard walls and four boxes."""
    wall_pts, wall_cols = _wall_points()
    boxes = world_boxes(seed)
    parts_p, parts_c, scales = [wall_pts], [wall_cols], [np.full(len(wall_pts), WALL_SCALE)]
    for box in boxes:
        p, c = _box_points(box)
        parts_p.append(p)
        parts_c.append(c)
        scales.append(np.full(len(p), BOX_SCALE))
    pos = np.concatenate(parts_p)
    col = np.concatenate(parts_c)
    sc = np.concatenate(scales)

    n = len(pos)
    rotations = np.zeros((n, 4), dtype=np.float32)
    rotations[:, 0] = 1.0
    scene = GaussianScene(
        centers=pos.astype(np.float32),
        colors=col.astype(np.float32),
        opacity_logits=np.full(n, WORLD_OPACITY_LOGIT, dtype=np.float32),
        log_scales=np.log(sc)[:, None].repeat(3, axis=1).astype(np.float32),
        rotations=rotations,
    )
    start = CameraPose(np.eye(3), np.array([0.0, 0.0, 1.2]))  # center (0, 0, -1.2)
    return SyntheticWorld(
        scene=scene, seed=seed, start_pose=start, pivot=np.zeros(3), boxes=tuple(boxes)
    )


# ---------------------------------------------------------------------------
# Oracle implementations


class OracleCompleter:
    """Ideal view completer: ignores the incomplete input and renders the
    ground-truth world along the trajectory."""

    def __init__(self, world: SyntheticWorld):
        self.world = world

    def complete(self, incomplete_frames, alphas, trajectory: Trajectory):
        K = trajectory.intrinsics
        return [
            render(self.world.scene, K, pose).color.astype(np.float32) for pose in trajectory
        ]


def oracle_completer(world: SyntheticWorld) -> OracleCompleter:
    return OracleCompleter(world)


class OracleStereo:
    """Ground-truth stereo: true rendered depths and true poses.

    Optional multiplicative scale corruption and Gaussian depth noise support
    robustness tests. Frames are matched to poses through ``pose_hints``;
    without hints every frame is assumed to sit at the anchor pose (the
    duplicated-input-image case during scene initialization).
    """

    def __init__(
        self,
        world: SyntheticWorld,
        intrinsics: CameraIntrinsics,
        anchor_pose: CameraPose | None = None,
        scale_corruption: float = 1.0,
        noise_sigma: float = 0.0,
        seed: int = 0,
    ):
        if scale_corruption <= 0:
            raise ParameterError("scale corruption must be positive")
        self.world = world
        self.intrinsics = intrinsics
        self.anchor_pose = anchor_pose if anchor_pose is not None else world.start_pose
        self.scale_corruption = scale_corruption
        self.noise_sigma = noise_sigma
        self._rng = substream(seed, "oracle-stereo-noise")

    def estimate(self, frames, pose_hints=None) -> StereoEstimate:
        poses = list(pose_hints) if pose_hints is not None else [self.anchor_pose] * len(frames)
        if len(poses) != len(frames):
            raise ParameterError(f"{len(frames)} frames but {len(poses)} pose hints")
        depths = []
        for pose in poses:
            true = render(self.world.scene, self.intrinsics, pose).depth
            vals = true.values * self.scale_corruption
            if self.noise_sigma > 0:
                vals = vals + self._rng.normal(0.0, self.noise_sigma, vals.shape)
                vals = np.maximum(vals, 0.0)
            depths.append(DepthMap(np.where(true.validity, vals, 0.0), true.validity))
        return StereoEstimate(depths=depths, poses=poses)


def oracle_stereo(world: SyntheticWorld, intrinsics: CameraIntrinsics, **kwargs) -> OracleStereo:
    return OracleStereo(world, intrinsics, **kwargs)


class IdentityRefiner:
    def refine(self, image: np.ndarray, t: float) -> np.ndarray:
        _check_refine_time(t)
        return image


class BlurRefiner:
    """Degenerate refiner stand-in: Gaussian blur with a normalized kernel."""

    def __init__(self, sigma: float):
        if sigma <= 0:
            raise ParameterError("sigma must be positive")
        self.sigma = sigma

    def refine(self, image: np.ndarray, t: float) -> np.ndarray:
        _check_refine_time(t)
        out = np.empty_like(image)
        for ch in range(image.shape[2]):
            out[:, :, ch] = gaussian_filter(image[:, :, ch], self.sigma, mode="reflect")
        return out


def _check_refine_time(t: float):
    if not (0.0 <= t <= 1.0):
        raise ParameterError(f"refinement time must be in [0, 1], got {t}")


def identity_refiner() -> IdentityRefiner:
    return IdentityRefiner()


def blur_refiner(sigma: float) -> BlurRefiner:
    return BlurRefiner(sigma)


# ---------------------------------------------------------------------------
# Wire protocol codecs (shared by the remote client and its tests)


def encode_image_png(image: np.ndarray) -> str:
    """8-bit RGB PNG, base64-encoded; input is a float image in [0, 1]."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(data, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def encode_alpha_png(alpha: np.ndarray) -> str:
    arr = np.clip(np.asarray(alpha, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(data, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image_png(payload: str, field_path: str = "frames") -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
        img = PILImage.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise ProtocolError(f"invalid base64 PNG payload: {exc}", field_path) from exc
    arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def trajectory_to_wire(trajectory: Trajectory) -> dict:
    K = trajectory.intrinsics
    return {
        "intrinsics": {
            "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
            "width": K.width, "height": K.height,
        },
        "poses": [
            {
                "rotation": [float(v) for v in pose.rotation.ravel()],
                "translation": [float(v) for v in pose.translation],
            }
            for pose in trajectory
        ],
    }


# ---------------------------------------------------------------------------
# Remote completer client

WIRE_FRAME_COUNT = 49


class RemoteCompleter:
    """HTTP client for the completion service (POST /v1/complete).

    Connection-level failures are retried up to three attempts with
    exponential backoff starting at one second; timeouts raise immediately;
    malformed responses raise ProtocolError naming the offending field.
    """

    MAX_ATTEMPTS = 3
    BACKOFF_START = 1.0

    def __init__(self, endpoint: str, timeout: float = 120.0, session=None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.session = session or requests.Session()

    def complete(self, incomplete_frames, alphas, trajectory: Trajectory):
        if len(trajectory) != WIRE_FRAME_COUNT:
            raise ParameterError(
                f"wire protocol carries exactly {WIRE_FRAME_COUNT} frames, "
                f"got a {len(trajectory)}-pose trajectory"
            )
        if len(incomplete_frames) != len(trajectory) or len(alphas) != len(trajectory):
            raise ParameterError("frames, alphas and trajectory lengths must agree")
        request_id = str(uuid.uuid4())
        body = {
            "trajectory": trajectory_to_wire(trajectory),
            "frames": [encode_image_png(f) for f in incomplete_frames],
            "alphas": [encode_alpha_png(a) for a in alphas],
            "request_id": request_id,
        }
        response = self._post(body)
        return self._decode(response, request_id, len(trajectory))

    def _post(self, body: dict):
        url = f"{self.endpoint}/v1/complete"
        delay = self.BACKOFF_START
        for attempt in range(1, self.MAX_ATTEMPTS + 1):
            try:
                return self.session.post(url, json=body, timeout=self.timeout)
            except requests.Timeout as exc:
                raise CompleterTimeoutError(f"completion request timed out: {exc}") from exc
            except requests.ConnectionError as exc:
                if attempt == self.MAX_ATTEMPTS:
                    raise TransportError(
                        f"connection failed after {attempt} attempts: {exc}"
                    ) from exc
                time.sleep(delay)
                delay *= 2.0

    def _decode(self, response, request_id: str, n_frames: int):
        if response.status_code != 200:
            raise ProtocolError(
                f"service returned HTTP {response.status_code}: {response.text[:500]}",
                field_path="status",
            )
        try:
            payload = response.json()
        except ValueError as exc:
            raise ProtocolError(f"response body is not JSON: {exc}", "body") from exc
        if not isinstance(payload, dict):
            raise ProtocolError("response body is not an object", "body")
        if payload.get("request_id") != request_id:
            raise ProtocolError("request_id mismatch", "request_id")
        frames = payload.get("frames")
        if not isinstance(frames, list) or len(frames) != n_frames:
            got = len(frames) if isinstance(frames, list) else type(frames).__name__
            raise ProtocolError(f"expected {n_frames} frames, got {got}", "frames")
        return [decode_image_png(f, f"frames[{i}]") for i, f in enumerate(frames)]


def remote_completer(endpoint: str, timeout: float = 120.0) -> RemoteCompleter:
    return RemoteCompleter(endpoint, timeout)
