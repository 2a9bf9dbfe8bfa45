"""Progressive scene expansion: plan a camera path, render what the scene
already knows, hand the incomplete frames to a view completer, lift the newly
revealed content to 3-D, and re-optimize against the completed video.

Also hosts the training-pair harness that renders (incomplete, ground truth)
video pairs from a known scene.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .depthalign import AlignmentParams, depth_align, dilate, mask_from_alpha, median_scale
from .errors import ParameterError, StageError
from .geometry import BinaryMask, CameraIntrinsics, CameraPose, DepthMap, backproject
from .interfaces import DenseStereo, ImageRefiner, ViewCompleter
from .optimize import LossWeights, OptimSettings, fit_scene
from .rng import substream
from .splat import GaussianScene, from_point_cloud, render
from .splat.scene import concatenate
from .trajectory import Trajectory, collision_bound, interpolate, plan_orbit, plan_zoom_out

PIPELINE_FRAMES = 49
# Pixels above this rendered-alpha anchor the depth scale. Point-cloud
# initialization at opacity 0.8 tops out around 0.94 accumulated alpha, so
# the gate sits below that; fully optimized scenes clear it by a wide margin.
REFERENCE_ALPHA_MIN = 0.90


@dataclass(frozen=True)
class PlannerSpec:
    """One entry of the trajectory schedule.

    kind 'zoom_out': travel backward along the viewing axis; travel=None
    derives the distance from the scene's minimum rendered depth times
    ``safety``. kind 'orbit': revolve about the pivot (None = centroid of the
    initial point cloud). kind 'interpolate': go to an explicit end pose.
    """

    kind: str
    frames: int = PIPELINE_FRAMES
    travel: float | None = None
    safety: float = 0.8
    angle: float = 180.0
    pivot: tuple | None = None
    end_pose: CameraPose | None = None
    position_mode: str = "linear"

    def __post_init__(self):
        if self.kind not in ("zoom_out", "orbit", "interpolate"):
            raise ParameterError(f"unknown planner kind {self.kind!r}")
        if self.frames < 2:
            raise ParameterError("planner needs at least 2 frames")


@dataclass(frozen=True)
class ExpansionConfig:
    intrinsics: CameraIntrinsics
    schedule: tuple = ()
    keyframe_count: int = 6
    refine_enabled: bool = False
    refine_t: float = 0.6
    refine_views: int = 5
    refine_iters: int = 1000
    integration_iters: int = 1000
    init_fit_iters: int = 150
    optim: OptimSettings = field(default_factory=OptimSettings)
    loss: LossWeights = field(default_factory=LossWeights)
    alignment: AlignmentParams = field(default_factory=AlignmentParams)
    alpha_threshold: float = 0.5
    reference_alpha_min: float = REFERENCE_ALPHA_MIN
    background: tuple = (0.0, 0.0, 0.0)
    densify: bool = True
    seed: int = 42

    def __post_init__(self):
        if self.keyframe_count < 1:
            raise ParameterError("keyframe_count must be >= 1")
        if not (0.0 < self.refine_t < 1.0):
            raise ParameterError("refine_t must lie in (0, 1)")


@dataclass
class StageRecord:
    trajectory_id: str
    frames_rendered: int = 0
    points_added: int = 0
    gaussians_before: int = 0
    gaussians_after: int = 0
    final_loss: float = float("nan")
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ExpansionReport:
    stages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"stages": [s.to_dict() for s in self.stages]}


def init_scene(
    image: np.ndarray, stereo: DenseStereo, intrinsics: CameraIntrinsics
) -> tuple[GaussianScene, CameraPose]:
    """Build the initial scene from a single image.

    Dense stereo needs an image pair, so the input is duplicated; the
    estimated depth back-projects to one point per valid pixel and the
    reference pose is the stereo's pose for the input view.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if (intrinsics.height, intrinsics.width) != (h, w):
        raise ParameterError(
            f"image is {w}x{h} but intrinsics expect "
            f"{intrinsics.width}x{intrinsics.height}"
        )
    estimate = stereo.estimate([image, image])
    depth = estimate.depths[0]
    pose = estimate.poses[0]
    cloud = backproject(depth, BinaryMask(depth.validity), image, intrinsics, pose)
    return from_point_cloud(cloud), pose


def select_keyframes(n_frames: int, m: int) -> list[int]:
    """Uniformly spaced keyframe indices; the last frame is always included.

    Index k of m is round(k * (n_frames - 1) / m); the reference view is
    handled separately by the caller and is not part of this list.
    """
    if not (1 <= m <= n_frames):
        raise ParameterError(f"need 1 <= m <= {n_frames}, got {m}")
    indices = [round(k * (n_frames - 1) / m) for k in range(1, m + 1)]
    if len(set(indices)) != len(indices):
        raise ParameterError(f"keyframe count {m} too dense for {n_frames} frames")
    return indices


def _render_incomplete(scene, trajectory, background):
    frames, alphas = [], []
    for pose in trajectory:
        out = render(scene, trajectory.intrinsics, pose, background)
        frames.append(out.color.astype(np.float32))
        alphas.append(out.alpha.astype(np.float32))
    return frames, alphas


def integrate(
    scene: GaussianScene,
    completed_frames,
    trajectory: Trajectory,
    stereo: DenseStereo,
    reference_pose: CameraPose,
    reference_image: np.ndarray,
    config: ExpansionConfig,
    *,
    rng: np.random.Generator,
    record: StageRecord | None = None,
) -> GaussianScene:
    """Add the content revealed by a completed video to the scene.

    Steps: stereo on {reference, keyframes}; render scene depth and coverage
    per keyframe; recover the global depth scale from the reference view;
    align each keyframe depth; back-project the uncovered pixels; append as
    Gaussians; optimize against all completed frames.
    """
    if len(completed_frames) != len(trajectory):
        raise ParameterError(
            f"{len(completed_frames)} frames for a {len(trajectory)}-pose trajectory"
        )
    K = trajectory.intrinsics
    record = record if record is not None else StageRecord(trajectory_id="integrate")

    kf = select_keyframes(len(trajectory), config.keyframe_count)
    kf_images = [completed_frames[i] for i in kf]
    kf_poses = [trajectory[i] for i in kf]
    estimate = stereo.estimate(
        [reference_image] + kf_images, pose_hints=[reference_pose] + kf_poses
    )

    ref_render = render(scene, K, reference_pose, config.background)
    solid = ref_render.alpha >= config.reference_alpha_min
    if not solid.any():
        raise StageError(
            record.trajectory_id,
            f"reference view has no pixels with alpha >= {config.reference_alpha_min}; "
            "cannot anchor the depth scale",
        )
    rendered_ref = DepthMap(
        np.where(solid, ref_render.depth.values, 0.0), solid & ref_render.depth.validity
    )
    est_ref = estimate.depths[0]
    est_ref_solid = DepthMap(np.where(solid, est_ref.values, 0.0), solid & est_ref.validity)
    scale = median_scale(est_ref_solid, rendered_ref)

    new_parts = []
    for i, frame_idx in enumerate(kf):
        pose = kf_poses[i]
        out = render(scene, K, pose, config.background)
        unknown = mask_from_alpha(out.alpha, config.alpha_threshold)
        known_grown = dilate(BinaryMask(~unknown.values), config.alignment.dilation_iters)
        mask = BinaryMask(~known_grown.values)

        aligned = depth_align(
            estimate.depths[1 + i], out.depth, mask, scale, config.alignment
        )
        usable = BinaryMask(mask.values & aligned.validity)
        if usable.popcount() == 0:
            continue
        cloud = backproject(aligned, usable, completed_frames[frame_idx], K, pose)
        record.points_added += len(cloud)
        new_parts.append(from_point_cloud(cloud))

    for part in new_parts:
        scene = concatenate(scene, part)

    views = [(K, pose) for pose in trajectory]
    targets = [np.asarray(f, dtype=np.float64) for f in completed_frames]
    scene, fit = fit_scene(
        scene, views, targets, config.loss, config.optim, config.integration_iters,
        rng=rng, densify=config.densify, background=config.background,
    )
    record.final_loss = fit.final_loss
    return scene


def refine(
    scene: GaussianScene,
    refiner: ImageRefiner,
    config: ExpansionConfig,
    anchor_pose: CameraPose,
    pivot: np.ndarray,
    *,
    rng: np.random.Generator,
) -> GaussianScene:
    """Re-optimize against refiner-enhanced renders of fixed panoramic views."""
    if not config.refine_enabled:
        return scene
    K = config.intrinsics
    ring = plan_orbit(anchor_pose, pivot, 360.0, config.refine_views + 1, K)
    poses = list(ring)[: config.refine_views]
    refined = []
    for pose in poses:
        out = render(scene, K, pose, config.background)
        refined.append(np.asarray(refiner.refine(out.color, config.refine_t), dtype=np.float64))
    views = [(K, pose) for pose in poses]
    scene, _ = fit_scene(
        scene, views, refined, config.loss, config.optim, config.refine_iters,
        rng=rng, densify=config.densify, background=config.background,
    )
    return scene


def _plan_stage(spec: PlannerSpec, scene, current_pose, pivot, config) -> Trajectory:
    K = config.intrinsics
    if spec.kind == "zoom_out":
        travel = spec.travel
        if travel is None:
            depth = render(scene, K, current_pose, config.background).depth
            travel = collision_bound(depth, spec.safety)
        return plan_zoom_out(current_pose, travel, spec.frames, K)
    if spec.kind == "orbit":
        p = np.asarray(spec.pivot, dtype=np.float64) if spec.pivot is not None else pivot
        return plan_orbit(current_pose, p, spec.angle, spec.frames, K)
    if spec.end_pose is None:
        raise ParameterError("interpolate planner needs an end pose")
    return interpolate(current_pose, spec.end_pose, spec.frames, K, spec.position_mode)


def run_pipeline(
    image: np.ndarray,
    config: ExpansionConfig,
    completer: ViewCompleter,
    stereo: DenseStereo,
    refiner: ImageRefiner | None = None,
) -> tuple[GaussianScene, ExpansionReport]:
    """Full progressive expansion from a single image.

    Zoom-out stages advance the anchor pose; orbit stages explore and return
    to it, which is what lets a left orbit be followed by a right orbit from
    the same hub. Stage errors abort with the report collected so far
    attached to the raised StageError.
    """
    report = ExpansionReport()
    scene, ref_pose = init_scene(image, stereo, config.intrinsics)
    pivot = scene.centers.astype(np.float64).mean(axis=0) if len(scene) else np.zeros(3)
    current = ref_pose

    # The reference view anchors every stage's depth scale, so bring it to
    # full coverage before the first expansion (no densification: the
    # Gaussian count stays one per input pixel).
    if config.init_fit_iters > 0 and len(scene) and len(config.schedule):
        scene, _ = fit_scene(
            scene,
            [(config.intrinsics, ref_pose)],
            [np.asarray(image, dtype=np.float64)],
            config.loss, config.optim, config.init_fit_iters,
            densify=False, background=config.background,
        )

    for stage_idx, spec in enumerate(config.schedule):
        stage_id = f"stage{stage_idx}-{spec.kind}"
        record = StageRecord(trajectory_id=stage_id, gaussians_before=len(scene))
        start = time.perf_counter()
        try:
            traj = _plan_stage(spec, scene, current, pivot, config)
            frames, alphas = _render_incomplete(scene, traj, config.background)
            record.frames_rendered = len(frames)
            completed = completer.complete(frames, alphas, traj)
            rng = substream(config.seed, f"{stage_id}-densify")
            scene = integrate(
                scene, completed, traj, stereo, ref_pose, image, config,
                rng=rng, record=record,
            )
        except StageError:
            raise
        except Exception as exc:
            record.wall_time = time.perf_counter() - start
            report.stages.append(record)
            raise StageError(stage_id, str(exc), report) from exc
        record.gaussians_after = len(scene)
        record.wall_time = time.perf_counter() - start
        report.stages.append(record)
        if spec.kind == "zoom_out":
            current = traj[-1]

    if config.refine_enabled and refiner is not None:
        scene = refine(
            scene, refiner, config, current, pivot,
            rng=substream(config.seed, "refine"),
        )
    return scene, report


@dataclass(frozen=True)
class TrainingPair:
    incomplete: list
    ground_truth: list
    incomplete_alphas: list


def make_training_pair(
    world_scene: GaussianScene,
    trajectory: Trajectory,
    start_frame: int,
    background=(0.0, 0.0, 0.0),
) -> TrainingPair:
    """Render an (incomplete, ground truth) video pair from a known scene.

    The start frame's rendered depth back-projects to a single-view point
    cloud; the incomplete video is what that partial scene can show along
    the trajectory, the ground truth is the full scene's rendering.
    """
    if not (0 <= start_frame < len(trajectory)):
        raise ParameterError(
            f"start frame {start_frame} out of range for {len(trajectory)} frames"
        )
    K = trajectory.intrinsics
    start_pose = trajectory[start_frame]
    out = render(world_scene, K, start_pose, background)
    cloud = backproject(
        out.depth, BinaryMask(out.depth.validity), out.color, K, start_pose
    )
    partial = from_point_cloud(cloud)

    incomplete, alphas = _render_incomplete(partial, trajectory, background)
    ground_truth = [
        render(world_scene, K, pose, background).color.astype(np.float32)
        for pose in trajectory
    ]
    return TrainingPair(
        incomplete=incomplete, ground_truth=ground_truth, incomplete_alphas=alphas
    )
