"""Image fidelity and camera trajectory accuracy metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDepthError, ShapeError
from .geometry import CameraPose, invert, relative
from .optimize import ssim_value

PSNR_CAP = 99.0


@dataclass(frozen=True)
class MetricReport:
    psnr_mean: float
    ssim_mean: float
    per_frame: list
    r_err: float | None = None
    t_err: float | None = None

    def to_dict(self) -> dict:
        return {
            "psnr_mean": self.psnr_mean,
            "ssim_mean": self.ssim_mean,
            "per_frame": self.per_frame,
            "r_err": self.r_err,
            "t_err": self.t_err,
        }


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images, capped at 99."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def ssim(pred: np.ndarray, target: np.ndarray) -> float:
    return ssim_value(pred, target)


def image_report(preds, targets) -> MetricReport:
    per_frame = [
        {"psnr": psnr(p, t), "ssim": ssim(p, t)} for p, t in zip(preds, targets)
    ]
    return MetricReport(
        psnr_mean=float(np.mean([f["psnr"] for f in per_frame])),
        ssim_mean=float(np.mean([f["ssim"] for f in per_frame])),
        per_frame=per_frame,
    )


def _relative_to_first(poses: list[CameraPose]) -> list[CameraPose]:
    first = poses[0]
    return [relative(first, p) for p in poses]


def camera_error(pred_poses, gt_poses) -> tuple[float, float]:
    """Trajectory accuracy after first-frame alignment.

    r_err: mean geodesic rotation angle (radians) between relative rotations.
    t_err: mean difference of relative translations, each trajectory
    normalized by the norm of its furthest-frame translation, which makes the
    metric invariant to uniform scaling.
    """
    pred_poses = list(pred_poses)
    gt_poses = list(gt_poses)
    if len(pred_poses) != len(gt_poses):
        raise ShapeError(f"{len(pred_poses)} predicted poses vs {len(gt_poses)} ground truth")
    if len(pred_poses) < 2:
        raise ShapeError("need at least two poses")

    # Frame 0 is the alignment anchor (identically zero for both), so the
    # means run over the remaining frames.
    rel_pred = _relative_to_first(pred_poses)[1:]
    rel_gt = _relative_to_first(gt_poses)[1:]

    angles = []
    for a, b in zip(rel_pred, rel_gt):
        # Geodesic angle acos((trace(Ra^T Rb) - 1) / 2), evaluated through
        # the Frobenius form 2 asin(|Ra - Rb|_F / (2 sqrt 2)) which is exact
        # at zero and stable for small angles.
        fro = np.linalg.norm(a.rotation - b.rotation)
        angles.append(float(2.0 * np.arcsin(min(fro / (2.0 * np.sqrt(2.0)), 1.0))))
    r_err = float(np.mean(angles))

    t_pred = np.stack([p.translation for p in rel_pred])
    t_gt = np.stack([p.translation for p in rel_gt])
    norm_pred = float(np.linalg.norm(t_pred, axis=1).max())
    norm_gt = float(np.linalg.norm(t_gt, axis=1).max())
    if norm_pred == 0.0 or norm_gt == 0.0:
        raise DegenerateDepthError("static trajectory: translation normalizer is zero")
    t_err = float(np.linalg.norm(t_pred / norm_pred - t_gt / norm_gt, axis=1).mean())
    return r_err, t_err


def full_report(preds, targets, pred_poses=None, gt_poses=None) -> MetricReport:
    report = image_report(preds, targets)
    if pred_poses is not None and gt_poses is not None:
        r_err, t_err = camera_error(pred_poses, gt_poses)
        report = MetricReport(
            psnr_mean=report.psnr_mean,
            ssim_mean=report.ssim_mean,
            per_frame=report.per_frame,
            r_err=r_err,
            t_err=t_err,
        )
    return report
