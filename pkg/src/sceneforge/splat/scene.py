"""Gaussian scene parameters and point-cloud initialization.

Parameters are stored float32 in their unconstrained form (opacity logits,
log scales) so that scene files round-trip bitwise; all rendering math
upcasts to float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError, ShapeError
from ..geometry import PointCloud

INIT_SCALE = 3e-4
INIT_OPACITY = 0.8

# Rendering normalizes quaternions internally, so construction only rejects
# clearly broken values; the optimizer re-normalizes to 1e-6 after each step.
_QUAT_TOL = 1e-3


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


@dataclass(frozen=True)
class GaussianScene:
    """Arrays of per-Gaussian parameters; colors are direct RGB in [0, 1]."""

    centers: np.ndarray        # (N, 3) float32, world units
    colors: np.ndarray         # (N, 3) float32 in [0, 1]
    opacity_logits: np.ndarray  # (N,)  float32; opacity = sigmoid(logit)
    log_scales: np.ndarray     # (N, 3) float32; scale = exp(log_scale)
    rotations: np.ndarray      # (N, 4) float32 unit quaternions (w, x, y, z)

    def __post_init__(self):
        arrays = {}
        for name, width in [
            ("centers", 3),
            ("colors", 3),
            ("opacity_logits", None),
            ("log_scales", 3),
            ("rotations", 4),
        ]:
            a = np.asarray(getattr(self, name), dtype=np.float32)
            a = a.reshape(-1) if width is None else a.reshape(-1, width)
            arrays[name] = a
        n = len(arrays["centers"])
        for name, a in arrays.items():
            if len(a) != n:
                raise ShapeError(f"{name} has {len(a)} rows, expected {n}")
            if not np.all(np.isfinite(a)):
                raise ParameterError(f"{name} contains non-finite values")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if n:
            if arrays["colors"].min() < 0.0 or arrays["colors"].max() > 1.0:
                raise ParameterError("colors must lie in [0, 1]")
            norms = np.linalg.norm(arrays["rotations"].astype(np.float64), axis=1)
            if np.abs(norms - 1.0).max() > _QUAT_TOL:
                raise ParameterError("rotation quaternions must have unit norm")

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits.astype(np.float64)))

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales.astype(np.float64))

    @classmethod
    def empty(cls) -> "GaussianScene":
        return cls(
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4))
        )

    def replace(self, **arrays) -> "GaussianScene":
        """Functional update; rendering caches key on array identity."""
        fields = {
            "centers": self.centers,
            "colors": self.colors,
            "opacity_logits": self.opacity_logits,
            "log_scales": self.log_scales,
            "rotations": self.rotations,
        }
        fields.update(arrays)
        return GaussianScene(**fields)


def from_point_cloud(pc: PointCloud) -> GaussianScene:
    """One Gaussian per point, no downsampling.

    Scales start isotropic at 3e-4, opacity at 0.8, rotation at identity.
    """
    n = len(pc)
    if n == 0:
        return GaussianScene.empty()
    rotations = np.zeros((n, 4), dtype=np.float32)
    rotations[:, 0] = 1.0
    return GaussianScene(
        centers=pc.positions.astype(np.float32),
        colors=pc.colors.astype(np.float32),
        opacity_logits=np.full(n, _logit(INIT_OPACITY), dtype=np.float32),
        log_scales=np.full((n, 3), np.log(INIT_SCALE), dtype=np.float32),
        rotations=rotations,
    )


def concatenate(a: GaussianScene, b: GaussianScene) -> GaussianScene:
    return GaussianScene(
        centers=np.concatenate([a.centers, b.centers]),
        colors=np.concatenate([a.colors, b.colors]),
        opacity_logits=np.concatenate([a.opacity_logits, b.opacity_logits]),
        log_scales=np.concatenate([a.log_scales, b.log_scales]),
        rotations=np.concatenate([a.rotations, b.rotations]),
    )
