"""Align estimated keyframe depths to the scene's rendered depths.

The alignment pipeline is: global median scaling against the reference view,
then a validity-aware guided filter of the scaled estimate using the rendered
depth as guide over the known region, then a splice (known pixels keep the
rendered depth, unknown pixels take the filtered estimate).

Window statistics use reflect-padded box means, which makes the filter
exactly mean-preserving on fully valid inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateDepthError, EmptyInputError, ParameterError, ShapeError
from .geometry import BinaryMask, DepthMap


@dataclass(frozen=True)
class AlignmentParams:
    guided_filter_radius: int = 9
    guided_filter_eps: float = 1e-4
    dilation_iters: int = 25

    def __post_init__(self):
        if self.guided_filter_radius < 1:
            raise ParameterError(f"radius must be >= 1, got {self.guided_filter_radius}")
        if self.guided_filter_eps < 0:
            raise ParameterError(f"eps must be >= 0, got {self.guided_filter_eps}")
        if self.dilation_iters < 0:
            raise ParameterError(f"dilation_iters must be >= 0, got {self.dilation_iters}")


def median_scale(estimated_ref: DepthMap, rendered_ref: DepthMap) -> float:
    """Ratio Median(rendered) / Median(estimated) over jointly valid pixels."""
    if estimated_ref.shape != rendered_ref.shape:
        raise ShapeError(f"shape mismatch {estimated_ref.shape} vs {rendered_ref.shape}")
    joint = estimated_ref.validity & rendered_ref.validity
    if not joint.any():
        raise EmptyInputError("no jointly valid pixels")
    med_est = float(np.median(estimated_ref.values[joint]))
    med_ren = float(np.median(rendered_ref.values[joint]))
    if med_est <= 0.0:
        raise DegenerateDepthError(f"estimated depth median is {med_est}")
    return med_ren / med_est


def _box_mean(x: np.ndarray, weights: np.ndarray, radius: int):
    """Weighted box mean with reflect boundary; returns (mean, weight_mass)."""
    size = 2 * radius + 1
    num = ndimage.uniform_filter(x * weights, size=size, mode="reflect")
    den = ndimage.uniform_filter(weights, size=size, mode="reflect")
    ok = den > 0.25 / (size * size)
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
    return mean, ok


def _as_depth(x) -> DepthMap:
    if isinstance(x, DepthMap):
        return x
    return DepthMap.full(np.asarray(x, dtype=np.float64))


def guided_filter(input_map, guide, radius: int, eps: float) -> DepthMap:
    """Edge-preserving smoothing of ``input_map`` steered by ``guide``.

    Per window: a = cov(guide, input) / (var(guide) + eps),
    b = mean(input) - a * mean(guide); output q = mean(a) * guide + mean(b).
    Invalid pixels are excluded from all window statistics; a pixel whose own
    window contains no valid samples comes back invalid.
    """
    if radius < 1:
        raise ParameterError(f"radius must be >= 1, got {radius}")
    if eps < 0:
        raise ParameterError(f"eps must be >= 0, got {eps}")
    p = _as_depth(input_map)
    g = _as_depth(guide)
    if p.shape != g.shape:
        raise ShapeError(f"shape mismatch {p.shape} vs {g.shape}")

    joint = (p.validity & g.validity).astype(np.float64)
    gv, pv = g.values, p.values
    mean_g, ok = _box_mean(gv, joint, radius)
    mean_p, _ = _box_mean(pv, joint, radius)
    corr_gg, _ = _box_mean(gv * gv, joint, radius)
    corr_gp, _ = _box_mean(gv * pv, joint, radius)
    var_g = np.maximum(corr_gg - mean_g * mean_g, 0.0)
    cov_gp = corr_gp - mean_g * mean_p

    denom = var_g + eps
    a = np.where(denom > 0, cov_gp / np.where(denom > 0, denom, 1.0), 0.0)
    b = mean_p - a * mean_g

    w = ok.astype(np.float64)
    mean_a, _ = _box_mean(a, w, radius)
    mean_b, _ = _box_mean(b, w, radius)

    out_valid = ok & g.validity
    q = np.where(out_valid, mean_a * gv + mean_b, 0.0)
    return DepthMap(np.maximum(q, 0.0), out_valid)


def depth_align(
    estimated: DepthMap,
    rendered: DepthMap,
    mask: BinaryMask,
    scale: float,
    params: AlignmentParams,
) -> DepthMap:
    """Blend a scaled depth estimate into the rendered scene depth.

    ``mask`` follows the new-content convention: 1 marks unknown pixels to be
    filled from the estimate, 0 marks pixels already known from the scene.
    Depths are normalized to unit median before filtering so that
    ``guided_filter_eps`` is scale-free and the operation is homogeneous.
    """
    if estimated.shape != rendered.shape or estimated.shape != mask.shape:
        raise ShapeError(
            f"shape mismatch: estimated {estimated.shape}, rendered {rendered.shape}, "
            f"mask {mask.shape}"
        )
    if scale <= 0:
        raise ParameterError(f"scale must be positive, got {scale}")

    scaled = scale * estimated.values
    known = (~mask.values) & rendered.validity
    guide_vals = np.where(known, rendered.values, scaled)
    guide_valid = known | estimated.validity
    if not guide_valid.any():
        raise EmptyInputError("neither rendered nor estimated depth has valid pixels")

    norm = float(np.median(guide_vals[guide_valid]))
    if norm <= 0.0:
        norm = 1.0

    filtered = guided_filter(
        DepthMap(scaled / norm, estimated.validity),
        DepthMap(guide_vals / norm, guide_valid),
        params.guided_filter_radius,
        params.guided_filter_eps,
    )
    out_vals = np.where(known, rendered.values, filtered.values * norm)
    out_valid = np.where(known, True, filtered.validity)
    return DepthMap(out_vals, out_valid)


def dilate(mask: BinaryMask, iters: int) -> BinaryMask:
    """Apply ``iters`` rounds of 3x3 eight-connected morphological dilation."""
    if iters < 0:
        raise ParameterError(f"iters must be >= 0, got {iters}")
    if iters == 0 or not mask.values.any():
        return BinaryMask(mask.values.copy())
    out = ndimage.binary_dilation(
        mask.values, structure=np.ones((3, 3), dtype=bool), iterations=iters
    )
    return BinaryMask(out)


def mask_from_alpha(alpha: np.ndarray, threshold: float = 0.5) -> BinaryMask:
    """Mark pixels whose rendered coverage falls below ``threshold``.

    True means "scene content missing here": these pixels contribute new
    points during integration.
    """
    if not (0.0 < threshold < 1.0):
        raise ParameterError(f"threshold must be in (0, 1), got {threshold}")
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2:
        raise ShapeError(f"alpha must be 2-D, got shape {alpha.shape}")
    return BinaryMask(alpha < threshold)
