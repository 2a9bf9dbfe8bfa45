from .scene import GaussianScene, from_point_cloud
from .render import (
    ParamGradients,
    RenderCache,
    RenderOutput,
    render,
    render_backward,
    render_cached,
)

__all__ = [
    "GaussianScene",
    "from_point_cloud",
    "ParamGradients",
    "RenderCache",
    "RenderOutput",
    "render",
    "render_backward",
    "render_cached",
]
