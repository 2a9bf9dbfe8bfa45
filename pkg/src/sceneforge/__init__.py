"""Progressive single-image-to-3D scene expansion with Gaussian splatting."""

__version__ = "0.1.0"
