"""Learnable intensity windowing for high-bit-depth grayscale classification."""

from .windowing import (
    AffineWindow,
    DegenerateWindowError,
    WindowParameterError,
    WindowSpec,
    apply_affine,
    apply_window,
    from_affine,
    to_affine,
)

__version__ = "0.1.0"

__all__ = [
    "AffineWindow",
    "DegenerateWindowError",
    "WindowParameterError",
    "WindowSpec",
    "apply_affine",
    "apply_window",
    "from_affine",
    "to_affine",
]
