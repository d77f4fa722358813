"""Intensity windows and their clamped-affine equivalent.

A window is given by its level (centre) and width in raw pixel units. The
same operation can be written as ``clamp(weight * x + bias, 0, ceiling)``,
which is what the trainable layer learns. All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


class WindowParameterError(ValueError):
    """Raised for invalid window parameters."""


class DegenerateWindowError(WindowParameterError):
    """Raised when an affine window has zero weight and no width can be recovered."""


@dataclass(frozen=True)
class WindowSpec:
    """Window as (level, width) in raw pixel units.

    ``inverted`` marks a window recovered from a negative affine weight; such a
    window has negative width and is only produced by :func:`from_affine`.
    """

    level: float
    width: float
    inverted: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.level) and math.isfinite(self.width)):
            raise WindowParameterError(f"non-finite window ({self.level}, {self.width})")
        if self.inverted:
            if self.width >= 0:
                raise WindowParameterError("an inverted window must have negative width")
        elif self.width <= 0:
            raise WindowParameterError(f"window width must be positive, got {self.width}")

    @property
    def lower(self) -> float:
        return self.level - self.width / 2.0

    @property
    def upper(self) -> float:
        return self.level + self.width / 2.0

    def as_tuple(self) -> Tuple[float, float]:
        return (self.level, self.width)


@dataclass(frozen=True)
class AffineWindow:
    """Clamped affine map ``min(max(weight * x + bias, 0), ceiling)``."""

    weight: float
    bias: float
    ceiling: float

    def __post_init__(self):
        if not (math.isfinite(self.weight) and math.isfinite(self.bias)):
            raise WindowParameterError("affine window parameters must be finite")
        if not (math.isfinite(self.ceiling) and self.ceiling > 0):
            raise WindowParameterError(f"ceiling must be positive, got {self.ceiling}")


def apply_window(px: ArrayLike, w: WindowSpec) -> ArrayLike:
    """Clamp ``px`` to the window's ``[lower, upper]`` interval."""
    if w.inverted:
        raise WindowParameterError("cannot apply an inverted window as a clamp")
    out = np.minimum(np.maximum(np.asarray(px, dtype=np.float64), w.lower), w.upper)
    return float(out) if out.ndim == 0 else out


def to_affine(w: WindowSpec) -> AffineWindow:
    """Clamped-affine parameters for a window.

    The ceiling is the window's upper limit, the weight ``ceiling / width``
    and the bias ``-weight * lower``.
    """
    if w.inverted:
        raise WindowParameterError("inverted windows have no clamped-affine form")
    ceiling = w.upper
    if ceiling <= 0:
        raise WindowParameterError(
            f"window ({w.level}, {w.width}) has upper limit {ceiling} <= 0; "
            "the clamp ceiling must be positive"
        )
    weight = ceiling / w.width
    bias = -weight * w.lower
    if not (math.isfinite(weight) and math.isfinite(bias)):
        raise WindowParameterError(f"window ({w.level}, {w.width}) gives non-finite affine parameters")
    return AffineWindow(weight=weight, bias=bias, ceiling=ceiling)


def from_affine(a: AffineWindow) -> WindowSpec:
    """Recover (level, width) from affine parameters.

    ``width = ceiling / weight`` and ``level = -bias / weight + width / 2``.
    A negative weight yields an inverted window (negative width).
    """
    if a.weight == 0:
        raise DegenerateWindowError("weight is zero; window width is unbounded")
    width = a.ceiling / a.weight
    level = -a.bias / a.weight + width / 2.0
    return WindowSpec(level=level, width=width, inverted=width < 0)


def apply_affine(px: ArrayLike, a: AffineWindow) -> ArrayLike:
    """Evaluate ``min(max(weight * px + bias, 0), ceiling)``."""
    z = a.weight * np.asarray(px, dtype=np.float64) + a.bias
    out = np.minimum(np.maximum(z, 0.0), a.ceiling)
    return float(out) if out.ndim == 0 else out


def affine_grad(px: ArrayLike, a: AffineWindow):
    """Derivatives of :func:`apply_affine` w.r.t. weight, bias and pixel.

    Inside the open linear region this is ``(px, 1, weight)``. Saturated
    pixels, including those exactly on a kink, get zero.

    Returns:
        Tuple ``(d_weight, d_bias, d_px)``; scalars for scalar input, arrays
        otherwise.
    """
    x = np.asarray(px, dtype=np.float64)
    z = a.weight * x + a.bias
    live = (z > 0.0) & (z < a.ceiling)
    d_weight = np.where(live, x, 0.0)
    d_bias = live.astype(np.float64)
    d_px = np.where(live, a.weight, 0.0)
    if x.ndim == 0:
        return float(d_weight), float(d_bias), float(d_px)
    return d_weight, d_bias, d_px


def window_to_affine_rescale(px: ArrayLike, w: WindowSpec) -> ArrayLike:
    """The windowed value mapped through ``y -> (ceiling / width) * (y - lower)``.

    This equals ``apply_affine(px, to_affine(w))`` for every pixel: the
    clamped-affine form is the window followed by a positive affine rescale,
    and coincides with the plain window only when ``ceiling == width``.
    """
    return (w.upper / w.width) * (np.asarray(apply_window(px, w)) - w.lower)
