"""Array kernels for the backbone: 3x3 convolution, ReLU and 2x2 pooling.

Every forward function returns its output plus whatever the matching
backward function needs. Shapes follow NCHW.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x: np.ndarray) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return sliding_window_view(xp, (3, 3), axis=(2, 3))  # (B, C, H, W, 3, 3)


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Stride-1, zero-padding-1 cross-correlation. ``w`` is (out, in, 3, 3)."""
    win = _windows(x)
    out = np.einsum("bchwij,ocij->bohw", win, w, optimize=True)
    out += b[None, :, None, None]
    return out, x


def conv3x3_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray, need_dx: bool = True):
    win = _windows(x)
    dw = np.einsum("bchwij,bohw->ocij", win, dout, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        # full correlation with the spatially flipped kernel
        dx = np.einsum("bohwij,ocij->bchw", _windows(dout), w[:, :, ::-1, ::-1], optimize=True)
    return dx, dw, db


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def avgpool2_forward(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"2x2 pooling needs even spatial size, got {h}x{w}")
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avgpool2_backward(dout: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) * 0.25

