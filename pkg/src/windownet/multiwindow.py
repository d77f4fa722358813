"""Trainable multi-window front-end.

Pipeline per pixel: N clamped affine windows, each rescaled by
``255 / ceiling``, mixed into three channels by a 1x1 convolution, then
normalized with the ImageNet statistics. Window weights and biases and the
mixer are trainable; ceilings stay fixed at their initial values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .imagepipe import ImageTensor, NormalizationSpec
from .windowing import AffineWindow, DegenerateWindowError, WindowSpec, from_affine, to_affine

INIT_WINDOW_PAIRS = (
    (100, 3000),
    (1250, 1000),
    (1500, 3000),
    (1750, 2000),
    (1750, 3000),
    (2000, 2000),
    (2250, 2000),
    (2250, 3000),
    (2500, 2000),
    (2500, 3000),
    (2750, 3000),
    (3250, 1000),
    (750, 3000),
    (2048, 4096),
)

# clamp-free channels are rescaled as if they spanned the full 12-bit range
PLAIN_CHANNEL_CEILING = 4095.0


def default_init_windows() -> List[WindowSpec]:
    """The fourteen initial windows; the last is the full 12-bit range."""
    return [WindowSpec(float(level), float(width)) for level, width in INIT_WINDOW_PAIRS]


@dataclass
class LayerGradients:
    d_weight: np.ndarray
    d_bias: np.ndarray
    d_mixer: np.ndarray
    d_mixer_bias: np.ndarray

    def as_params(self) -> Dict[str, np.ndarray]:
        return {
            "win_weight": self.d_weight,
            "win_bias": self.d_bias,
            "win_mixer": self.d_mixer,
            "win_mixer_bias": self.d_mixer_bias,
        }


class MultiWindowLayer:
    """N parallel windows followed by an N->3 mixer.

    ``params`` holds the trainable arrays (``win_weight``, ``win_bias``,
    ``win_mixer``, ``win_mixer_bias``); ``ceiling`` is a separate, fixed array.
    With ``clamp=False`` the windows degenerate to plain affine channels.
    """

    def __init__(
        self,
        weight,
        bias,
        ceiling,
        mixer,
        mixer_bias,
        clamp: bool = True,
        norm: NormalizationSpec = NormalizationSpec(),
    ):
        weight = np.array(weight, dtype=np.float64).ravel()
        n = weight.size
        if n < 1:
            raise ValueError("a multi-window layer needs at least one window")
        self.params = {
            "win_weight": weight,
            "win_bias": np.array(bias, dtype=np.float64).ravel(),
            "win_mixer": np.array(mixer, dtype=np.float64),
            "win_mixer_bias": np.array(mixer_bias, dtype=np.float64).ravel(),
        }
        self.ceiling = np.array(ceiling, dtype=np.float64).ravel()
        self.clamp = bool(clamp)
        self.norm = norm
        if self.params["win_bias"].shape != (n,) or self.ceiling.shape != (n,):
            raise ValueError("weight, bias and ceiling must all have one entry per window")
        if self.params["win_mixer"].shape != (3, n) or self.params["win_mixer_bias"].shape != (3,):
            raise ValueError(f"mixer must be (3, {n}) with a 3-vector bias")
        if np.any(self.ceiling <= 0):
            raise ValueError("ceilings must be positive")

    @property
    def n_windows(self) -> int:
        return self.ceiling.size

    @classmethod
    def from_windows(cls, windows: Sequence[WindowSpec], seed: int = 0, norm: NormalizationSpec = NormalizationSpec()):
        """Windows set from ``windows``; mixer drawn with the fan-in uniform scheme."""
        affine = [to_affine(w) for w in windows]
        rng = np.random.default_rng(seed)
        n = len(affine)
        mixer, mixer_bias = _fan_in_mixer(rng, n)
        return cls(
            [a.weight for a in affine],
            [a.bias for a in affine],
            [a.ceiling for a in affine],
            mixer,
            mixer_bias,
            clamp=True,
            norm=norm,
        )

    def affine_windows(self) -> List[AffineWindow]:
        p = self.params
        return [AffineWindow(float(w), float(b), float(c)) for w, b, c in zip(p["win_weight"], p["win_bias"], self.ceiling)]

    def copy(self) -> "MultiWindowLayer":
        p = self.params
        return MultiWindowLayer(
            p["win_weight"].copy(),
            p["win_bias"].copy(),
            self.ceiling.copy(),
            p["win_mixer"].copy(),
            p["win_mixer_bias"].copy(),
            self.clamp,
            self.norm,
        )

    def forward(self, img):
        """Map raw pixels to normalized three-channel backbone input.

        ``img`` is an :class:`ImageTensor` of shape (1, H, W) or an array of
        shape (B, 1, H, W). The returned cache feeds :meth:`backward`.
        """
        single = isinstance(img, ImageTensor)
        x = img.data[None] if single else np.asarray(img, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"multi-window layer expects one input channel, got shape {x.shape}")
        p = self.params
        w = p["win_weight"][None, :, None, None]
        b = p["win_bias"][None, :, None, None]
        ceil = self.ceiling[None, :, None, None]
        pre = x * w + b
        win = np.minimum(np.maximum(pre, 0.0), ceil) if self.clamp else pre
        scaled = win * (255.0 / ceil)
        mixed = np.einsum("kn,bnhw->bkhw", p["win_mixer"], scaled, optimize=True)
        mixed += p["win_mixer_bias"][None, :, None, None]
        mean, std = self.norm.arrays()
        out = (mixed / 255.0 - mean[None]) / std[None]
        cache = (x, pre, scaled)
        if single:
            return ImageTensor(out[0], img.bit_depth, dict(img.meta)), cache
        return out, cache

    def backward(self, cache, d_out, need_dx: bool = True):
        """Reverse-mode derivatives of :meth:`forward`.

        Saturated window outputs, including exact kinks, pass no gradient.

        Returns:
            ``(LayerGradients, d_img)`` with ``d_img`` shaped like the input
            batch, or ``None`` when ``need_dx`` is false.
        """
        x, pre, scaled = cache
        d = np.asarray(d_out, dtype=np.float64)
        if d.ndim == 3:
            d = d[None]
        if d.shape != (x.shape[0], 3) + x.shape[2:]:
            raise ValueError(f"d_out shape {d.shape} does not match the cached forward pass {x.shape}")
        if pre.shape[1] != self.n_windows:
            raise ValueError("cache was produced by a layer with a different number of windows")
        p = self.params
        _, std = self.norm.arrays()
        d_mixed = d / (255.0 * std[None])
        d_mixer = np.einsum("bkhw,bnhw->kn", d_mixed, scaled, optimize=True)
        d_mixer_bias = d_mixed.sum(axis=(0, 2, 3))
        d_scaled = np.einsum("kn,bkhw->bnhw", p["win_mixer"], d_mixed, optimize=True)
        ceil = self.ceiling[None, :, None, None]
        d_pre = d_scaled * (255.0 / ceil)
        if self.clamp:
            d_pre = d_pre * ((pre > 0.0) & (pre < ceil))
        d_weight = np.einsum("bnhw,bchw->n", d_pre, x, optimize=True)
        d_bias = d_pre.sum(axis=(0, 2, 3))
        grads = LayerGradients(d_weight, d_bias, d_mixer, d_mixer_bias)
        d_x = None
        if need_dx:
            d_x = np.einsum("bnhw,n->bhw", d_pre, p["win_weight"])[:, None]
        return grads, d_x


def forward(layer: MultiWindowLayer, img, norm: Optional[NormalizationSpec] = None):
    if norm is not None and norm != layer.norm:
        layer = MultiWindowLayer(
            layer.params["win_weight"], layer.params["win_bias"], layer.ceiling,
            layer.params["win_mixer"], layer.params["win_mixer_bias"], layer.clamp, norm,
        )
    return layer.forward(img)


def backward(layer: MultiWindowLayer, cache, d_out):
    return layer.backward(cache, d_out)


def recover_windows(layer: MultiWindowLayer) -> List[WindowSpec]:
    """Level and width of every channel, in channel order."""
    out = []
    for i, a in enumerate(layer.affine_windows()):
        try:
            out.append(from_affine(a))
        except DegenerateWindowError:
            raise DegenerateWindowError(f"window channel {i} has zero weight") from None
    return out


def _fan_in_mixer(rng: np.random.Generator, n_in: int):
    bound = np.sqrt(6.0 / n_in)
    mixer = rng.uniform(-bound, bound, size=(3, n_in))
    mixer_bias = rng.uniform(-1.0 / np.sqrt(n_in), 1.0 / np.sqrt(n_in), size=3)
    return mixer, mixer_bias


def plain_mixer_init(n_in: int = 14, seed: int = 0, norm: NormalizationSpec = NormalizationSpec()) -> MultiWindowLayer:
    """Clamp-free layer with every 1x1 convolution default-initialized.

    Channel weights are drawn uniformly within ``sqrt(6 / fan_in)`` with
    ``fan_in = 1`` (one input channel), channel biases within ``1 / sqrt(fan_in)``;
    the mixer uses ``fan_in = n_in``.
    """
    if n_in < 1:
        raise ValueError("n_in must be at least 1")
    rng = np.random.default_rng(seed)
    weight = rng.uniform(-np.sqrt(6.0), np.sqrt(6.0), size=n_in)
    bias = rng.uniform(-1.0, 1.0, size=n_in)
    mixer, mixer_bias = _fan_in_mixer(rng, n_in)
    return MultiWindowLayer(weight, bias, np.full(n_in, PLAIN_CHANNEL_CEILING), mixer, mixer_bias, clamp=False, norm=norm)
