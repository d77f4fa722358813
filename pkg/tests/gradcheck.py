"""Finite-difference gradient checks shared by the unit and acceptance tests."""

import numpy as np

from windownet.multiwindow import MultiWindowLayer
from windownet.tinynet import TinyBackbone, forward_backward
from windownet.windowing import WindowSpec

STEP = 1e-3  # relative to the pixel scale of 4095 for window parameters
KINK_MARGIN = 10.0


def random_config(rng, n_windows=None, size=4, n_classes=2, batch=2):
    n = int(rng.integers(1, 5)) if n_windows is None else n_windows
    windows = [WindowSpec(float(rng.uniform(300, 3800)), float(rng.uniform(200, 3000))) for _ in range(n)]
    layer = MultiWindowLayer.from_windows(windows, seed=int(rng.integers(1 << 30)))
    net = TinyBackbone(n_classes, seed=int(rng.integers(1 << 30)))
    x = rng.integers(0, 4096, size=(batch, 1, size, size)).astype(float)
    y = rng.integers(0, 2, size=(batch, n_classes)).astype(float)
    return net, layer, x, y


def _near_kink(layer, x, margin):
    p = layer.params
    pre = x * p["win_weight"][None, :, None, None] + p["win_bias"][None, :, None, None]
    ceil = layer.ceiling[None, :, None, None]
    return bool(np.any(np.abs(pre) < margin) or np.any(np.abs(pre - ceil) < margin))


def check_full_gradient(net, layer, x, y, n_backbone=None, rng=None):
    """Trainable scalars against central differences.

    Every window and mixer scalar is checked; for the backbone either all
    scalars or ``n_backbone`` randomly chosen ones.

    Returns ``None`` when the configuration is skipped because a perturbed
    pre-activation could cross a clamp kink, otherwise the largest relative
    error seen.
    """
    # a window-weight step of h moves pre-activations by up to h * max(x)
    h_w = STEP / 4095.0
    if _near_kink(layer, x, KINK_MARGIN * STEP):
        return None
    _, grads, _ = forward_backward(net, layer, x, y)
    params = dict(net.params)
    params.update(layer.params)
    probes = [(name, idx) for name in layer.params for idx in np.ndindex(params[name].shape)]
    backbone = [(name, idx) for name in net.params for idx in np.ndindex(params[name].shape)]
    if n_backbone is not None:
        rng = rng or np.random.default_rng(0)
        backbone = [backbone[i] for i in rng.choice(len(backbone), size=n_backbone, replace=False)]
    worst = 0.0
    for name, idx in probes + backbone:
        p = params[name]
        h = h_w if name == "win_weight" else STEP if name == "win_bias" else 1e-5
        old = p[idx]
        p[idx] = old + h
        lp = forward_backward(net, layer, x, y, need_grads=False)[0]
        p[idx] = old - h
        lm = forward_backward(net, layer, x, y, need_grads=False)[0]
        p[idx] = old
        fd = (lp - lm) / (2 * h)
        g = grads[name][idx]
        err = abs(g - fd) / max(abs(g), abs(fd), 1e-7)
        if abs(g - fd) > 1e-10:
            worst = max(worst, err)
    return worst
