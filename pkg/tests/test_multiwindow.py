import numpy as np
import pytest

from gradcheck import check_full_gradient, random_config
from windownet.imagepipe import IMAGENET_MEAN, IMAGENET_STD, ImageTensor
from windownet.multiwindow import (
    INIT_WINDOW_PAIRS,
    MultiWindowLayer,
    backward,
    default_init_windows,
    forward,
    plain_mixer_init,
    recover_windows,
)
from windownet.tinynet import AdamState, TrainConfig, adamw_step
from windownet.windowing import DegenerateWindowError, WindowSpec, apply_affine, to_affine

MEAN = np.array(IMAGENET_MEAN)[:, None, None]
STD = np.array(IMAGENET_STD)[:, None, None]


def _pixels(rng, shape=(1, 6, 6)):
    return rng.integers(0, 4096, size=shape).astype(float)


def test_init_list():
    assert len(INIT_WINDOW_PAIRS) == 14
    assert INIT_WINDOW_PAIRS[1] == (1250, 1000) and INIT_WINDOW_PAIRS[-1] == (2048, 4096)
    back = recover_windows(MultiWindowLayer.from_windows(default_init_windows(), seed=3))
    for w, (lv, wd) in zip(back, INIT_WINDOW_PAIRS):
        assert w.level == pytest.approx(lv, rel=1e-12) and w.width == pytest.approx(wd, rel=1e-12)


def test_forward_matches_per_channel_window_math():
    rng = np.random.default_rng(0)
    wins = [WindowSpec(1250, 1000), WindowSpec(2500, 2000), WindowSpec(2048, 4096)]
    layer = MultiWindowLayer.from_windows(wins, seed=1)
    x = _pixels(rng)
    out, _ = layer.forward(ImageTensor(x, 12))
    chans = [apply_affine(x[0], to_affine(w)) * 255.0 / to_affine(w).ceiling for w in wins]
    mixed = np.einsum("kn,nhw->khw", layer.params["win_mixer"], np.array(chans))
    mixed += layer.params["win_mixer_bias"][:, None, None]
    want = (mixed / 255.0 - MEAN) / STD
    np.testing.assert_allclose(out.data, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 7, 14])
def test_output_is_three_channels_for_any_n(n):
    layer = MultiWindowLayer.from_windows([WindowSpec(2000, 1000)] * n, seed=0)
    out, _ = layer.forward(np.zeros((2, 1, 4, 5)))
    assert out.shape == (2, 3, 4, 5)


def test_single_identity_window_reduces_to_scale_and_normalize():
    layer = MultiWindowLayer([1.0], [0.0], [4096.0], np.ones((3, 1)), np.zeros(3))
    x = _pixels(np.random.default_rng(1))
    out, _ = layer.forward(ImageTensor(x, 12))
    want = (np.repeat(x, 3, axis=0) * 255.0 / 4096.0 / 255.0 - MEAN) / STD
    np.testing.assert_allclose(out.data, want, rtol=0, atol=1e-12)


def test_channel_scale_is_absorbed_by_mixer():
    rng = np.random.default_rng(2)
    layer = MultiWindowLayer.from_windows(default_init_windows()[:4], seed=2)
    x = _pixels(rng, (2, 1, 5, 5))
    base, _ = layer.forward(x)
    # weight, bias and ceiling scaled together leave the 0..255 channel unchanged
    c = 3.0
    scaled = layer.copy()
    scaled.params["win_weight"][1] *= c
    scaled.params["win_bias"][1] *= c
    scaled.ceiling[1] *= c
    out, _ = scaled.forward(x)
    np.testing.assert_allclose(out, base, rtol=1e-9, atol=1e-9)


def test_mixer_column_rescale_compensates_channel_rescale():
    rng = np.random.default_rng(3)
    layer = MultiWindowLayer.from_windows(default_init_windows()[:3], seed=3)
    x = _pixels(rng, (1, 1, 4, 4))
    _, (xc, pre, scaled) = layer.forward(x)
    c = 7.0
    m = layer.params["win_mixer"].copy()
    m2 = m.copy()
    m2[:, 2] /= c
    s2 = scaled.copy()
    s2[:, 2] *= c
    a = np.einsum("kn,bnhw->bkhw", m, scaled)
    b = np.einsum("kn,bnhw->bkhw", m2, s2)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)


def test_plain_init_is_deterministic_bounded_and_clamp_free():
    a, b = plain_mixer_init(14, seed=4), plain_mixer_init(14, seed=4)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert not a.clamp
    assert np.all(np.abs(a.params["win_weight"]) <= np.sqrt(6.0))
    assert np.all(np.abs(a.params["win_mixer"]) <= np.sqrt(6.0 / 14))
    assert a.params["win_mixer"].shape == (3, 14)
    with pytest.raises(ValueError):
        plain_mixer_init(0)


def test_plain_forward_is_affine():
    rng = np.random.default_rng(5)
    layer = plain_mixer_init(5, seed=5)
    a, b = rng.normal(size=(1, 1, 4, 4)) * 1000, rng.normal(size=(1, 1, 4, 4)) * 1000
    fa, fb = layer.forward(a)[0], layer.forward(b)[0]
    fab, f0 = layer.forward(a + b)[0], layer.forward(np.zeros_like(a))[0]
    np.testing.assert_allclose(fab, fa + fb - f0, rtol=1e-9, atol=1e-9)


def test_ceilings_fixed_under_optimizer_steps():
    rng = np.random.default_rng(6)
    layer = MultiWindowLayer.from_windows(default_init_windows(), seed=6)
    before = layer.ceiling.copy()
    state = AdamState.zeros_like(layer.params)
    for _ in range(5):
        _, cache = layer.forward(_pixels(rng, (2, 1, 4, 4)))
        grads, _ = layer.backward(cache, rng.normal(size=(2, 3, 4, 4)))
        adamw_step(layer.params, grads.as_params(), state, TrainConfig(learning_rate=0.1))
    np.testing.assert_array_equal(layer.ceiling, before)
    moved = recover_windows(layer)
    assert any(abs(w.level - lv) > 1e-9 or abs(w.width - wd) > 1e-9 for w, (lv, wd) in zip(moved, INIT_WINDOW_PAIRS))


def test_layer_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    layer = MultiWindowLayer.from_windows([WindowSpec(1500, 1000), WindowSpec(2500, 3000)], seed=7)
    x = _pixels(rng, (2, 1, 3, 3))
    g_out = rng.normal(size=(2, 3, 3, 3))
    _, cache = layer.forward(x)
    grads, dx = layer.backward(cache, g_out)
    flat = grads.as_params()

    def loss():
        return float((layer.forward(x)[0] * g_out).sum())

    for name in ("win_weight", "win_bias", "win_mixer", "win_mixer_bias"):
        p = layer.params[name]
        h = 1e-7 if name == "win_weight" else 1e-4
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp = loss()
            p[idx] = old - h
            lm = loss()
            p[idx] = old
            assert flat[name][idx] == pytest.approx((lp - lm) / (2 * h), rel=1e-5, abs=1e-8)
    # pixel gradient
    h = 1e-3
    e = np.zeros_like(x)
    e[0, 0, 1, 1] = h
    want = (float((layer.forward(x + e)[0] * g_out).sum()) - float((layer.forward(x - e)[0] * g_out).sum())) / (2 * h)
    assert dx[0, 0, 1, 1] == pytest.approx(want, rel=1e-5, abs=1e-8)


def test_kink_pixels_pass_no_gradient():
    layer = MultiWindowLayer.from_windows([WindowSpec(2000, 1000)], seed=0)
    x = np.array([[[[1500.0, 2500.0]]]])  # exactly on both kinks
    _, cache = layer.forward(x)
    grads, dx = layer.backward(cache, np.ones((1, 3, 1, 2)))
    assert grads.d_weight[0] == 0.0 and grads.d_bias[0] == 0.0
    np.testing.assert_array_equal(dx, 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_end_to_end_gradient_small_configs(seed):
    rng = np.random.default_rng(100 + seed)
    while True:
        net, layer, x, y = random_config(rng, n_windows=2, size=4, n_classes=2)
        worst = check_full_gradient(net, layer, x, y)
        if worst is not None:
            break
    assert worst < 1e-4


def test_module_level_wrappers_and_errors():
    layer = MultiWindowLayer.from_windows(default_init_windows()[:2], seed=0)
    x = np.zeros((1, 1, 2, 2))
    out, cache = forward(layer, x)
    grads, _ = backward(layer, cache, np.ones_like(out))
    assert grads.d_mixer.shape == (3, 2)
    with pytest.raises(ValueError):
        layer.forward(np.zeros((1, 2, 2, 2)))
    with pytest.raises(ValueError):
        layer.backward(cache, np.ones((1, 3, 3, 3)))
    with pytest.raises(ValueError):
        MultiWindowLayer([1.0, 2.0], [0.0], [1.0, 1.0], np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        MultiWindowLayer([1.0], [0.0], [0.0], np.zeros((3, 1)), np.zeros(3))


def test_recover_names_degenerate_channel():
    layer = MultiWindowLayer([1.0, 0.0], [0.0, 0.0], [10.0, 10.0], np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(DegenerateWindowError, match="channel 1"):
        recover_windows(layer)
