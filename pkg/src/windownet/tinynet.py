"""Small CNN classifier, loss, AdamW, plateau scheduling and checkpoints.

The backbone is conv3x3(3->8) -> ReLU -> avgpool2 -> conv3x3(8->16) -> ReLU
-> avgpool2 -> global average pool -> linear(16->C). Parameters live in plain
dicts of float64 arrays so the optimizer and checkpoint code can treat the
windowing front-end and the backbone alike.
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Optional, Tuple

import numpy as np

from . import nn
from .multiwindow import MultiWindowLayer

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]

CHECKPOINT_MAGIC = b"WNCK"
CHECKPOINT_VERSION = 1
IMPROVEMENT_EPS = 1e-6
# parameters that act on raw pixel values; see TrainConfig.window_lr_scale
WINDOW_PARAMS = ("win_weight", "win_bias")


class CheckpointError(IOError):
    """Raised for unreadable, corrupt or incompatible checkpoint files."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    lr_decay_factor: float = 10.0
    plateau_patience_lr: int = 3
    stop_patience: int = 5
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    seed: int = 0
    max_epochs: int = 100
    # multiplies the learning rate of the window weights and biases only
    window_lr_scale: float = 1.0

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        positive = {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "lr_decay_factor": self.lr_decay_factor,
            "plateau_patience_lr": self.plateau_patience_lr,
            "stop_patience": self.stop_patience,
            "epsilon": self.epsilon,
            "max_epochs": self.max_epochs,
            "window_lr_scale": self.window_lr_scale,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError(f"betas must lie in [0, 1), got {self.betas}")
        if self.plateau_patience_lr >= self.stop_patience:
            logger.warning(
                "plateau_patience_lr (%d) >= stop_patience (%d): the learning rate "
                "will never decay before training stops",
                self.plateau_patience_lr,
                self.stop_patience,
            )

    def to_items(self) -> Dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ",".join(repr(float(b)) for b in v) if f.name == "betas" else repr(v)
        return out

    @classmethod
    def from_items(cls, items: Dict[str, str]) -> "TrainConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name]
            if f.name == "betas":
                kwargs[f.name] = tuple(float(x) for x in raw.split(","))
            elif f.type in ("int", int):
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = float(raw)
        return cls(**kwargs)


class TinyBackbone:
    """The fixed two-convolution classifier."""

    def __init__(self, n_classes: int = 14, seed: int = 0, params: Optional[Params] = None):
        self.n_classes = n_classes
        if params is None:
            # weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))
            rng = np.random.default_rng(seed)
            params = {}
            for name, shape, fan_in in (
                ("conv1", (8, 3, 3, 3), 27),
                ("conv2", (16, 8, 3, 3), 72),
                ("fc", (n_classes, 16), 16),
            ):
                bound = 1.0 / np.sqrt(fan_in)
                params[f"{name}_w"] = rng.uniform(-bound, bound, size=shape)
                params[f"{name}_b"] = rng.uniform(-bound, bound, size=shape[0])
        self.params = params
        self._check()

    def _check(self):
        p = self.params
        expected = {
            "conv1_w": (8, 3, 3, 3),
            "conv1_b": (8,),
            "conv2_w": (16, 8, 3, 3),
            "conv2_b": (16,),
            "fc_w": (self.n_classes, 16),
            "fc_b": (self.n_classes,),
        }
        for name, shape in expected.items():
            if name not in p or p[name].shape != shape:
                got = None if name not in p else p[name].shape
                raise ValueError(f"backbone parameter {name}: expected shape {shape}, got {got}")

    def forward(self, x: np.ndarray):
        p = self.params
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"backbone expects (B, 3, H, W), got {x.shape}")
        h1, c1 = nn.conv3x3_forward(x, p["conv1_w"], p["conv1_b"])
        r1, m1 = nn.relu_forward(h1)
        q1 = nn.avgpool2_forward(r1)
        h2, c2 = nn.conv3x3_forward(q1, p["conv2_w"], p["conv2_b"])
        r2, m2 = nn.relu_forward(h2)
        q2 = nn.avgpool2_forward(r2)
        feat = q2.mean(axis=(2, 3))
        logits = feat @ p["fc_w"].T + p["fc_b"]
        return logits, (c1, m1, c2, m2, q2.shape, feat)

    def backward(self, d_logits: np.ndarray, cache, need_dx: bool = False):
        p = self.params
        c1, m1, c2, m2, q2_shape, feat = cache
        grads = {"fc_w": d_logits.T @ feat, "fc_b": d_logits.sum(axis=0)}
        d_feat = d_logits @ p["fc_w"]
        hw = q2_shape[2] * q2_shape[3]
        d_q2 = np.broadcast_to((d_feat / hw)[:, :, None, None], q2_shape)
        d_h2 = nn.relu_backward(nn.avgpool2_backward(d_q2), m2)
        d_q1, grads["conv2_w"], grads["conv2_b"] = nn.conv3x3_backward(d_h2, c2, p["conv2_w"])
        d_h1 = nn.relu_backward(nn.avgpool2_backward(d_q1), m1)
        dx, grads["conv1_w"], grads["conv1_b"] = nn.conv3x3_backward(d_h1, c1, p["conv1_w"], need_dx=need_dx)
        return grads, dx


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy over all entries, and its gradient.

    Uses ``max(z, 0) - z*y + log1p(exp(-|z|))`` so large logits neither
    overflow nor lose the small-loss tail.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"logits {z.shape} and targets {y.shape} differ in shape")
    n = z.size
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return float(loss.sum() / n), (sig - y) / n


@dataclass
class AdamState:
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamState":
        return cls(0, {k: np.zeros_like(v) for k, v in params.items()}, {k: np.zeros_like(v) for k, v in params.items()})


def adamw_step(params: Params, grads: Params, state: AdamState, config: TrainConfig, lr: Optional[float] = None):
    """One AdamW update, in place. Weight decay is applied to the parameter
    directly and never enters the moment estimates. Window weights and biases
    step with ``lr * config.window_lr_scale``.
    """
    lr = config.learning_rate if lr is None else lr
    b1, b2 = config.betas
    eps, wd = config.epsilon, config.weight_decay
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        step_lr = lr * config.window_lr_scale if name in WINDOW_PARAMS else lr
        p -= step_lr * (m_hat / (np.sqrt(v_hat) + eps) + wd * p)
    return params, state


class PlateauCounter:
    """Counts epochs since the validation loss last improved.

    An improvement is a decrease by more than ``1e-6`` below the best loss so
    far. With ``reset_on_fire`` the counter restarts after firing, which is
    the learning-rate decay behaviour; without it the signal is terminal.
    """

    def __init__(self, patience: int, reset_on_fire: bool):
        if patience < 1:
            raise ValueError("patience must be at least 1")
        self.patience = patience
        self.reset_on_fire = reset_on_fire
        self.best = float("inf")
        self.stale = 0

    def update(self, loss: float) -> bool:
        if loss < self.best - IMPROVEMENT_EPS:
            self.best = loss
            self.stale = 0
            return False
        self.stale += 1
        if self.stale >= self.patience:
            if self.reset_on_fire:
                self.stale = 0
            return True
        return False

    def state(self) -> Tuple[float, int]:
        return self.best, self.stale


def plateau_scheduler(history, patience: int = 3) -> str:
    """``"decay"`` if the last epoch of ``history`` triggers a learning-rate drop."""
    if len(history) == 0:
        raise ValueError("history must be non-empty")
    counter = PlateauCounter(patience, reset_on_fire=True)
    fired = False
    for loss in history:
        fired = counter.update(loss)
    return "decay" if fired else "hold"


def early_stop(history, patience: int = 5) -> str:
    if len(history) == 0:
        raise ValueError("history must be non-empty")
    counter = PlateauCounter(patience, reset_on_fire=False)
    for loss in history:
        if counter.update(loss):
            return "stop"
    return "continue"


def forward_backward(net: TinyBackbone, layer: Optional[MultiWindowLayer], images, labels, need_grads: bool = True):
    """Loss and gradients for one batch.

    With a layer, ``images`` are raw single-channel pixels ``(B, 1, H, W)``
    and the gradients cover both the layer and the backbone. Without one,
    ``images`` are already normalized ``(B, 3, H, W)`` backbone inputs.

    Returns:
        ``(loss, grads, logits)``; layer gradients are keyed ``win_*``.
    """
    x = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"batch has {x.shape[0]} images but {y.shape[0]} label rows")
    if y.ndim != 2 or y.shape[1] != net.n_classes:
        raise ValueError(f"labels must be (B, {net.n_classes}), got {y.shape}")
    if layer is not None:
        feats, wcache = layer.forward(x)
    else:
        feats, wcache = x, None
    logits, cache = net.forward(feats)
    loss, d_logits = bce_with_logits(logits, y)
    if not need_grads:
        return loss, None, logits
    grads, d_feats = net.backward(d_logits, cache, need_dx=layer is not None)
    if layer is not None:
        lg, _ = layer.backward(wcache, d_feats, need_dx=False)
        grads.update(lg.as_params())
    return loss, grads, logits


# --- checkpoints --------------------------------------------------------


def _encode_items(items: Dict[str, str]) -> bytes:
    lines = []
    for k in sorted(items):
        v = items[k]
        if "\n" in k or "=" in k or "\n" in v:
            raise ValueError(f"checkpoint config entry {k!r} cannot be encoded")
        lines.append(f"{k}={v}")
    return "\n".join(lines).encode("utf-8")


def _decode_items(raw: bytes) -> Dict[str, str]:
    text = raw.decode("utf-8")
    items = {}
    for line in text.split("\n") if text else []:
        k, sep, v = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed config line {line!r}")
        items[k] = v
    return items


@dataclass
class Checkpoint:
    """Everything needed to resume training or evaluate a model."""

    arrays: Dict[str, np.ndarray]
    items: Dict[str, str]
    version: int = CHECKPOINT_VERSION

    @property
    def epoch(self) -> int:
        return int(self.items.get("epoch", "0"))

    @property
    def best_mean_auc(self) -> float:
        return float(self.items.get("best_mean_auc", "nan"))

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<I", self.version))
        cfg = _encode_items(self.items)
        buf.write(struct.pack("<I", len(cfg)))
        buf.write(cfg)
        buf.write(struct.pack("<I", len(self.arrays)))
        for name in sorted(self.arrays):
            arr = np.ascontiguousarray(self.arrays[name], dtype="<f8")
            nb = name.encode("utf-8")
            buf.write(struct.pack("<I", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<I", arr.ndim))
            if arr.ndim:
                buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "Checkpoint":
        if data[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{source}: bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
        pos = 4

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(data):
                raise CheckpointError(f"{source}: truncated at byte offset {pos} (needed {n} more bytes)")
            chunk = data[pos : pos + n]
            pos += n
            return chunk

        (version,) = struct.unpack("<I", take(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{source}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
        (cfg_len,) = struct.unpack("<I", take(4))
        try:
            items = _decode_items(take(cfg_len))
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{source}: config text is not UTF-8: {exc}") from None
        (n_arrays,) = struct.unpack("<I", take(4))
        arrays = {}
        for _ in range(n_arrays):
            (nlen,) = struct.unpack("<I", take(4))
            name = take(nlen).decode("utf-8", errors="strict")
            (rank,) = struct.unpack("<I", take(4))
            dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
            count = int(np.prod(dims)) if rank else 1
            arrays[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
        if pos != len(data):
            raise CheckpointError(f"{source}: {len(data) - pos} trailing bytes after the last array")
        return cls(arrays, items, version)


MOMENT_PREFIXES = ("adam_m.", "adam_v.")


def make_checkpoint(params: Params, state: Optional[AdamState], items: Dict[str, str], extra: Optional[Params] = None) -> Checkpoint:
    """Snapshot parameters and, when given, the optimizer moments and step.

    Arrays are copied, so later training does not alter the snapshot.
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    items = dict(items)
    if extra:
        arrays.update({k: np.array(v, dtype=np.float64) for k, v in extra.items()})
    if state is not None:
        for k in params:
            if k in state.m:
                arrays[f"adam_m.{k}"] = state.m[k].copy()
                arrays[f"adam_v.{k}"] = state.v[k].copy()
        items["adam_step"] = str(state.step)
    return Checkpoint(arrays, items)


def split_checkpoint(ckpt: Checkpoint) -> Tuple[Params, AdamState]:
    """Inverse of :func:`make_checkpoint`: model arrays and optimizer state."""
    params, m, v = {}, {}, {}
    for k, arr in ckpt.arrays.items():
        if k.startswith("adam_m."):
            m[k[len("adam_m.") :]] = arr.copy()
        elif k.startswith("adam_v."):
            v[k[len("adam_v.") :]] = arr.copy()
        else:
            params[k] = arr.copy()
    if set(m) != set(v):
        raise CheckpointError("checkpoint has unpaired optimizer moments")
    return params, AdamState(int(ckpt.items.get("adam_step", "0")), m, v)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    with open(path, "wb") as f:
        f.write(ckpt.to_bytes())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    return Checkpoint.from_bytes(data, source=path)
