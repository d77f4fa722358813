"""Training runs and the three comparison protocols.

* bit depth: the same backbone trained on 8-bit and on 12-bit input;
* grid: one run per fixed window, plus the full-range window;
* multi-window: the trainable layer against a clamp-free variant and the
  8-bit baseline.

Every run is a pure function of its dataset and :class:`TrainConfig`, so
repeated experiments produce byte-identical CSVs and checkpoints.
"""

from __future__ import annotations

import configparser
import copy
import csv
import hashlib
import io
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .imagepipe import SUPPORTED_BIT_DEPTHS, ImageTensor, NormalizationSpec, quantize
from .metrics import EvalResult, evaluate
from .multiwindow import MultiWindowLayer, default_init_windows, plain_mixer_init, recover_windows
from .synthlab import SynthDataset, SynthSplit, load_dataset
from .tinynet import (
    AdamState,
    Checkpoint,
    PlateauCounter,
    make_checkpoint,
    split_checkpoint,
    TinyBackbone,
    TrainConfig,
    adamw_step,
    bce_with_logits,
    forward_backward,
    save_checkpoint,
)
from .windowing import WindowParameterError, WindowSpec, apply_window

logger = logging.getLogger(__name__)

CHEXPERT_CLASSES = (
    "atelectasis",
    "cardiomegaly",
    "consolidation",
    "edema",
    "enlarged cardiomediastinum",
    "fracture",
    "lung lesion",
    "lung opacity",
    "no finding",
    "pleural effusion",
    "pleural other",
    "pneumonia",
    "pneumothorax",
    "support devices",
)

KINDS = ("bitdepth", "grid", "multiwindow")

IDENTITY_WINDOW = WindowSpec(2048.0, 4096.0)
GRID_LEVELS = (100.0,) + tuple(float(v) for v in range(250, 3501, 250))
GRID_WIDTHS = (500.0, 1000.0, 1500.0, 2000.0, 3000.0)
# desk-scale subsample: every default synthetic band sits inside one of these
SUBSAMPLED_LEVELS = (1250.0, 2000.0, 3250.0)
SUBSAMPLED_WIDTHS = (1000.0, 2000.0)

# Recipe used by the experiment commands. The backbone needs a larger step
# than 1e-4 to learn anything in a few CPU minutes; the window parameters,
# which multiply raw 12-bit values, keep the 1e-4 step.
DESK_TRAIN_CONFIG = TrainConfig(learning_rate=3e-3, window_lr_scale=1.0 / 30.0, max_epochs=20)

EVAL_CHUNK = 100


def class_names(n_classes: int) -> List[str]:
    if n_classes == len(CHEXPERT_CLASSES):
        return list(CHEXPERT_CLASSES)
    return [f"class_{i}" for i in range(n_classes)]


def window_grid(full: bool = True) -> List[WindowSpec]:
    """Fixed windows to search, level-major, without the full-range window."""
    levels, widths = (GRID_LEVELS, GRID_WIDTHS) if full else (SUBSAMPLED_LEVELS, SUBSAMPLED_WIDTHS)
    return [WindowSpec(lv, wd) for lv in levels for wd in widths]


# --- input pipelines ----------------------------------------------------


def _normalize_gray(x255: np.ndarray, norm: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    """(B, 1, H, W) on the 0..255 scale -> normalized (B, 3, H, W)."""
    mean, std = norm.arrays()
    return (x255 / 255.0 - mean[None]) / std[None]


def preprocess_8bit(images: np.ndarray, target_bits: int = 8) -> np.ndarray:
    """Quantize raw 12-bit pixels and re-expand to the 0..255 scale."""
    x = np.asarray(images, dtype=np.float64)
    q = quantize(ImageTensor(x.reshape(-1, *x.shape[-2:]), 12), target_bits).data
    return _normalize_gray(q.reshape(x.shape) * (255.0 / (2**target_bits - 1)))


def preprocess_window(images: np.ndarray, window: WindowSpec) -> np.ndarray:
    """Apply one fixed window and stretch ``[L, U]`` onto 0..255."""
    x = apply_window(np.asarray(images, dtype=np.float64), window)
    return _normalize_gray((x - window.lower) * (255.0 / window.width))


@dataclass(frozen=True)
class Front:
    """How raw pixels reach the backbone.

    ``kind`` is ``quantized`` (fixed bit reduction), ``window`` (one fixed
    window), ``multiwindow`` (trainable clamped layer) or ``plain`` (the
    clamp-free layer).
    """

    kind: str
    bits: int = 8
    window: Optional[WindowSpec] = None
    init_windows: Tuple[WindowSpec, ...] = ()

    def describe(self) -> Dict[str, str]:
        d = {"front": self.kind}
        if self.kind == "quantized":
            d["bits"] = str(self.bits)
        if self.window is not None:
            d["window_level"] = repr(self.window.level)
            d["window_width"] = repr(self.window.width)
        if self.init_windows:
            d["init_windows"] = ";".join(f"{w.level!r}:{w.width!r}" for w in self.init_windows)
        return d

    @property
    def trainable(self) -> bool:
        return self.kind in ("multiwindow", "plain")

    def fixed(self, images: np.ndarray) -> np.ndarray:
        if self.kind == "quantized":
            return preprocess_8bit(images, self.bits)
        if self.kind == "window":
            return preprocess_window(images, self.window)
        raise ValueError(f"front {self.kind!r} is trainable, not fixed")

    def make_layer(self, seed: int) -> MultiWindowLayer:
        if self.kind == "multiwindow":
            return MultiWindowLayer.from_windows(list(self.init_windows), seed=seed)
        if self.kind == "plain":
            return plain_mixer_init(len(self.init_windows) or 14, seed=seed)
        raise ValueError(f"front {self.kind!r} has no trainable layer")


def front_from_items(items: Dict[str, str]) -> Front:
    kind = items.get("front")
    if kind == "quantized":
        return Front("quantized", bits=int(items.get("bits", 8)))
    if kind == "window":
        return Front("window", window=WindowSpec(float(items["window_level"]), float(items["window_width"])))
    if kind in ("multiwindow", "plain"):
        wins = tuple(
            WindowSpec(float(a), float(b)) for a, b in (p.split(":") for p in items.get("init_windows", "").split(";") if p)
        )
        return Front(kind, init_windows=wins)
    raise ValueError(f"unknown front {kind!r} in checkpoint")


# --- training -----------------------------------------------------------


@dataclass
class RunResult:
    """One trained model: test metrics of the selected epoch plus its history."""

    name: str
    front: Front
    test: EvalResult
    val: EvalResult
    best_val_auc: float
    best_epoch: int
    epochs_run: int
    fingerprint: str
    checkpoint: Checkpoint
    val_history: List[Tuple[int, float, float, float]] = field(default_factory=list)  # epoch, loss, mean auc, lr
    recovered: List[Tuple[int, List[WindowSpec]]] = field(default_factory=list)


def config_fingerprint(items: Dict[str, str]) -> str:
    text = "\n".join(f"{k}={items[k]}" for k in sorted(items))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


class Model:
    """Front-end plus backbone, with shared parameter dict for the optimizer."""

    def __init__(self, front: Front, n_classes: int, seed: int):
        self.front = front
        self.net = TinyBackbone(n_classes, seed=seed)
        self.layer = front.make_layer(seed) if front.trainable else None

    @property
    def params(self) -> Dict[str, np.ndarray]:
        out = dict(self.net.params)
        if self.layer is not None:
            out.update(self.layer.params)
        return out

    def fixed_arrays(self) -> Dict[str, np.ndarray]:
        return {"win_ceiling": self.layer.ceiling} if self.layer is not None else {}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            if k.startswith(("adam_m.", "adam_v.")):
                continue
            if k == "win_ceiling":
                self.layer.ceiling = v.copy()
            elif k.startswith("win_"):
                self.layer.params[k] = v.copy()
            else:
                self.net.params[k] = v.copy()
        self.net._check()

    def inputs(self, images: np.ndarray) -> np.ndarray:
        """What the training loop feeds to :func:`forward_backward`."""
        return images if self.layer is not None else self.front.fixed(images)

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Logits for prepared inputs, computed in chunks to bound memory."""
        out = []
        for i in range(0, x.shape[0], EVAL_CHUNK):
            feats = x[i : i + EVAL_CHUNK]
            if self.layer is not None:
                feats, _ = self.layer.forward(feats)
            out.append(self.net.forward(feats)[0])
        return np.concatenate(out) if out else np.empty((0, self.net.n_classes))


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    front = front_from_items(ckpt.items)
    model = Model(front, int(ckpt.items.get("n_classes", 14)), seed=int(ckpt.items.get("seed", 0)))
    model.load_arrays(split_checkpoint(ckpt)[0])
    return model


def evaluate_model(model: Model, split: SynthSplit) -> EvalResult:
    logits = model.logits(model.inputs(split.images))
    return evaluate(logits, split.labels, class_names(split.labels.shape[1]))


def train_run(
    name: str,
    front: Front,
    dataset: SynthDataset,
    config: TrainConfig,
    on_epoch: Optional[Callable[[int, Model], None]] = None,
) -> RunResult:
    """Train one model and evaluate its best-validation epoch on the test split.

    Validation loss drives the plateau decay and early stopping; the reported
    model is the epoch with the highest validation mean AUC.
    """
    n_classes = dataset.config.n_classes
    names = class_names(n_classes)
    model = Model(front, n_classes, config.seed)
    params = model.params
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))

    x_train = model.inputs(dataset.train.images)
    y_train = dataset.train.labels
    x_val = model.inputs(dataset.val.images)
    y_val = dataset.val.labels

    items = config.to_items()
    items.update(front.describe())
    items["n_classes"] = str(n_classes)
    items["dataset"] = dataset.fingerprint()
    fingerprint = config_fingerprint(items)

    lr = config.learning_rate
    decay = PlateauCounter(config.plateau_patience_lr, reset_on_fire=True)
    stop = PlateauCounter(config.stop_patience, reset_on_fire=False)
    best_auc, best_epoch, best_val = -np.inf, 0, None
    best = make_checkpoint(params, state, {}, model.fixed_arrays())
    history: List[Tuple[int, float, float, float]] = []
    recovered: List[Tuple[int, List[WindowSpec]]] = []
    if model.layer is not None and front.kind == "multiwindow":
        recovered.append((0, recover_windows(model.layer)))
    if on_epoch is not None:
        on_epoch(0, model)

    n = x_train.shape[0]
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            _, grads, _ = forward_backward(model.net, model.layer, x_train[idx], y_train[idx])
            adamw_step(params, grads, state, config, lr=lr)
        logits = model.logits(x_val)
        val_loss, _ = bce_with_logits(logits, y_val)
        val = evaluate(logits, y_val, names)
        history.append((epoch, val_loss, val.mean_auc, lr))
        logger.info("%s epoch %d: val loss %.5f, mean AUC %.4f, lr %.2e", name, epoch, val_loss, val.mean_auc, lr)
        if model.layer is not None and front.kind == "multiwindow":
            recovered.append((epoch, recover_windows(model.layer)))
        if on_epoch is not None:
            on_epoch(epoch, model)
        if val.mean_auc > best_auc:
            best_auc, best_epoch, best_val = val.mean_auc, epoch, val
            best = make_checkpoint(params, state, {}, model.fixed_arrays())
        if decay.update(val_loss):
            lr /= config.lr_decay_factor
            logger.info("%s: learning rate decayed to %.2e", name, lr)
        if stop.update(val_loss):
            logger.info("%s: early stop after epoch %d", name, epoch)
            break

    model.load_arrays(best.arrays)
    test = evaluate_model(model, dataset.test)
    if best_val is None:
        best_val = evaluate_model(model, dataset.val)
    items["epoch"] = str(best_epoch)
    items["best_mean_auc"] = repr(float(best_auc))
    items["fingerprint"] = fingerprint
    ckpt = Checkpoint(best.arrays, dict(best.items, **items))
    return RunResult(name, front, test, best_val, float(best_auc), best_epoch, epoch, fingerprint, ckpt, history, recovered)


def initial_checkpoint(front: Front, n_classes: int = 14, config: TrainConfig = TrainConfig()) -> Checkpoint:
    """Checkpoint of an untrained model, e.g. to inspect the initial windows."""
    model = Model(front, n_classes, config.seed)
    items = config.to_items()
    items.update(front.describe())
    items["n_classes"] = str(n_classes)
    items["epoch"] = "0"
    return make_checkpoint(model.params, None, items, model.fixed_arrays())


# --- experiments --------------------------------------------------------


@dataclass
class ExperimentSpec:
    kind: str
    dataset: Optional[str] = None
    train: TrainConfig = field(default_factory=lambda: copy.deepcopy(DESK_TRAIN_CONFIG))
    bits: int = 8
    grid: Optional[Tuple[WindowSpec, ...]] = None
    full_grid: bool = False
    init_windows: Tuple[WindowSpec, ...] = field(default_factory=lambda: tuple(default_init_windows()))
    ablation: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"experiment kind must be one of {KINDS}, got {self.kind!r}")
        if self.bits not in SUPPORTED_BIT_DEPTHS or self.bits >= 12:
            raise ValueError(f"baseline bit depth must be below 12 and one of {SUPPORTED_BIT_DEPTHS}, got {self.bits}")
        if self.grid is not None and len(self.grid) == 0:
            raise WindowParameterError("window grid is empty")
        if not self.init_windows:
            raise WindowParameterError("init window list is empty")

    def windows(self) -> List[WindowSpec]:
        if self.grid is not None:
            return list(self.grid)
        return window_grid(self.full_grid)


@dataclass
class ExperimentResult:
    kind: str
    runs: List[RunResult]
    seed: int
    dataset_fingerprint: str
    class_names: List[str]
    bands: List[Optional[Tuple[float, float, float]]] = field(default_factory=list)
    wall_time: float = 0.0

    def run(self, name: str) -> RunResult:
        for r in self.runs:
            if r.name == name:
                return r
        raise KeyError(name)


def _load(spec: ExperimentSpec, dataset: Optional[SynthDataset]) -> SynthDataset:
    if dataset is not None:
        return dataset
    if spec.dataset is None:
        raise FileNotFoundError("experiment spec names no dataset")
    if not os.path.isdir(spec.dataset):
        raise FileNotFoundError(f"dataset directory {spec.dataset} does not exist")
    return load_dataset(spec.dataset)


def _result(kind: str, runs: List[RunResult], spec: ExperimentSpec, ds: SynthDataset, t0: float) -> ExperimentResult:
    return ExperimentResult(
        kind,
        runs,
        spec.train.seed,
        ds.fingerprint(),
        class_names(ds.config.n_classes),
        list(ds.config.signal_bands),
        time.perf_counter() - t0,
    )


def _window_run_name(w: WindowSpec) -> str:
    return f"window_{w.level:g}_{w.width:g}"


def run_bitdepth(spec: ExperimentSpec, dataset: Optional[SynthDataset] = None) -> ExperimentResult:
    """Reduced-bit versus 12-bit input, same backbone, seed and schedule.

    The 12-bit arm goes through the full-range window so it is the very same
    pipeline as the grid search's identity run.
    """
    t0 = time.perf_counter()
    ds = _load(spec, dataset)
    runs = [
        train_run(f"{spec.bits}bit", Front("quantized", bits=spec.bits), ds, spec.train),
        train_run("12bit", Front("window", window=IDENTITY_WINDOW), ds, spec.train),
    ]
    return _result("bitdepth", runs, spec, ds, t0)


def _grid_job(args):
    name, front, ds, config = args
    return train_run(name, front, ds, config)


def run_grid(spec: ExperimentSpec, dataset: Optional[SynthDataset] = None) -> ExperimentResult:
    """One run per grid window plus the full-range window, in grid order."""
    t0 = time.perf_counter()
    windows = spec.windows()
    if not windows:
        raise WindowParameterError("window grid is empty")
    ds = _load(spec, dataset)
    if IDENTITY_WINDOW not in windows:
        windows = windows + [IDENTITY_WINDOW]
    jobs = [(_window_run_name(w), Front("window", window=w), ds, spec.train) for w in windows]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            runs = list(pool.map(_grid_job, jobs))
    else:
        runs = [_grid_job(j) for j in jobs]
    return _result("grid", runs, spec, ds, t0)


def run_multiwindow(spec: ExperimentSpec, dataset: Optional[SynthDataset] = None) -> ExperimentResult:
    """Trainable windows, the clamp-free ablation and the 8-bit baseline."""
    t0 = time.perf_counter()
    ds = _load(spec, dataset)
    init = tuple(spec.init_windows)
    runs = [train_run("windownet", Front("multiwindow", init_windows=init), ds, spec.train)]
    if spec.ablation:
        runs.append(train_run("no_windowing", Front("plain", init_windows=init), ds, spec.train))
    runs.append(train_run(f"{spec.bits}bit_baseline", Front("quantized", bits=spec.bits), ds, spec.train))
    return _result("multiwindow", runs, spec, ds, t0)


def run_experiment(spec: ExperimentSpec, dataset: Optional[SynthDataset] = None) -> ExperimentResult:
    return {"bitdepth": run_bitdepth, "grid": run_grid, "multiwindow": run_multiwindow}[spec.kind](spec, dataset)


def best_windows(result: ExperimentResult, top_k: int = 1) -> Dict[int, List[Tuple[WindowSpec, float]]]:
    """Per class, the ``top_k`` grid windows ranked by validation AUC of the
    selected epoch (ties keep grid order).
    """
    out = {}
    n_classes = len(result.class_names)
    for c in range(n_classes):
        scored = [(r.front.window, r.val.per_class_auc[c]) for r in result.runs if r.front.window is not None]
        scored = [(w, a) for w, a in scored if a is not None]
        scored.sort(key=lambda wa: -wa[1])  # stable
        out[c] = scored[:top_k]
    return out


def top_windows(result: ExperimentResult, k: int = 3) -> List[WindowSpec]:
    """Union of every class's top-``k`` windows, deduplicated in first-seen
    order, with the full-range window appended last.
    """
    if result.kind != "grid":
        raise ValueError("top windows are selected from grid results")
    seen: List[WindowSpec] = []
    for c, ranked in sorted(best_windows(result, k).items()):
        for w, _ in ranked:
            if w != IDENTITY_WINDOW and w not in seen:
                seen.append(w)
    return seen + [IDENTITY_WINDOW]


# --- spec files ---------------------------------------------------------

_MAIN = "experiment"


def _parse_windows(text: str) -> Tuple[WindowSpec, ...]:
    out = []
    for part in text.replace("\n", ",").split(","):
        part = part.strip()
        if not part:
            continue
        level, sep, width = part.partition(":")
        if not sep:
            raise ValueError(f"window {part!r} must be written level:width")
        out.append(WindowSpec(float(level), float(width)))
    return tuple(out)


def _parse_floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def parse_spec(text: str, base_dir: str = ".") -> ExperimentSpec:
    """Read a key=value experiment file.

    Top-level keys (``kind``, ``dataset``, ``seed``, ``bits``, ``workers``) come
    first; optional ``[train]``, ``[grid]`` and ``[multiwindow]`` sections
    follow. A relative dataset path is taken relative to ``base_dir``.
    """
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(f"[{_MAIN}]\n" + text)
    unknown = set(cp.sections()) - {_MAIN, "train", "grid", "multiwindow"}
    if unknown:
        raise ValueError(f"unknown spec sections: {sorted(unknown)}")
    main = cp[_MAIN]
    allowed = {"kind", "dataset", "seed", "bits", "workers"}
    extra = set(main) - allowed
    if extra:
        raise ValueError(f"unknown spec keys: {sorted(extra)}")
    train_items = DESK_TRAIN_CONFIG.to_items()
    if cp.has_section("train"):
        valid = set(train_items)
        for k, v in cp["train"].items():
            if k not in valid:
                raise ValueError(f"unknown [train] key {k!r}")
            train_items[k] = v
    if "seed" in main:
        train_items["seed"] = main["seed"]
    kwargs = {"kind": main.get("kind", "").strip(), "train": TrainConfig.from_items(train_items)}
    if "dataset" in main:
        kwargs["dataset"] = os.path.join(base_dir, main["dataset"].strip())
    if "bits" in main:
        kwargs["bits"] = int(main["bits"])
    if "workers" in main:
        kwargs["workers"] = int(main["workers"])
    if cp.has_section("grid"):
        g = cp["grid"]
        extra = set(g) - {"full", "levels", "widths", "windows"}
        if extra:
            raise ValueError(f"unknown [grid] keys: {sorted(extra)}")
        kwargs["full_grid"] = g.getboolean("full", fallback=False)
        if "windows" in g:
            kwargs["grid"] = _parse_windows(g["windows"])
        elif "levels" in g or "widths" in g:
            levels = _parse_floats(g.get("levels", ",".join(map(str, GRID_LEVELS))))
            widths = _parse_floats(g.get("widths", ",".join(map(str, GRID_WIDTHS))))
            kwargs["grid"] = tuple(WindowSpec(lv, wd) for lv in levels for wd in widths)
    if cp.has_section("multiwindow"):
        m = cp["multiwindow"]
        extra = set(m) - {"init", "ablation"}
        if extra:
            raise ValueError(f"unknown [multiwindow] keys: {sorted(extra)}")
        if "init" in m and m["init"].strip() != "default":
            kwargs["init_windows"] = _parse_windows(m["init"])
        kwargs["ablation"] = m.getboolean("ablation", fallback=True)
    return ExperimentSpec(**kwargs)


def load_spec(path: str) -> ExperimentSpec:
    with open(path, encoding="utf-8") as f:
        return parse_spec(f.read(), base_dir=os.path.dirname(os.path.abspath(path)))


# --- reporting ----------------------------------------------------------


def _csv(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.6f}"


def auc_table(result: ExperimentResult) -> str:
    """Long-format table: one row per (run, class) plus each run's mean."""
    rows = [["run", "class", "auc", "n_pos", "n_neg"]]
    for r in result.runs:
        for name, auc, p, n in zip(result.class_names, r.test.per_class_auc, r.test.n_pos, r.test.n_neg):
            rows.append([r.name, name, _fmt(auc), p, n])
        rows.append([r.name, "mean", _fmt(r.test.mean_auc), sum(r.test.n_pos), sum(r.test.n_neg)])
    return _csv(rows)


def best_window_table(result: ExperimentResult) -> str:
    rows = [["class", "level", "width", "val_auc"]]
    for c, ranked in sorted(best_windows(result, 1).items()):
        if ranked:
            w, a = ranked[0]
            rows.append([result.class_names[c], f"{w.level:g}", f"{w.width:g}", _fmt(a)])
        else:
            rows.append([result.class_names[c], "", "", ""])
    return _csv(rows)


def recovered_table(result: ExperimentResult) -> str:
    rows = [["run", "epoch", "channel", "level", "width"]]
    for r in result.runs:
        for epoch, wins in r.recovered:
            for i, w in enumerate(wins):
                rows.append([r.name, epoch, i, repr(w.level), repr(w.width)])
    return _csv(rows)


def history_table(result: ExperimentResult) -> str:
    rows = [["run", "epoch", "val_loss", "val_mean_auc", "lr"]]
    for r in result.runs:
        for epoch, loss, auc, lr in r.val_history:
            rows.append([r.name, epoch, f"{loss:.8f}", f"{auc:.6f}", repr(lr)])
    return _csv(rows)


def summary_text(result: ExperimentResult) -> str:
    lines = [f"experiment: {result.kind}", f"seed: {result.seed}", f"dataset: {result.dataset_fingerprint}", ""]
    width = max(len(r.name) for r in result.runs)
    for r in result.runs:
        lines.append(
            f"{r.name:<{width}}  test mean AUC {r.test.mean_auc:.4f}  "
            f"(best val {r.best_val_auc:.4f} at epoch {r.best_epoch} of {r.epochs_run})  config {r.fingerprint}"
        )
        undefined = [result.class_names[i] for i in r.test.undefined_classes]
        if undefined:
            lines.append(f"{'':<{width}}  undefined AUC: {', '.join(undefined)}")
    if result.kind == "grid":
        lines.append("")
        lines.append("best window per class:")
        for c, ranked in sorted(best_windows(result, 1).items()):
            if ranked:
                w, a = ranked[0]
                lines.append(f"  {result.class_names[c]}: level {w.level:g}, width {w.width:g} (validation AUC {a:.4f})")
    return "\n".join(lines) + "\n"


def report(results: Sequence[ExperimentResult], path: str) -> List[str]:
    """Write CSVs, checkpoints, a manifest and a summary for each result.

    Files go to ``path/<kind>/``. Only deterministic quantities are written,
    so reporting the same results twice gives byte-identical files.

    Returns:
        The written file paths, in write order.
    """
    if not results:
        raise ValueError("nothing to report")
    written = []

    def put(p: str, data, binary: bool = False):
        with open(p, "wb" if binary else "w", **({} if binary else {"encoding": "utf-8", "newline": "\n"})) as f:
            f.write(data)
        written.append(p)

    for res in results:
        out = os.path.join(path, res.kind)
        os.makedirs(os.path.join(out, "runs"), exist_ok=True)
        os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
        put(os.path.join(out, "auc.csv"), auc_table(res))
        put(os.path.join(out, "history.csv"), history_table(res))
        for r in res.runs:
            put(os.path.join(out, "runs", f"{r.name}.csv"), r.test.to_csv())
            put(os.path.join(out, "checkpoints", f"{r.name}.wnck"), r.checkpoint.to_bytes(), binary=True)
        if res.kind == "grid":
            put(os.path.join(out, "best_windows.csv"), best_window_table(res))
        if res.kind == "multiwindow":
            put(os.path.join(out, "recovered_windows.csv"), recovered_table(res))
        manifest = {"kind": res.kind, "seed": str(res.seed), "dataset": res.dataset_fingerprint}
        for r in res.runs:
            manifest[f"run.{r.name}"] = r.fingerprint
        put(os.path.join(out, "manifest.txt"), "".join(f"{k}={manifest[k]}\n" for k in sorted(manifest)))
        put(os.path.join(out, "summary.txt"), summary_text(res))
    return written


def save_run_checkpoint(run: RunResult, path: str) -> None:
    save_checkpoint(path, run.checkpoint)
