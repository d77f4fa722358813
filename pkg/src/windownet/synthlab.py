"""Synthetic 12-bit images with labels planted in narrow intensity bands.

Every image starts from a smooth random field whose histogram is forced to a
fixed piecewise-linear profile: short ramps at both ends of the 12-bit range
and one flat plateau per distinct band centre, joined by ramps. A positive
label adds ``contrast_delta`` to the pixels of a random ellipse, but only where
the background lies inside that class's band. Small shifts on a plateau are
visible through a matching window and vanish once the image is quantized to
8 bits, which is the effect the experiments measure.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.stats import rankdata

from .imagepipe import ImageTensor, read_wnt, write_wnt
from .windowing import WindowParameterError, WindowSpec

logger = logging.getLogger(__name__)

MAX_12BIT = 4095
SPLITS = ("train", "val", "test")
ORACLE_MARGIN = 1.5

Band = Tuple[float, float, float]  # (center, halfwidth, contrast_delta)

# One 8-bit step measured in 12-bit units.
_STEP_8BIT = MAX_12BIT / 255.0


def snap_to_8bit_step(center: float, offset: float = 2.0) -> float:
    """Smallest integer at least ``offset`` above the 8-bit rounding boundary
    just below ``center``.

    A plateau at that value keeps its 8-bit code for any upward shift of less
    than one step minus ``offset``.
    """
    k = round(center / _STEP_8BIT)
    return float(math.ceil((k - 0.5) * _STEP_8BIT + offset))


# Four plateaus, each shared by every fourth class.
_DEFAULT_CENTERS = tuple(snap_to_8bit_step(c) for c in (1250.0, 1900.0, 2600.0, 3250.0))


def default_bands(n_classes: int = 14, halfwidth: float = 100.0, delta: float = 28.0) -> Tuple[Band, ...]:
    return tuple((_DEFAULT_CENTERS[i % len(_DEFAULT_CENTERS)], halfwidth, delta) for i in range(n_classes))


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings. ``signal_bands`` has one entry per class; ``None``
    leaves a class unplanted, so its labels are pure noise.
    """

    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    image_size: int = 64
    n_classes: int = 14
    signal_bands: Tuple[Optional[Band], ...] = field(default_factory=default_bands)
    noise_sigma: float = 0.5
    seed: int = 0
    prevalence: float = 0.3
    blob_radius: Tuple[float, float] = (40.0, 60.0)
    smoothing: float = 6.0
    plateau_fraction: float = 0.7
    end_ramp: float = 0.05

    def __post_init__(self):
        bands = tuple(None if b is None else tuple(float(v) for v in b) for b in self.signal_bands)
        object.__setattr__(self, "signal_bands", bands)
        object.__setattr__(self, "blob_radius", tuple(float(r) for r in self.blob_radius))
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 0:
                raise WindowParameterError(f"{name} must be non-negative")
        if self.image_size < 4 or self.image_size % 4:
            raise WindowParameterError(f"image_size must be a positive multiple of 4, got {self.image_size}")
        if self.n_classes < 1:
            raise WindowParameterError("n_classes must be at least 1")
        if len(bands) != self.n_classes:
            raise WindowParameterError(f"expected {self.n_classes} signal bands, got {len(bands)}")
        for i, b in enumerate(bands):
            if b is None:
                continue
            if len(b) != 3:
                raise WindowParameterError(f"band {i} must be (center, halfwidth, delta)")
            c, hw, d = b
            if not all(math.isfinite(v) for v in b):
                raise WindowParameterError(f"band {i} has non-finite entries")
            if hw <= 0 or c - hw < 0 or c + hw > MAX_12BIT:
                raise WindowParameterError(f"band {i}: {c} +- {hw} is not inside [0, {MAX_12BIT}]")
            # zero is allowed: it yields a null dataset with the same background
            if d < 0:
                raise WindowParameterError(f"band {i}: contrast_delta must be non-negative, got {d}")
        if not 0.0 < self.prevalence < 1.0:
            raise WindowParameterError("prevalence must lie strictly between 0 and 1")
        if self.noise_sigma < 0:
            raise WindowParameterError("noise_sigma must be non-negative")
        lo, hi = self.blob_radius
        if not 0 < lo <= hi:
            raise WindowParameterError("blob_radius must be an increasing pair of positive radii")
        if not 0.0 < self.plateau_fraction <= 1.0 or not 0.0 < self.end_ramp < 0.5:
            raise WindowParameterError("plateau_fraction must be in (0, 1] and end_ramp in (0, 0.5)")

    def split_size(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]

    def plateau_centers(self) -> List[float]:
        return sorted({b[0] for b in self.signal_bands if b is not None})

    def to_items(self) -> Dict[str, str]:
        items = {
            "n_train": str(self.n_train),
            "n_val": str(self.n_val),
            "n_test": str(self.n_test),
            "image_size": str(self.image_size),
            "n_classes": str(self.n_classes),
            "noise_sigma": repr(self.noise_sigma),
            "seed": str(self.seed),
            "prevalence": repr(self.prevalence),
            "blob_radius": ",".join(repr(r) for r in self.blob_radius),
            "smoothing": repr(self.smoothing),
            "plateau_fraction": repr(self.plateau_fraction),
            "end_ramp": repr(self.end_ramp),
        }
        for i, b in enumerate(self.signal_bands):
            items[f"band_{i}"] = "none" if b is None else ",".join(repr(v) for v in b)
        return items

    @classmethod
    def from_items(cls, items: Dict[str, str]) -> "SynthConfig":
        n_classes = int(items.get("n_classes", 14))
        kwargs = {"n_classes": n_classes}
        for name in ("n_train", "n_val", "n_test", "image_size", "seed"):
            if name in items:
                kwargs[name] = int(items[name])
        for name in ("noise_sigma", "prevalence", "smoothing", "plateau_fraction", "end_ramp"):
            if name in items:
                kwargs[name] = float(items[name])
        if "blob_radius" in items:
            kwargs["blob_radius"] = tuple(float(v) for v in items["blob_radius"].split(","))
        if any(f"band_{i}" in items for i in range(n_classes)):
            bands = []
            for i in range(n_classes):
                raw = items.get(f"band_{i}", "none").strip()
                bands.append(None if raw == "none" else tuple(float(v) for v in raw.split(",")))
            kwargs["signal_bands"] = tuple(bands)
        else:
            kwargs["signal_bands"] = default_bands(n_classes)
        return cls(**kwargs)


@dataclass
class SynthSample:
    image: ImageTensor
    labels: np.ndarray


@dataclass
class SynthSplit:
    """One split held as arrays: images ``(n, 1, H, W)`` and labels ``(n, C)``."""

    name: str
    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, i: int) -> SynthSample:
        return SynthSample(ImageTensor(self.images[i], 12), self.labels[i].copy())

    def __iter__(self) -> Iterator[SynthSample]:
        for i in range(len(self)):
            yield self[i]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass
class SynthDataset:
    config: SynthConfig
    splits: Dict[str, SynthSplit]

    @property
    def train(self) -> SynthSplit:
        return self.splits["train"]

    @property
    def val(self) -> SynthSplit:
        return self.splits["val"]

    @property
    def test(self) -> SynthSplit:
        return self.splits["test"]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name in SPLITS:
            h.update(self.splits[name].fingerprint().encode())
        return h.hexdigest()[:16]


def _intensity_profile(config: SynthConfig):
    """Knots of the quantile -> intensity map shared by every background."""
    centers = config.plateau_centers()
    if not centers:
        return np.array([0.0, 1.0]), np.array([0.0, float(MAX_12BIT)])
    end = config.end_ramp
    seg = (1.0 - 2.0 * end) / len(centers)
    us, vs = [0.0], [0.0]
    u = end
    for i, c in enumerate(centers):
        flat = seg * config.plateau_fraction if i < len(centers) - 1 else seg
        us += [u, u + flat]
        vs += [c, c]
        u += seg
    us.append(1.0)
    vs.append(float(MAX_12BIT))
    return np.array(us), np.array(vs)


def _sample_rng(seed: int, split: str, index: int) -> np.random.Generator:
    # every (seed, split, index) triple owns an independent stream
    return np.random.default_rng(np.random.SeedSequence([seed, SPLITS.index(split), index]))


def _render(config: SynthConfig, rng: np.random.Generator, knots):
    n = config.image_size
    labels = (rng.random(config.n_classes) < config.prevalence).astype(np.float64)
    field_ = gaussian_filter(rng.standard_normal((n, n)), config.smoothing, mode="wrap")
    quantile = (rankdata(field_, method="ordinal").reshape(n, n) - 0.5) / field_.size
    bg = np.interp(quantile, *knots)
    img = bg.copy()
    yy, xx = np.mgrid[:n, :n]
    for c in np.flatnonzero(labels):
        band = config.signal_bands[c]
        if band is None:
            continue
        center, hw, delta = band
        inside = (bg >= center - hw) & (bg <= center + hw)
        candidates = np.flatnonzero(inside.ravel())
        k = rng.choice(candidates) if candidates.size else rng.integers(n * n)
        cy, cx = divmod(int(k), n)
        ry, rx = rng.uniform(*config.blob_radius, size=2)
        theta = rng.uniform(0.0, np.pi)
        dy, dx = yy - cy, xx - cx
        a = (dx * np.cos(theta) + dy * np.sin(theta)) / rx
        b = (-dx * np.sin(theta) + dy * np.cos(theta)) / ry
        img[(a * a + b * b <= 1.0) & inside] += delta
    img += config.noise_sigma * rng.standard_normal(img.shape)
    return np.clip(np.round(img), 0, MAX_12BIT), labels


def generate_split(config: SynthConfig, split: str) -> SynthSplit:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
    count = config.split_size(split)
    n = config.image_size
    images = np.empty((count, 1, n, n))
    labels = np.empty((count, config.n_classes))
    knots = _intensity_profile(config)
    for i in range(count):
        images[i, 0], labels[i] = _render(config, _sample_rng(config.seed, split, i), knots)
    return SynthSplit(split, images, labels)


def generate(config: SynthConfig) -> SynthDataset:
    """Build all three splits; the output depends only on ``config``."""
    return SynthDataset(config, {s: generate_split(config, s) for s in SPLITS})


def oracle_best_window(config: SynthConfig, class_index: int) -> WindowSpec:
    """The window a correct search should prefer for ``class_index``: centred
    on the band and ``ORACLE_MARGIN`` times as wide.
    """
    if not 0 <= class_index < config.n_classes:
        raise IndexError(f"class index {class_index} out of range for {config.n_classes} classes")
    band = config.signal_bands[class_index]
    if band is None:
        raise WindowParameterError(f"class {class_index} has no planted band")
    center, hw, _ = band
    return WindowSpec(center, 2.0 * hw * ORACLE_MARGIN)


def matched_filter_scores(images, band: Band) -> np.ndarray:
    """Hand-built detector for one class, used to calibrate the generator.

    Counts pixels lying within half a shift of ``center + delta`` after
    clamping to the band. ``images`` are in raw 12-bit units (re-expand 8-bit
    data before calling).
    """
    center, hw, delta = band
    x = np.clip(np.asarray(images, dtype=np.float64), center - hw, center + hw)
    hit = np.abs(x - (center + delta)) <= delta / 2.0
    return hit.reshape(hit.shape[0], -1).sum(axis=1).astype(np.float64)


# --- persistence --------------------------------------------------------

LABELS_FILE = "labels.csv"
MANIFEST_FILE = "manifest.txt"


def save_dataset(dataset: SynthDataset, path: str) -> None:
    """Write one WNT1 file per image, a labels CSV per split and a manifest."""
    os.makedirs(path, exist_ok=True)
    for name in SPLITS:
        split = dataset.splits[name]
        sdir = os.path.join(path, name)
        os.makedirs(sdir, exist_ok=True)
        for i in range(len(split)):
            write_wnt(os.path.join(sdir, f"{i:05d}.wnt"), ImageTensor(split.images[i], 12))
        header = "index," + ",".join(f"class_{c}" for c in range(split.labels.shape[1]))
        rows = [header] + [f"{i}," + ",".join(str(int(v)) for v in row) for i, row in enumerate(split.labels)]
        with open(os.path.join(sdir, LABELS_FILE), "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(rows) + "\n")
    items = dataset.config.to_items()
    items["fingerprint"] = dataset.fingerprint()
    with open(os.path.join(path, MANIFEST_FILE), "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(f"{k}={items[k]}\n" for k in sorted(items)))


def read_manifest(path: str) -> Dict[str, str]:
    mpath = os.path.join(path, MANIFEST_FILE)
    if not os.path.isfile(mpath):
        raise FileNotFoundError(f"no dataset manifest at {mpath}")
    items = {}
    with open(mpath, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            k, sep, v = line.partition("=")
            if not sep:
                raise ValueError(f"{mpath}:{lineno}: expected key=value, got {line!r}")
            items[k] = v
    return items


def _read_labels(path: str, n_classes: int) -> np.ndarray:
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln]
    if not lines:
        raise ValueError(f"{path}: empty labels file")
    expected = ["index"] + [f"class_{c}" for c in range(n_classes)]
    if lines[0].split(",") != expected:
        raise ValueError(f"{path}: unexpected header {lines[0]!r}")
    labels = np.empty((len(lines) - 1, n_classes))
    for r, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != n_classes + 1 or int(cells[0]) != r:
            raise ValueError(f"{path}: malformed row {r + 2}")
        labels[r] = [float(v) for v in cells[1:]]
    return labels


def load_dataset(path: str, splits: Sequence[str] = SPLITS) -> SynthDataset:
    """Inverse of :func:`save_dataset`. The manifest fingerprint is checked
    when all three splits are loaded.
    """
    items = read_manifest(path)
    config = SynthConfig.from_items(items)
    loaded = {}
    for name in splits:
        sdir = os.path.join(path, name)
        labels = _read_labels(os.path.join(sdir, LABELS_FILE), config.n_classes)
        n = config.image_size
        images = np.empty((labels.shape[0], 1, n, n))
        for i in range(labels.shape[0]):
            img = read_wnt(os.path.join(sdir, f"{i:05d}.wnt"))
            if img.data.shape != (1, n, n):
                raise ValueError(f"{sdir}/{i:05d}.wnt has shape {img.data.shape}, expected {(1, n, n)}")
            images[i] = img.data
        loaded[name] = SynthSplit(name, images, labels)
    dataset = SynthDataset(config, loaded)
    if set(splits) == set(SPLITS) and "fingerprint" in items and dataset.fingerprint() != items["fingerprint"]:
        raise ValueError(f"{path}: data does not match the manifest fingerprint")
    return dataset


def with_sizes(config: SynthConfig, n_train: int, n_val: int, n_test: int) -> SynthConfig:
    return replace(config, n_train=n_train, n_val=n_val, n_test=n_test)
