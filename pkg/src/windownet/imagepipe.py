"""Image ingestion and the pixel transforms around the windowing layer.

Images are float64 arrays shaped ``(channels, height, width)`` tagged with the
bit depth they were acquired at. Two on-disk formats are supported: binary
PGM (``P5``) and a small raw tensor container (``WNT1``).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

SUPPORTED_BIT_DEPTHS = (8, 12, 16)
WNT_MAGIC = b"WNT1"
WNT_VERSION = 1

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ImageFormatError(IOError):
    """Raised for malformed or unsupported image files."""


@dataclass
class ImageTensor:
    data: np.ndarray
    bit_depth: int
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[None]
        if self.data.ndim != 3:
            raise ValueError(f"image data must be (C, H, W), got shape {self.data.shape}")
        if self.bit_depth not in SUPPORTED_BIT_DEPTHS:
            raise ValueError(f"bit depth must be one of {SUPPORTED_BIT_DEPTHS}, got {self.bit_depth}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @property
    def max_value(self) -> int:
        return 2**self.bit_depth - 1


@dataclass(frozen=True)
class NormalizationSpec:
    mean: Tuple[float, float, float] = IMAGENET_MEAN
    std: Tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("normalization needs three means and three stds")
        if any(s <= 0 for s in self.std):
            raise ValueError(f"std components must be positive, got {self.std}")

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(3, 1, 1)
        std = np.asarray(self.std, dtype=np.float64).reshape(3, 1, 1)
        return mean, std


def _bit_depth_for_maxval(maxval: int) -> int:
    for bits in SUPPORTED_BIT_DEPTHS:
        if maxval <= 2**bits - 1:
            return bits
    raise ImageFormatError(f"maxval {maxval} exceeds 16 bits")


def _read_pgm_token(buf: bytes, pos: int, comments: list | None = None) -> Tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            start = pos + 1
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            if comments is not None:
                comments.append(buf[start:pos].decode("latin-1").strip())
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of PGM header")
    return buf[start:pos], pos


def read_pgm(path: str) -> ImageTensor:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (magic {buf[:2]!r})")
    pos = 2
    fields = []
    comments: list = []
    try:
        for _ in range(3):
            tok, pos = _read_pgm_token(buf, pos, comments)
            fields.append(int(tok))
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header: {exc}") from None
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: invalid PGM header values {fields}")
    pos += 1  # single whitespace byte before the raster
    sample = 2 if maxval > 255 else 1
    need = width * height * sample
    have = len(buf) - pos
    if have < need:
        raise ImageFormatError(
            f"{path}: truncated pixel payload at byte offset {len(buf)} "
            f"(expected {need} bytes from offset {pos}, found {have})"
        )
    dtype = ">u2" if sample == 2 else "u1"
    pixels = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos)
    if pixels.max(initial=0) > maxval:
        raise ImageFormatError(f"{path}: pixel value exceeds maxval {maxval}")
    meta = {}
    for text in comments:
        k, sep, v = text.partition("=")
        if sep:
            meta[k.strip()] = v.strip()
    meta["maxval"] = str(maxval)
    return ImageTensor(pixels.reshape(1, height, width), _bit_depth_for_maxval(maxval), meta)


def write_pgm(path: str, img: ImageTensor, maxval: int | None = None) -> None:
    """Write a single-channel image as binary PGM with integer samples.

    ``img.meta`` entries other than ``maxval`` go into ``# key=value`` header
    comments, which :func:`read_pgm` reads back.
    """
    if img.data.shape[0] != 1:
        raise ValueError("PGM holds a single channel")
    maxval = img.max_value if maxval is None else maxval
    px = np.rint(img.data[0])
    if px.min() < 0 or px.max() > maxval:
        raise ValueError(f"pixel values outside [0, {maxval}]")
    h, w = px.shape
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as f:
        f.write(b"P5\n")
        for k in sorted(img.meta):
            if k != "maxval":
                value = str(img.meta[k]).replace("\n", " ").replace("\r", " ")
                f.write(f"# {k}={value}\n".encode("latin-1"))
        f.write(f"{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(px.astype(dtype).tobytes())


def write_wnt(path: str, img: ImageTensor) -> None:
    """Raw tensor container: magic, u32 version, u32 bit depth, u32 rank, u32 dims, f64 payload."""
    data = np.ascontiguousarray(img.data, dtype="<f8")
    header = WNT_MAGIC + struct.pack("<IIII", WNT_VERSION, img.bit_depth, data.ndim, *data.shape[:1])
    header += struct.pack(f"<{data.ndim - 1}I", *data.shape[1:])
    with open(path, "wb") as f:
        f.write(header)
        f.write(data.tobytes())


def read_wnt(path: str) -> ImageTensor:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != WNT_MAGIC:
        raise ImageFormatError(f"{path}: bad magic {buf[:4]!r}, expected {WNT_MAGIC!r}")
    if len(buf) < 16:
        raise ImageFormatError(f"{path}: truncated header at byte offset {len(buf)}")
    version, bit_depth, rank = struct.unpack_from("<III", buf, 4)
    if version != WNT_VERSION:
        raise ImageFormatError(f"{path}: unsupported container version {version}")
    if rank != 3:
        raise ImageFormatError(f"{path}: expected rank 3, got {rank}")
    hdr_end = 16 + 4 * rank
    if len(buf) < hdr_end:
        raise ImageFormatError(f"{path}: truncated header at byte offset {len(buf)}")
    dims = struct.unpack_from(f"<{rank}I", buf, 16)
    need = 8 * int(np.prod(dims))
    if len(buf) - hdr_end < need:
        raise ImageFormatError(
            f"{path}: truncated pixel payload at byte offset {len(buf)} "
            f"(expected {need} bytes from offset {hdr_end})"
        )
    data = np.frombuffer(buf, dtype="<f8", count=need // 8, offset=hdr_end).reshape(dims)
    try:
        return ImageTensor(data.astype(np.float64), bit_depth)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: {exc}") from None


def load_image(path: str) -> ImageTensor:
    """Load a PGM (``P5``) or ``WNT1`` file, dispatching on the magic bytes."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such image file: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic[:2] == b"P5":
        return read_pgm(path)
    if magic == WNT_MAGIC:
        return read_wnt(path)
    raise ImageFormatError(f"{path}: unsupported format (magic {magic!r})")


def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the edge
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def resize(img: ImageTensor, h: int, w: int, method: str = "bilinear") -> ImageTensor:
    """Resize with half-pixel-centre sampling (no corner alignment).

    ``method`` is ``"bilinear"`` (default) or ``"nearest"``.
    """
    if h < 1 or w < 1:
        raise ValueError(f"target size must be at least 1x1, got {h}x{w}")
    c, hi, wi = img.data.shape
    if (h, w) == (hi, wi):
        return ImageTensor(img.data.copy(), img.bit_depth, dict(img.meta))
    if method == "nearest":
        ys = np.minimum(((np.arange(h) + 0.5) * hi / h).astype(int), hi - 1)
        xs = np.minimum(((np.arange(w) + 0.5) * wi / w).astype(int), wi - 1)
        out = img.data[:, ys][:, :, xs]
    elif method == "bilinear":
        y0, y1, fy = _bilinear_axis(hi, h)
        x0, x1, fx = _bilinear_axis(wi, w)
        d = img.data
        top = d[:, y0][:, :, x0] * (1 - fx) + d[:, y0][:, :, x1] * fx
        bot = d[:, y1][:, :, x0] * (1 - fx) + d[:, y1][:, :, x1] * fx
        out = top * (1 - fy)[:, None] + bot * fy[:, None]
    else:
        raise ValueError(f"unknown interpolation method {method!r}")
    return ImageTensor(out, img.bit_depth, dict(img.meta))


def quantize(img: ImageTensor, target_bits: int, mode: str = "round-rescale") -> ImageTensor:
    """Reduce bit depth.

    ``round-rescale`` maps ``px -> round(px * (2**t - 1) / (2**s - 1))``;
    ``shift`` drops the low bits, ``px -> floor(px / 2**(s - t))``.
    """
    src = img.bit_depth
    if target_bits > src:
        raise ValueError(f"cannot quantize {src}-bit data up to {target_bits} bits")
    if target_bits not in SUPPORTED_BIT_DEPTHS:
        raise ValueError(f"unsupported target bit depth {target_bits}")
    if mode == "round-rescale":
        scale = (2**target_bits - 1) / (2**src - 1)
        # np.rint rounds half to even; pixel values are integers so exact .5 ties
        # only occur at equal bit depth, where the scale is 1
        out = np.floor(img.data * scale + 0.5)
    elif mode == "shift":
        out = np.floor(img.data / 2 ** (src - target_bits))
    else:
        raise ValueError(f"unknown quantization mode {mode!r}")
    return ImageTensor(out, target_bits, dict(img.meta))


def scale_to_255(img: ImageTensor, source_max: float) -> ImageTensor:
    """Multiply by ``255 / source_max``; bit depth is kept as provenance."""
    if not source_max > 0:
        raise ValueError(f"source_max must be positive, got {source_max}")
    return ImageTensor(img.data * (255.0 / source_max), img.bit_depth, dict(img.meta))


def normalize(img: ImageTensor, spec: NormalizationSpec = NormalizationSpec()) -> ImageTensor:
    """``(x / 255 - mean_c) / std_c`` per channel of a 3-channel image."""
    if img.data.shape[0] != 3:
        raise ValueError(f"normalize expects 3 channels, got {img.data.shape[0]}")
    mean, std = spec.arrays()
    return ImageTensor((img.data / 255.0 - mean) / std, img.bit_depth, dict(img.meta))


def denormalize(img: ImageTensor, spec: NormalizationSpec = NormalizationSpec()) -> ImageTensor:
    if img.data.shape[0] != 3:
        raise ValueError(f"denormalize expects 3 channels, got {img.data.shape[0]}")
    mean, std = spec.arrays()
    return ImageTensor((img.data * std + mean) * 255.0, img.bit_depth, dict(img.meta))


def to_three_channels(img: ImageTensor) -> ImageTensor:
    """Replicate a grayscale image into three identical channels."""
    if img.data.shape[0] == 3:
        return img
    if img.data.shape[0] != 1:
        raise ValueError(f"expected 1 or 3 channels, got {img.data.shape[0]}")
    return ImageTensor(np.repeat(img.data, 3, axis=0), img.bit_depth, dict(img.meta))
