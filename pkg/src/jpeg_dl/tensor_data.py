"""Image containers, file ingestion and the synthetic dataset.

Images are plain ``numpy`` arrays of shape ``(C, H, W)`` (or ``(N, C, H, W)``
for batches) holding floats in the pixel domain [0, 255].
"""

from __future__ import annotations

import csv
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RAW_MAGIC = b"JDLT"
RAW_VERSION = 1
_RAW_HEADER = struct.Struct("<4sIIII")
# Guards against absurd headers before allocating.
_RAW_MAX_ELEMENTS = 1 << 30


class FormatError(ValueError):
    """Raised when an image or tensor file cannot be parsed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class LabeledDataset:
    """A stack of equally shaped images with integer class labels."""

    images: np.ndarray  # (N, C, H, W)
    labels: np.ndarray  # (N,)
    num_classes: int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4 or images.shape[0] == 0:
            raise ValueError("images must be a non-empty (N, C, H, W) stack")
        if labels.shape != (images.shape[0],):
            raise ValueError("need exactly one label per image")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "images", _frozen(images.copy()))
        object.__setattr__(self, "labels", _frozen(labels.copy()))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[indices], self.labels[indices], self.num_classes)


# --------------------------------------------------------------------------
# PPM
# --------------------------------------------------------------------------

_PPM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_ppm_header(data: bytes) -> tuple[list[int], int]:
    if not data.startswith(b"P6"):
        raise FormatError("not a binary PPM: expected magic 'P6'", 0)
    pos = 2
    values = []
    for field in ("width", "height", "maxval"):
        match = _PPM_TOKEN.match(data, pos)
        if match is None:
            raise FormatError(f"missing PPM {field}", pos)
        token = match.group(1)
        if not token.isdigit():
            raise FormatError(f"PPM {field} is not a number: {token!r}", match.start(1))
        values.append(int(token))
        pos = match.end(1)
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise FormatError("missing whitespace after PPM header", pos)
    return values, pos + 1


def load_ppm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary ``P6`` PPM with maxval 255 into a ``(3, H, W)`` float array."""
    data = Path(path).read_bytes()
    (width, height, maxval), start = _read_ppm_header(data)
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}, expected 255", start - 1)
    if width < 1 or height < 1:
        raise FormatError("PPM dimensions must be positive", start - 1)
    expected = width * height * 3
    payload = data[start : start + expected]
    if len(payload) < expected:
        raise FormatError(
            f"truncated PPM payload: expected {expected} bytes, found {len(payload)}",
            start + len(payload),
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64)


def save_ppm(image: np.ndarray, path: str | os.PathLike) -> None:
    """Write a ``(3, H, W)`` image as binary PPM, rounding and clipping to bytes."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError("PPM output needs a (3, H, W) image")
    _, height, width = image.shape
    pixels = np.clip(np.rint(image), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


# --------------------------------------------------------------------------
# Raw tensor format
# --------------------------------------------------------------------------


def save_raw(tensor: np.ndarray, path: str | os.PathLike) -> None:
    """Write a ``(C, H, W)`` tensor in the ``JDLT`` raw format (f32 payload)."""
    tensor = np.asarray(tensor)
    if tensor.ndim != 3:
        raise ValueError("raw format stores (C, H, W) tensors")
    channels, height, width = tensor.shape
    header = _RAW_HEADER.pack(RAW_MAGIC, RAW_VERSION, channels, height, width)
    payload = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_raw(path: str | os.PathLike) -> np.ndarray:
    """Read a ``JDLT`` raw tensor file.

    Values are widened to float64; the round trip is exact for any tensor
    whose entries are representable in float32.
    """
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != RAW_MAGIC:
        raise FormatError("bad magic: expected b'JDLT'", 0)
    if len(data) < _RAW_HEADER.size:
        raise FormatError("truncated raw header", len(data))
    _, version, channels, height, width = _RAW_HEADER.unpack_from(data)
    if version != RAW_VERSION:
        raise FormatError(f"unsupported raw version {version}", 4)
    count = channels * height * width
    if count > _RAW_MAX_ELEMENTS:
        raise FormatError(f"dimension overflow: {channels}x{height}x{width}", 8)
    expected = _RAW_HEADER.size + 4 * count
    if len(data) != expected:
        raise FormatError(
            f"raw payload size mismatch: expected {expected} bytes, found {len(data)}",
            min(len(data), expected),
        )
    values = np.frombuffer(data, dtype="<f4", offset=_RAW_HEADER.size)
    return values.reshape(channels, height, width).astype(np.float64)


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Dispatch on file extension: ``.ppm`` or ``.jdlt``/``.raw``."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ppm":
        return load_ppm(path)
    if suffix in (".jdlt", ".raw"):
        return load_raw(path)
    raise FormatError(f"unrecognised image extension {suffix!r}")


# --------------------------------------------------------------------------
# Geometry
# --------------------------------------------------------------------------


def pad_to_block_multiple(tensor: np.ndarray, block: int = 8) -> np.ndarray:
    """Edge-replicate the last two axes up to the next multiple of ``block``."""
    tensor = np.asarray(tensor)
    height, width = tensor.shape[-2:]
    pad_h = -height % block
    pad_w = -width % block
    if pad_h == 0 and pad_w == 0:
        return tensor
    widths = [(0, 0)] * (tensor.ndim - 2) + [(0, pad_h), (0, pad_w)]
    return np.pad(tensor, widths, mode="edge")


# --------------------------------------------------------------------------
# Datasets
# --------------------------------------------------------------------------

SYNTHETIC_AMPLITUDE = 40.0
SYNTHETIC_NOISE = 8.0


def make_synthetic_frequency_dataset(
    n_per_class: int, size: int, seed: int, noise: float = SYNTHETIC_NOISE
) -> LabeledDataset:
    """Two-class RGB images separated by a low-frequency luminance pattern.

    Class 0 carries a horizontal half-cosine that lines up with the first
    horizontal DCT basis of every 8x8 block; class 1 carries the same wave
    shifted by four pixels, which is orthogonal to that basis. Both get
    i.i.d. uniform pixel noise of amplitude ``noise`` and a random contrast
    in [0.6, 1]. Pixels are rounded to integers and clipped to [0, 255] so
    the images survive a PPM round trip.
    """
    if size <= 0 or size % 8:
        raise ValueError(f"size must be a positive multiple of 8, got {size}")
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    rng = np.random.default_rng(seed)
    cols = np.arange(size)
    waves = [
        np.cos((2 * cols + 1) * np.pi / 16),
        np.cos((2 * (cols + 4) + 1) * np.pi / 16),
    ]
    images, labels = [], []
    for label, wave in enumerate(waves):
        for _ in range(n_per_class):
            contrast = rng.uniform(0.6, 1.0) * SYNTHETIC_AMPLITUDE
            luma = 128.0 + contrast * np.broadcast_to(wave, (size, size))
            jitter = rng.uniform(-noise, noise, size=(3, size, size))
            images.append(np.clip(np.rint(luma + jitter), 0, 255))
            labels.append(label)
    order = rng.permutation(len(labels))
    return LabeledDataset(np.stack(images)[order], np.asarray(labels)[order], 2)


LABELS_FILE = "labels.csv"


def save_dataset(dataset: LabeledDataset, directory: str | os.PathLike, fmt: str = "ppm") -> None:
    """Write images plus a ``labels.csv`` index (``file,label``) into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    suffix = {"ppm": ".ppm", "raw": ".jdlt"}[fmt]
    rows = []
    for k, (image, label) in enumerate(zip(dataset.images, dataset.labels)):
        name = f"img{k:05d}{suffix}"
        if fmt == "ppm":
            save_ppm(image, directory / name)
        else:
            save_raw(image, directory / name)
        rows.append((name, int(label)))
    with open(directory / LABELS_FILE, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["file", "label"])
        writer.writerows(rows)


def load_dataset(directory: str | os.PathLike, num_classes: int | None = None) -> LabeledDataset:
    """Load a directory written by :func:`save_dataset`, padding images to 8x8 blocks."""
    directory = Path(directory)
    index = directory / LABELS_FILE
    if not index.exists():
        raise FileNotFoundError(f"{index} not found")
    images, labels = [], []
    with open(index, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"file", "label"} - set(reader.fieldnames):
            raise FormatError(f"{index}: header must contain 'file' and 'label'")
        for row in reader:
            images.append(pad_to_block_multiple(load_image(directory / row["file"])))
            labels.append(int(row["label"]))
    if not images:
        raise FormatError(f"{index}: dataset is empty")
    if len({im.shape for im in images}) != 1:
        raise FormatError(f"{directory}: images differ in shape")
    if num_classes is None:
        num_classes = max(labels) + 1
    return LabeledDataset(np.stack(images), np.asarray(labels), num_classes)
