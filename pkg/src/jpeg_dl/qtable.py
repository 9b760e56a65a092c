"""Trainable quantization and softness tables for the JPEG layer."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .jpeg_pipeline import SubsamplingMode, pipeline_forward
from .tensor_data import LabeledDataset

N_FREQ = 64
Q_MIN = 1e-4
DEFAULT_ALPHA = 5.0
DEFAULT_BITS = 8
TABLE_VERSION = 1
_SENSITIVITY_FLOOR = 1e-9


def levels_for_bits(b: int) -> int:
    """Alphabet half-width ``L = 2**(b-1)``."""
    if b < 1:
        raise ValueError("bit depth must be at least 1")
    return 2 ** (b - 1)


def _table(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.shape != (N_FREQ,):
        raise ValueError(f"{name} must have {N_FREQ} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


@dataclass
class QuantTables:
    """Luma/chroma step tables and softness tables, zigzag indexed.

    ``q_c`` and ``alpha_c`` are shared by Cb and Cr. When ``hbar`` is set the
    softness tables are slaved to the steps via ``alpha = hbar / q**2``.
    """

    q_y: np.ndarray
    q_c: np.ndarray
    alpha_y: np.ndarray
    alpha_c: np.ndarray
    b: int = DEFAULT_BITS
    L: int = field(default=None)
    hbar: float | None = None

    def __post_init__(self):
        for name in ("q_y", "q_c", "alpha_y", "alpha_c"):
            setattr(self, name, _table(getattr(self, name), name))
        if self.L is None:
            self.L = levels_for_bits(self.b)
        self.b = int(self.b)
        self.L = int(self.L)
        if self.L < 1:
            raise ValueError("L must be positive")
        if np.any(self.q_y < Q_MIN) or np.any(self.q_c < Q_MIN):
            raise ValueError(f"q entries must be >= {Q_MIN}")
        if np.any(self.alpha_y <= 0) or np.any(self.alpha_c <= 0):
            raise ValueError("alpha entries must be positive")
        if self.hbar is not None and not self.hbar > 0:
            raise ValueError("hbar must be positive")

    def copy(self) -> "QuantTables":
        return replace(
            self,
            q_y=self.q_y.copy(),
            q_c=self.q_c.copy(),
            alpha_y=self.alpha_y.copy(),
            alpha_c=self.alpha_c.copy(),
        )

    def q_for(self, channel: int) -> np.ndarray:
        return self.q_y if channel == 0 else self.q_c

    def alpha_for(self, channel: int) -> np.ndarray:
        return self.alpha_y if channel == 0 else self.alpha_c

    def equals(self, other: "QuantTables") -> bool:
        """Bitwise equality of every field."""
        return (
            (self.b, self.L, self.hbar) == (other.b, other.L, other.hbar)
            and all(
                np.array_equal(getattr(self, n), getattr(other, n))
                for n in ("q_y", "q_c", "alpha_y", "alpha_c")
            )
        )


def _filled(q_y, q_c, b, alpha, L, hbar) -> QuantTables:
    q_y = np.maximum(q_y, Q_MIN)
    q_c = np.maximum(q_c, Q_MIN)
    tables = QuantTables(q_y, q_c, np.full(N_FREQ, alpha), np.full(N_FREQ, alpha), b, L, hbar)
    return apply_gradient_scaling(tables) if hbar is not None else tables


def init_ones(
    b: int = DEFAULT_BITS, alpha: float = DEFAULT_ALPHA, L: int | None = None, hbar: float | None = None
) -> QuantTables:
    """Unit step sizes everywhere (the finest practical table)."""
    return _filled(np.ones(N_FREQ), np.ones(N_FREQ), b, alpha, L, hbar)


def _magnitude_denominator(b: int, alt_denominator: bool) -> float:
    return math.sqrt(2**b - 1) if alt_denominator else math.sqrt(2 ** (b - 1))


def mean_abs_coefficients(
    dataset: LabeledDataset, mode: SubsamplingMode | str = SubsamplingMode.S444
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frequency ``sum |z| / (N * B)`` for luma and for both chroma channels summed."""
    z, _ = pipeline_forward(dataset.images, mode)
    n = len(dataset)
    luma = np.abs(z[0]).sum(axis=(0, 2)) / (n * z.block_counts[0])
    chroma = (np.abs(z[1]).sum(axis=(0, 2)) + np.abs(z[2]).sum(axis=(0, 2))) / (n * z.block_counts[1])
    return luma, chroma


def init_magnitude(
    dataset: LabeledDataset,
    b: int = DEFAULT_BITS,
    alpha: float = DEFAULT_ALPHA,
    L: int | None = None,
    hbar: float | None = None,
    mode: SubsamplingMode | str = SubsamplingMode.S444,
    alt_denominator: bool = False,
) -> QuantTables:
    """Step sizes from the mean absolute DCT coefficient of each frequency.

    Luma uses ``2 * mean|z| / sqrt(2**(b-1))``; chroma sums the Cb and Cr
    magnitudes without the factor 2. ``alt_denominator`` swaps the
    denominator for ``sqrt(2**b - 1)``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    luma, chroma = mean_abs_coefficients(dataset, mode)
    denom = _magnitude_denominator(b, alt_denominator)
    return _filled(2.0 * luma / denom, chroma / denom, b, alpha, L, hbar)


def _anchor(sensitivity: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Reciprocal sensitivity scaled so its median matches ``fallback``'s median."""
    # round-off level sensitivities count as zero
    live = sensitivity > _SENSITIVITY_FLOOR * sensitivity.max(initial=0.0)
    if not np.any(live):
        return fallback.copy()
    raw = 1.0 / sensitivity[live]
    scale = np.median(fallback) / np.median(raw)
    out = fallback.copy()
    out[live] = scale * raw
    return out


def init_sensitivity(
    params,
    dataset: LabeledDataset,
    b: int = DEFAULT_BITS,
    alpha: float = DEFAULT_ALPHA,
    L: int | None = None,
    hbar: float | None = None,
    mode: SubsamplingMode | str = SubsamplingMode.S444,
) -> QuantTables:
    """Step sizes inversely proportional to per-frequency loss sensitivity.

    Sensitivities come from :func:`jpeg_dl.trainer.estimate_sensitivity` with
    a pretrained classifier. Each channel group is anchored so the median step
    equals that of :func:`init_magnitude`; zero-sensitivity frequencies keep
    the magnitude value.
    """
    if params is None:
        raise ValueError("sensitivity initialisation needs a trained classifier")
    from .trainer import estimate_sensitivity

    base = init_magnitude(dataset, b, alpha, L, None, mode)
    s_y, s_c = estimate_sensitivity(params, dataset, mode)
    return _filled(_anchor(s_y, base.q_y), _anchor(s_c, base.q_c), b, alpha, L, hbar)


def apply_gradient_scaling(tables: QuantTables, hbar: float | None = None) -> QuantTables:
    """Return tables with ``alpha_m = hbar / q_m**2`` in both channel groups."""
    hbar = tables.hbar if hbar is None else hbar
    if hbar is None:
        raise ValueError("gradient scaling requested but hbar is not set")
    return replace(
        tables,
        q_y=tables.q_y.copy(),
        q_c=tables.q_c.copy(),
        alpha_y=hbar / tables.q_y**2,
        alpha_c=hbar / tables.q_c**2,
        hbar=hbar,
    )


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

_ARRAY_FIELDS = ("q_y", "q_c", "alpha_y", "alpha_c")


class TableFormatError(ValueError):
    pass


def _num(x: float) -> str:
    return format(float(x), ".17g")


def dumps_tables(tables: QuantTables) -> str:
    lines = [
        "{",
        f'  "version": {TABLE_VERSION},',
        f'  "b": {tables.b},',
        f'  "L": {tables.L},',
        f'  "hbar": {"null" if tables.hbar is None else _num(tables.hbar)},',
    ]
    for k, name in enumerate(_ARRAY_FIELDS):
        body = ", ".join(_num(v) for v in getattr(tables, name))
        comma = "," if k < len(_ARRAY_FIELDS) - 1 else ""
        lines.append(f'  "{name}": [{body}]{comma}')
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_tables(tables: QuantTables, path: str | os.PathLike) -> None:
    Path(path).write_text(dumps_tables(tables))


def _line_of(text: str, name: str) -> int:
    for lineno, line in enumerate(text.splitlines(), 1):
        if f'"{name}"' in line:
            return lineno
    return 0


def loads_tables(text: str) -> QuantTables:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TableFormatError(f"line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise TableFormatError("line 1: table file must hold a JSON object")
    required = ("version", "b", "L", "hbar") + _ARRAY_FIELDS
    for name in required:
        if name not in doc:
            raise TableFormatError(f"missing field '{name}'")
    if doc["version"] != TABLE_VERSION:
        raise TableFormatError(f"line {_line_of(text, 'version')}: unsupported version {doc['version']!r}")
    values = {}
    for name in _ARRAY_FIELDS:
        try:
            values[name] = _table(doc[name], name)
        except (TypeError, ValueError) as exc:
            raise TableFormatError(f"line {_line_of(text, name)}: field '{name}': {exc}") from exc
        floor = Q_MIN if name.startswith("q") else 0.0
        bad = values[name] < floor if floor else values[name] <= 0
        if np.any(bad):
            raise TableFormatError(
                f"line {_line_of(text, name)}: field '{name}' entry {int(np.argmax(bad))} "
                f"violates positivity"
            )
    try:
        return QuantTables(**values, b=doc["b"], L=doc["L"], hbar=doc["hbar"])
    except (TypeError, ValueError) as exc:
        raise TableFormatError(str(exc)) from exc


def load_tables(path: str | os.PathLike) -> QuantTables:
    return loads_tables(Path(path).read_text())
