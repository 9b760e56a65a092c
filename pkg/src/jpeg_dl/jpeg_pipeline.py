"""Fixed JPEG transforms around the quantizer and their exact adjoints.

Every stage is linear (or affine), so each forward function has a matching
``*_adjoint`` that applies the transpose of its linear part. All functions
accept arbitrary leading batch axes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LEVEL_SHIFT = 128.0
BLOCK = 8

RGB_TO_YCBCR = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
YCBCR_OFFSET = np.array([0.0, 128.0, 128.0])
# Exact inverse; rounds to the familiar 1.402 / -0.344136 / -0.714136 / 1.772.
YCBCR_TO_RGB = np.linalg.inv(RGB_TO_YCBCR)

# ZIGZAG[m] is the raster index (row * 8 + col) of zigzag slot m.
ZIGZAG = np.array(
    [
        0, 1, 8, 16, 9, 2, 3, 10,
        17, 24, 32, 25, 18, 11, 4, 5,
        12, 19, 26, 33, 40, 48, 41, 34,
        27, 20, 13, 6, 7, 14, 21, 28,
        35, 42, 49, 56, 57, 50, 43, 36,
        29, 22, 15, 23, 30, 37, 44, 51,
        58, 59, 52, 45, 38, 31, 39, 46,
        53, 60, 61, 54, 47, 55, 62, 63,
    ]
)  # fmt: skip
INVERSE_ZIGZAG = np.argsort(ZIGZAG)


def dct_matrix(n: int = BLOCK) -> np.ndarray:
    """Orthonormal DCT-II matrix ``D`` with ``D[k, i] = c_k cos((2i+1) k pi / 2n)``."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos((2 * i + 1) * k * np.pi / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] /= np.sqrt(2.0)
    return mat


DCT = dct_matrix()


class SubsamplingMode(str, enum.Enum):
    S444 = "444"
    S422 = "422"
    S420 = "420"

    @property
    def factors(self) -> tuple[int, int]:
        """Chroma (vertical, horizontal) reduction factors."""
        return {"444": (1, 1), "422": (1, 2), "420": (2, 2)}[self.value]


# --------------------------------------------------------------------------
# Color
# --------------------------------------------------------------------------


def _check_three_channels(x: np.ndarray) -> None:
    if x.ndim < 3 or x.shape[-3] != 3:
        raise ValueError(f"expected 3 channels on axis -3, got shape {x.shape}")


def _apply_color(matrix: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("ij,...jhw->...ihw", matrix, x)


def rgb_to_ycbcr(x: np.ndarray) -> np.ndarray:
    """Full-range BT.601 conversion; no clamping."""
    x = np.asarray(x, dtype=np.float64)
    _check_three_channels(x)
    return _apply_color(RGB_TO_YCBCR, x) + YCBCR_OFFSET[:, None, None]


def ycbcr_to_rgb(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_three_channels(x)
    return _apply_color(YCBCR_TO_RGB, x - YCBCR_OFFSET[:, None, None])


def rgb_to_ycbcr_adjoint(grad: np.ndarray) -> np.ndarray:
    return _apply_color(RGB_TO_YCBCR.T, grad)


def ycbcr_to_rgb_adjoint(grad: np.ndarray) -> np.ndarray:
    return _apply_color(YCBCR_TO_RGB.T, grad)


# --------------------------------------------------------------------------
# Chroma subsampling
# --------------------------------------------------------------------------


def _pool(plane: np.ndarray, fy: int, fx: int) -> np.ndarray:
    h, w = plane.shape[-2:]
    if h % fy or w % fx:
        raise ValueError(f"plane of size {h}x{w} not divisible by {fy}x{fx}")
    lead = plane.shape[:-2]
    return plane.reshape(*lead, h // fy, fy, w // fx, fx).mean(axis=(-3, -1))


def _replicate(plane: np.ndarray, fy: int, fx: int) -> np.ndarray:
    return np.repeat(np.repeat(plane, fy, axis=-2), fx, axis=-1)


def subsample(x: np.ndarray, mode: SubsamplingMode | str) -> list[np.ndarray]:
    """Split a YCbCr image into ``[Y, Cb, Cr]`` planes with mean-pooled chroma."""
    mode = SubsamplingMode(mode)
    _check_three_channels(x)
    fy, fx = mode.factors
    y, cb, cr = (x[..., c, :, :] for c in range(3))
    return [y, _pool(cb, fy, fx), _pool(cr, fy, fx)]


def upsample(planes: Sequence[np.ndarray], mode: SubsamplingMode | str) -> np.ndarray:
    """Nearest-neighbour chroma upsampling back to a stacked YCbCr image."""
    mode = SubsamplingMode(mode)
    fy, fx = mode.factors
    y, cb, cr = planes
    full = [y, _replicate(cb, fy, fx), _replicate(cr, fy, fx)]
    if full[1].shape != y.shape:
        raise ValueError("chroma planes do not match luma after upsampling")
    return np.stack(full, axis=-3)


def subsample_adjoint(planes: Sequence[np.ndarray], mode: SubsamplingMode | str) -> np.ndarray:
    """Transpose of mean pooling: spread each gradient equally over its window."""
    mode = SubsamplingMode(mode)
    fy, fx = mode.factors
    y, cb, cr = planes
    scale = 1.0 / (fy * fx)
    return np.stack([y, _replicate(cb, fy, fx) * scale, _replicate(cr, fy, fx) * scale], axis=-3)


def upsample_adjoint(grad: np.ndarray, mode: SubsamplingMode | str) -> list[np.ndarray]:
    """Transpose of nearest replication: sum gradients over each window."""
    mode = SubsamplingMode(mode)
    fy, fx = mode.factors
    y, cb, cr = (grad[..., c, :, :] for c in range(3))
    return [y, _pool(cb, fy, fx) * (fy * fx), _pool(cr, fy, fx) * (fy * fx)]


# --------------------------------------------------------------------------
# Blockwise DCT
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DctCoefficients:
    """Zigzag-ordered DCT coefficients, one array per channel.

    ``channels[l]`` has shape ``(..., 64, B_l)``: frequency slot ``m`` along
    axis -2 (``m == 0`` is DC) and raster-ordered block index along axis -1.
    ``grids[l]`` is the ``(rows, cols)`` block grid of channel ``l``.
    """

    channels: tuple[np.ndarray, ...]
    grids: tuple[tuple[int, int], ...]

    def __iter__(self):
        return iter(self.channels)

    def __len__(self) -> int:
        return len(self.channels)

    def __getitem__(self, index: int) -> np.ndarray:
        return self.channels[index]

    def map(self, fn) -> "DctCoefficients":
        return DctCoefficients(tuple(fn(l, z) for l, z in enumerate(self.channels)), self.grids)

    @property
    def block_counts(self) -> tuple[int, ...]:
        return tuple(r * c for r, c in self.grids)


def _plane_dct(plane: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = plane.shape[-2:]
    if h % BLOCK or w % BLOCK:
        raise ValueError(f"plane of size {h}x{w} is not a multiple of {BLOCK}")
    rows, cols = h // BLOCK, w // BLOCK
    lead = plane.shape[:-2]
    blocks = plane.reshape(*lead, rows, BLOCK, cols, BLOCK).swapaxes(-3, -2)
    coeffs = DCT @ blocks @ DCT.T
    flat = coeffs.reshape(*lead, rows * cols, BLOCK * BLOCK)[..., ZIGZAG]
    return np.swapaxes(flat, -1, -2), (rows, cols)


def _plane_idct(z: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    rows, cols = grid
    if z.shape[-2:] != (BLOCK * BLOCK, rows * cols):
        raise ValueError(f"coefficient shape {z.shape} does not match grid {grid}")
    lead = z.shape[:-2]
    raster = np.swapaxes(z, -1, -2)[..., INVERSE_ZIGZAG]
    coeffs = raster.reshape(*lead, rows, cols, BLOCK, BLOCK)
    blocks = DCT.T @ coeffs @ DCT
    return blocks.swapaxes(-3, -2).reshape(*lead, rows * BLOCK, cols * BLOCK)


def _as_planes(x) -> list[np.ndarray]:
    if isinstance(x, np.ndarray):
        return [x[..., c, :, :] for c in range(x.shape[-3])]
    return list(x)


def forward_dct(x, level_shift: float = LEVEL_SHIFT) -> DctCoefficients:
    """Level shift, 8x8 blocking, orthonormal DCT-II and zigzag per channel.

    ``x`` is either a ``(..., C, H, W)`` array or a sequence of planes (as
    returned by :func:`subsample`).
    """
    out = [_plane_dct(np.asarray(p, dtype=np.float64) - level_shift) for p in _as_planes(x)]
    return DctCoefficients(tuple(z for z, _ in out), tuple(g for _, g in out))


def inverse_dct_planes(z: DctCoefficients, level_shift: float = LEVEL_SHIFT) -> list[np.ndarray]:
    return [_plane_idct(c, g) + level_shift for c, g in zip(z.channels, z.grids)]


def inverse_dct(z: DctCoefficients, level_shift: float = LEVEL_SHIFT) -> np.ndarray:
    """Inverse zigzag, orthonormal IDCT, block merge and level shift.

    Channels must share a grid; use :func:`inverse_dct_planes` for
    subsampled chroma.
    """
    return np.stack(inverse_dct_planes(z, level_shift), axis=-3)


def forward_dct_adjoint(grad: DctCoefficients) -> list[np.ndarray]:
    """Transpose of the linear part of :func:`forward_dct` (an orthogonal map)."""
    return inverse_dct_planes(grad, level_shift=0.0)


def inverse_dct_adjoint(grad_planes) -> DctCoefficients:
    """Transpose of the linear part of :func:`inverse_dct`."""
    return forward_dct(grad_planes, level_shift=0.0)


# --------------------------------------------------------------------------
# Composite encoder / decoder
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineContext:
    mode: SubsamplingMode
    grids: tuple[tuple[int, int], ...]


def pipeline_forward(x: np.ndarray, mode: SubsamplingMode | str = SubsamplingMode.S444):
    """RGB image -> DCT coefficients; returns ``(coeffs, context)``."""
    mode = SubsamplingMode(mode)
    z = forward_dct(subsample(rgb_to_ycbcr(x), mode))
    return z, PipelineContext(mode, z.grids)


def pipeline_inverse(z: DctCoefficients, mode: SubsamplingMode | str = SubsamplingMode.S444):
    """DCT coefficients -> RGB image (no clamping)."""
    return ycbcr_to_rgb(upsample(inverse_dct_planes(z), mode))


def pipeline_backward(grad_z: DctCoefficients, ctx: PipelineContext) -> np.ndarray:
    """Gradient w.r.t. input pixels given the gradient w.r.t. ``pipeline_forward``'s output."""
    if tuple(grad_z.grids) != tuple(ctx.grids):
        raise ValueError("gradient grid does not match the forward context")
    return rgb_to_ycbcr_adjoint(subsample_adjoint(forward_dct_adjoint(grad_z), ctx.mode))


def pipeline_inverse_backward(grad_x: np.ndarray, ctx: PipelineContext) -> DctCoefficients:
    """Gradient w.r.t. coefficients given the gradient w.r.t. ``pipeline_inverse``'s output."""
    return inverse_dct_adjoint(upsample_adjoint(ycbcr_to_rgb_adjoint(grad_x), ctx.mode))
