"""The differentiable JPEG layer: encode, quantize per coefficient, decode."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jpeg_pipeline import (
    DctCoefficients,
    PipelineContext,
    SubsamplingMode,
    pipeline_backward,
    pipeline_forward,
    pipeline_inverse,
    pipeline_inverse_backward,
)
from .qtable import QuantTables
from .soft_quantizer import QuantizerParams, QuantizerVariant, quantize_variant


@dataclass(frozen=True)
class LayerConfig:
    variant: QuantizerVariant = QuantizerVariant.SOFT
    mode: SubsamplingMode = SubsamplingMode.S444
    masked: bool = False
    # >1 re-applies the quantizer to its own output that many times
    rounds: int = 1
    training: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", QuantizerVariant(self.variant))
        object.__setattr__(self, "mode", SubsamplingMode(self.mode))
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")


@dataclass
class LayerContext:
    """Per-coefficient chain derivatives cached by the forward pass."""

    pipe: PipelineContext
    d_z: list[np.ndarray]
    d_q: list[np.ndarray]
    d_alpha: list[np.ndarray]
    shape: tuple[int, ...]


@dataclass
class LayerGrads:
    d_pixels: np.ndarray
    d_q_y: np.ndarray
    d_q_c: np.ndarray
    d_alpha_y: np.ndarray
    d_alpha_c: np.ndarray


def quantize_coefficients(
    z: DctCoefficients, tables: QuantTables, cfg: LayerConfig, rng: np.random.Generator | None = None
):
    """Quantize every channel with its table; returns ``(zhat, d_z, d_q, d_alpha)`` lists."""
    zhat, d_z, d_q, d_alpha = [], [], [], []
    for l, coeffs in enumerate(z):
        params = QuantizerParams(tables.q_for(l)[:, None], tables.alpha_for(l)[:, None], tables.L)
        cur = coeffs
        chain_z = np.ones_like(coeffs)
        chain_q = np.zeros_like(coeffs)
        chain_a = np.zeros_like(coeffs)
        for _ in range(cfg.rounds):
            cur, g = quantize_variant(cur, params, cfg.variant, rng, cfg.training, cfg.masked)
            # d(out)/dq picks up the direct term plus the propagated one
            chain_q = g.d_q + g.d_z * chain_q
            chain_a = g.d_alpha + g.d_z * chain_a
            chain_z = g.d_z * chain_z
        zhat.append(cur)
        d_z.append(chain_z)
        d_q.append(chain_q)
        d_alpha.append(chain_a)
    return DctCoefficients(tuple(zhat), z.grids), d_z, d_q, d_alpha


def jpeg_layer_forward(
    x: np.ndarray,
    tables: QuantTables,
    cfg: LayerConfig = LayerConfig(),
    rng: np.random.Generator | None = None,
):
    """``x -> x_hat`` for a ``(..., 3, H, W)`` image batch; returns ``(x_hat, ctx)``."""
    x = np.asarray(x, dtype=np.float64)
    z, pipe = pipeline_forward(x, cfg.mode)
    zhat, d_z, d_q, d_alpha = quantize_coefficients(z, tables, cfg, rng)
    xhat = pipeline_inverse(zhat, cfg.mode)
    return xhat, LayerContext(pipe, d_z, d_q, d_alpha, x.shape)


def _table_sum(grad: np.ndarray) -> np.ndarray:
    # everything except the frequency axis (-2) is shared
    axes = tuple(a for a in range(grad.ndim) if a != grad.ndim - 2)
    return grad.sum(axis=axes)


def jpeg_layer_backward(upstream: np.ndarray, ctx: LayerContext) -> LayerGrads:
    """Pull ``dL/dx_hat`` back to pixels, step tables and softness tables."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != ctx.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match forward {ctx.shape}")
    g_zhat = pipeline_inverse_backward(upstream, ctx.pipe)
    g_z = g_zhat.map(lambda l, g: g * ctx.d_z[l])
    d_pixels = pipeline_backward(g_z, ctx.pipe)
    per_q = [_table_sum(g * d) for g, d in zip(g_zhat, ctx.d_q)]
    per_a = [_table_sum(g * d) for g, d in zip(g_zhat, ctx.d_alpha)]
    return LayerGrads(d_pixels, per_q[0], per_q[1] + per_q[2], per_a[0], per_a[1] + per_a[2])
