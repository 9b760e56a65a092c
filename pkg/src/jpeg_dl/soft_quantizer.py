"""Soft, probabilistic and hard scalar quantizers with analytic derivatives.

The reconstruction alphabet is ``q * {-L, ..., L}``. Given a coefficient
``z``, level ``i*q`` gets probability proportional to
``exp(-alpha * (z - i*q)**2)``; the soft quantizer is the mean of that
distribution and the probabilistic quantizer samples from it.

All functions broadcast over ``z``, ``q`` and ``alpha``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

MASK_WIDTH = 5
_MASK_OFFSETS = np.arange(MASK_WIDTH) - MASK_WIDTH // 2


def round_half_away(x):
    """Round to nearest integer, ties away from zero (``0.5 -> 1``, ``-0.5 -> -1``)."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


@dataclass(frozen=True)
class QuantizerParams:
    """Step size ``q``, softness ``alpha`` and alphabet half-width ``L``.

    ``q`` and ``alpha`` may be arrays broadcastable against the coefficients.
    """

    q: float | np.ndarray
    alpha: float | np.ndarray
    L: int

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if not np.all(q > 0):
            raise ValueError("q must be positive")
        if not np.all(alpha > 0):
            raise ValueError("alpha must be positive")
        if int(self.L) != self.L or self.L < 1:
            raise ValueError("L must be a positive integer")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "L", int(self.L))


@dataclass(frozen=True)
class Cpmf:
    """Probabilities over alphabet indices.

    ``indices`` and ``probs`` share a trailing support axis. Entries outside
    the alphabet (masked windows clipped at the edges) carry probability 0.
    ``center`` is the hard-quantized index for masked supports, else None.
    """

    indices: np.ndarray
    probs: np.ndarray
    q: np.ndarray
    center: np.ndarray | None = None

    @property
    def values(self) -> np.ndarray:
        return self.indices * self.q[..., None]

    @property
    def masked(self) -> bool:
        return self.center is not None


@dataclass(frozen=True)
class QuantGrad:
    """Partial derivatives of a quantizer output at each coefficient."""

    d_z: np.ndarray
    d_q: np.ndarray
    d_alpha: np.ndarray


# exp(-x) underflows to exactly 0.0 in float64 beyond this
_UNDERFLOW = 746.0


def _band_halfwidth(q: np.ndarray, alpha: np.ndarray, L: int) -> int | None:
    """Half-width of an index band that keeps every representable probability.

    A level ``k`` steps from the hard-quantized one sits at least
    ``(k - 1/2) q`` from ``z`` while the nearest sits within ``q/2``, so its
    softmax weight is below ``exp(-alpha q**2 (k**2 - k))``. Returns None when
    the band would not be narrower than the full alphabet.
    """
    sharp = float(np.min(alpha * q * q))
    k = int(np.ceil(np.sqrt(_UNDERFLOW / sharp))) + 1 if sharp > 0 else L + 1
    return k if 2 * k + 1 < 2 * L + 1 else None


def cpmf(z, params: QuantizerParams, masked: bool = False, band: bool = False) -> Cpmf:
    """Softmax over negative scaled squared distances to the alphabet.

    With ``masked`` the support is the five indices centred on the
    hard-quantized index, clipped to ``[-L, L]`` and renormalised.
    ``band`` trims the full support to the levels whose weight does not
    underflow, which gives the same distribution at a fraction of the cost.
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    L = params.L
    q, alpha = np.broadcast_arrays(params.q, params.alpha)
    shape = np.broadcast_shapes(z.shape, q.shape)
    z, q, alpha = (np.broadcast_to(a, shape) for a in (z, q, alpha))

    width = MASK_WIDTH // 2 if masked else (_band_halfwidth(q, alpha, L) if band else None)
    if width is not None:
        center = np.clip(round_half_away(z / q), -L, L)
        indices = center[..., None] + np.arange(-width, width + 1)
        valid = np.abs(indices) <= L
    else:
        center = None
        indices = np.broadcast_to(np.arange(-L, L + 1, dtype=np.float64), shape + (2 * L + 1,))
        valid = None

    logits = -alpha[..., None] * (z[..., None] - indices * q[..., None]) ** 2
    if valid is not None:
        logits = np.where(valid, logits, -np.inf)
    logits -= logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    probs = weights / weights.sum(axis=-1, keepdims=True)
    return Cpmf(indices, probs, q, center if masked else None)


def _moments(dist: Cpmf):
    """Mean and second/third central moments of the quantizer output."""
    values = dist.values
    mean = np.sum(dist.probs * values, axis=-1)
    dev = values - mean[..., None]
    pdev2 = dist.probs * dev * dev
    return mean, pdev2.sum(axis=-1), (pdev2 * dev).sum(axis=-1)


def quantize_soft(z, params: QuantizerParams, masked: bool = False) -> np.ndarray:
    """Soft quantizer: expected reconstruction level under the CPMF."""
    dist = cpmf(z, params, masked, band=True)
    return np.sum(dist.probs * dist.values, axis=-1)


def soft_forward_backward(z, params: QuantizerParams, masked: bool = False):
    """Soft quantizer output together with its three partial derivatives.

    With mean ``mu`` and central moments ``m2``, ``m3`` of the level ``v``:

    * ``d/dz     = 2 alpha Var(v) = 2 alpha m2``
    * ``d/dq     = (E v + 2 alpha z Var v - 2 alpha (E v^3 - E v E v^2)) / q``
      where ``E v^3 - E v E v^2 = 2 mu m2 + m3``
    * ``d/dalpha = -Cov(v, (z - v)^2) = 2 (z - mu) m2 - m3``

    The central-moment forms avoid cancellation when ``|v|`` is large.
    """
    z = np.asarray(z, dtype=np.float64)
    dist = cpmf(z, params, masked, band=True)
    mean, m2, m3 = _moments(dist)
    alpha = np.broadcast_to(params.alpha, mean.shape)
    q = dist.q
    d_z = 2.0 * alpha * m2
    d_q = (mean + 2.0 * alpha * m2 * (z - 2.0 * mean) - 2.0 * alpha * m3) / q
    d_alpha = 2.0 * (z - mean) * m2 - m3
    return mean, QuantGrad(d_z, d_q, d_alpha)


def quantize_grad(z, params: QuantizerParams, masked: bool = False) -> QuantGrad:
    return soft_forward_backward(z, params, masked)[1]


def quantize_uniform(z, params: QuantizerParams) -> np.ndarray:
    """Hard quantizer ``round(z / q) * q`` clamped to the alphabet."""
    z = np.asarray(z, dtype=np.float64)
    return np.clip(round_half_away(z / params.q), -params.L, params.L) * params.q


def quantize_stochastic(z, params: QuantizerParams, rng: np.random.Generator, masked: bool = False):
    """Draw one reconstruction level per coefficient from the CPMF."""
    dist = cpmf(z, params, masked, band=True)
    cdf = np.cumsum(dist.probs, axis=-1)
    u = rng.random(cdf.shape[:-1])[..., None]
    pick = np.minimum((cdf <= u * cdf[..., -1:]).sum(axis=-1), cdf.shape[-1] - 1)
    index = np.take_along_axis(dist.indices, pick[..., None], axis=-1)[..., 0]
    return index * dist.q


def stream_for(base_seed: int, index: int) -> np.random.Generator:
    """Independent generator for one worker or coefficient: seed ``base ^ index``."""
    return np.random.default_rng(int(base_seed) ^ int(index))


# --------------------------------------------------------------------------
# Comparison quantizers
# --------------------------------------------------------------------------


class QuantizerVariant(str, enum.Enum):
    SOFT = "soft"
    UNIFORM = "uniform"
    STRAIGHT_THROUGH = "ste"
    ADDITIVE_NOISE = "noise"
    POLYNOMIAL_ROUNDING = "poly"


def quantize_variant(
    z,
    params: QuantizerParams,
    variant: QuantizerVariant | str = QuantizerVariant.SOFT,
    rng: np.random.Generator | None = None,
    training: bool = True,
    masked: bool = False,
):
    """Forward value and local partials ``(zhat, QuantGrad)`` for any variant.

    Only ``SOFT`` has a non-zero ``d_alpha``. ``ADDITIVE_NOISE`` needs ``rng``
    while training and behaves as ``UNIFORM`` otherwise.
    """
    variant = QuantizerVariant(variant)
    z = np.asarray(z, dtype=np.float64)
    q = np.broadcast_to(params.q, np.broadcast_shapes(z.shape, np.shape(params.q)))
    L = params.L

    if variant is QuantizerVariant.ADDITIVE_NOISE and not training:
        variant = QuantizerVariant.UNIFORM

    if variant is QuantizerVariant.SOFT:
        return soft_forward_backward(z, params, masked)

    zeros = np.zeros(q.shape)
    if variant is QuantizerVariant.UNIFORM:
        index = np.clip(round_half_away(z / q), -L, L)
        return index * q, QuantGrad(zeros, index, zeros.copy())

    if variant is QuantizerVariant.ADDITIVE_NOISE:
        if rng is None:
            raise ValueError("additive noise needs a random generator")
        u = rng.uniform(-0.5, 0.5, size=q.shape)
        return z + q * u, QuantGrad(np.ones(q.shape), u, zeros)

    if variant is QuantizerVariant.POLYNOMIAL_ROUNDING:
        r = z / q
        rounded = round_half_away(r)
        resid = r - rounded
        zhat = q * (rounded + resid**3)
        d_q = rounded + resid**3 - 3.0 * r * resid**2
        return zhat, QuantGrad(3.0 * resid**2, d_q, zeros)

    if variant is QuantizerVariant.STRAIGHT_THROUGH:
        r = z / q
        index = np.clip(round_half_away(r), -L, L)
        inside = np.abs(r) <= L
        d_z = inside.astype(np.float64)
        d_q = np.where(inside, round_half_away(r) - r, np.sign(r) * L)
        return index * q, QuantGrad(d_z, d_q, zeros)

    raise ValueError(f"unknown quantizer variant {variant!r}")
