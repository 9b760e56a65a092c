"""Finite-difference checks of the analytic quantizer and layer gradients.

The reference quantizer here sums the softmax over the whole alphabet
directly and shares no code with :mod:`jpeg_dl.soft_quantizer`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import classifier_forward_backward, init_classifier
from .layer import LayerConfig, jpeg_layer_backward, jpeg_layer_forward
from .qtable import QuantTables
from .soft_quantizer import QuantizerParams, quantize_grad

QUANT_RTOL = 1e-4
QUANT_ATOL = 1e-8
LAYER_RTOL = 1e-3
FD_STEP = 1e-4


def reference_soft_quantize(z: float, q: float, alpha: float, L: int, masked: bool = False) -> float:
    """Soft quantizer by direct summation, one scalar at a time."""
    if masked:
        r = z / q
        center = int(np.floor(abs(r) + 0.5)) * (1 if r >= 0 else -1)
        center = min(max(center, -L), L)
        idx = np.arange(max(center - 2, -L), min(center + 2, L) + 1)
    else:
        idx = np.arange(-L, L + 1)
    expo = -alpha * (z - idx * q) ** 2
    w = np.exp(expo - expo.max())
    return float(np.dot(w, idx * q) / w.sum())


def five_point(f, x: float, h: float) -> float:
    """Fourth-order central difference."""
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def relative_error(analytic, numeric, rtol: float, atol: float):
    """``|a - f| / max(|f|, atol / rtol)``: below ``rtol`` iff within ``rtol |f| + ...`` bounds."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(np.abs(numeric), atol / rtol)


@dataclass
class QuantCheck:
    max_rel: dict[str, float]
    worst: dict[str, tuple]
    samples: int

    def passed(self, rtol: float = QUANT_RTOL) -> bool:
        return all(v < rtol for v in self.max_rel.values())


def sample_quantizer_configs(samples: int, seed: int, levels=(3, 8, 128)):
    rng = np.random.default_rng(seed)
    L = rng.choice(np.asarray(levels), samples)
    q = rng.uniform(0.1, 10.0, samples)
    alpha = rng.uniform(0.5, 20.0, samples)
    z = rng.uniform(-1.0, 1.0, samples) * L * q
    return z, q, alpha, L


def _near_threshold(z: float, q: float, h: float) -> bool:
    # the masked window jumps where z/q crosses a half-integer
    frac = abs(z / q) % 1.0
    return abs(frac - 0.5) * q < 3 * h * max(1.0, abs(z / q))


def check_quantizer(
    samples: int = 1000, seed: int = 0, levels=(3, 8, 128), masked: bool = False, h: float = FD_STEP
) -> QuantCheck:
    """Analytic ``d_z``, ``d_q``, ``d_alpha`` against five-point differences.

    The ``q`` step is ``h / max(1, |z/q|)``: moving ``q`` by ``dq`` shifts
    the level nearest ``z`` by about ``|z/q| dq``, so this keeps the probe
    at ``h`` on the scale of ``z``.
    """
    z, q, alpha, L = sample_quantizer_configs(samples, seed, levels)
    max_rel = {"d_z": 0.0, "d_q": 0.0, "d_alpha": 0.0}
    worst = {k: () for k in max_rel}
    used = 0
    for k in range(samples):
        zk, qk, ak, Lk = float(z[k]), float(q[k]), float(alpha[k]), int(L[k])
        h_q = h / max(1.0, abs(zk / qk))
        if masked and _near_threshold(zk, qk, h):
            continue
        used += 1
        g = quantize_grad(zk, QuantizerParams(qk, ak, Lk), masked=masked)
        numeric = {
            "d_z": five_point(lambda t: reference_soft_quantize(t, qk, ak, Lk, masked), zk, h),
            "d_q": five_point(lambda t: reference_soft_quantize(zk, t, ak, Lk, masked), qk, h_q),
            "d_alpha": five_point(lambda t: reference_soft_quantize(zk, qk, t, Lk, masked), ak, h),
        }
        for name, num in numeric.items():
            err = float(relative_error(getattr(g, name), num, QUANT_RTOL, QUANT_ATOL))
            if err > max_rel[name]:
                max_rel[name] = err
                worst[name] = (zk, qk, ak, Lk)
    return QuantCheck(max_rel, worst, used)


# --------------------------------------------------------------------------
# Full layer
# --------------------------------------------------------------------------


def random_tables(rng: np.random.Generator, L: int = 128) -> QuantTables:
    """Tables with moderate softness (``alpha q^2`` in [0.5, 3]) so gradients are non-trivial."""
    q_y = rng.uniform(4.0, 20.0, 64)
    q_c = rng.uniform(4.0, 20.0, 64)
    return QuantTables(
        q_y, q_c, rng.uniform(0.5, 3.0, 64) / q_y**2, rng.uniform(0.5, 3.0, 64) / q_c**2, b=8, L=L
    )


@dataclass
class LayerCheck:
    max_rel_q: float
    max_rel_pixels: float
    configs: int

    def passed(self, rtol: float = LAYER_RTOL) -> bool:
        return self.max_rel_q < rtol and self.max_rel_pixels < rtol


def _loss(x, tables, params, labels, cfg):
    xhat, _ = jpeg_layer_forward(x, tables, cfg)
    return classifier_forward_backward(xhat, labels, params)[0]


def check_layer(configs: int = 20, seed: int = 0, pixels_per_config: int = 12, cfg: LayerConfig = LayerConfig()):
    """End-to-end ``dL/dq_m`` (all 128) and ``dL/dpixel`` against central differences.

    ``L`` is the cross-entropy of a random linear classifier applied to the
    layer output of one random 3x8x8 image.
    """
    rng = np.random.default_rng(seed)
    worst_q = worst_p = 0.0
    for _ in range(configs):
        x = rng.uniform(0.0, 255.0, (1, 3, 8, 8))
        labels = np.array([int(rng.integers(2))])
        tables = random_tables(rng)
        params = init_classifier("linear", (3, 8, 8), 2, seed=int(rng.integers(1 << 31)), scale=0.2)

        xhat, ctx = jpeg_layer_forward(x, tables, cfg)
        _, _, d_xhat, _ = classifier_forward_backward(xhat, labels, params)
        g = jpeg_layer_backward(d_xhat, ctx)
        analytic_q = np.concatenate([g.d_q_y, g.d_q_c])

        numeric_q = np.empty(128)
        for m in range(128):
            name, slot = ("q_y", m) if m < 64 else ("q_c", m - 64)
            h = FD_STEP * getattr(tables, name)[slot]

            def at(step):
                t = tables.copy()
                getattr(t, name)[slot] += step
                return _loss(x, t, params, labels, cfg)

            numeric_q[m] = (at(h) - at(-h)) / (2 * h)
        scale = np.abs(numeric_q).max()
        worst_q = max(worst_q, float(relative_error(analytic_q, numeric_q, LAYER_RTOL, 1e-6 * scale).max()))

        flat = rng.choice(x.size, pixels_per_config, replace=False)
        analytic_p = g.d_pixels.ravel()[flat]
        numeric_p = np.empty(len(flat))
        for k, idx in enumerate(flat):
            def at_pixel(step):
                xp = x.copy().ravel()
                xp[idx] += step
                return _loss(xp.reshape(x.shape), tables, params, labels, cfg)

            numeric_p[k] = (at_pixel(FD_STEP) - at_pixel(-FD_STEP)) / (2 * FD_STEP)
        scale = max(np.abs(numeric_p).max(), 1e-12)
        worst_p = max(worst_p, float(relative_error(analytic_p, numeric_p, LAYER_RTOL, 1e-6 * scale).max()))
    return LayerCheck(worst_q, worst_p, configs)
