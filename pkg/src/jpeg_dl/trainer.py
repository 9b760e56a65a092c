"""Joint training of the JPEG layer tables and a downstream classifier."""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import ClassifierParams, classifier_forward, classifier_forward_backward
from .jpeg_pipeline import SubsamplingMode, pipeline_forward, pipeline_inverse_backward
from .layer import LayerConfig, jpeg_layer_backward, jpeg_layer_forward
from .optim import OptimizerConfig
from .qtable import Q_MIN, QuantTables, apply_gradient_scaling
from .soft_quantizer import QuantizerVariant
from .tensor_data import LabeledDataset

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "epoch", "loss", "train_acc", "val_acc")
_ALPHA_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 125
    batch_size: int = 16
    seed: int = 0
    model_optimizer: OptimizerConfig = OptimizerConfig("sgd", lr=0.05, momentum=0.9)
    jpeg_optimizer: OptimizerConfig = OptimizerConfig("adam", lr=0.003)
    train_alpha: bool = False
    gradient_scaling: float | None = None
    variant: QuantizerVariant = QuantizerVariant.SOFT
    subsampling: SubsamplingMode = SubsamplingMode.S444
    masked: bool = False
    rounds: int = 1
    # False trains the classifier on raw pixels with no JPEG layer at all
    use_jpeg_layer: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.model_optimizer.lr <= 0:
            raise ValueError("model learning rate must be positive")

    def layer_config(self, training: bool = True) -> LayerConfig:
        return LayerConfig(self.variant, self.subsampling, self.masked, self.rounds, training)


@dataclass
class GradBundle:
    d_pixels: np.ndarray
    d_q_y: np.ndarray
    d_q_c: np.ndarray
    d_alpha_y: np.ndarray
    d_alpha_c: np.ndarray
    d_theta: dict[str, np.ndarray]


@dataclass
class TrainResult:
    tables: QuantTables
    params: ClassifierParams
    log: list[dict] = field(default_factory=list)


def forward_backward(
    x: np.ndarray,
    labels: np.ndarray,
    tables: QuantTables,
    params: ClassifierParams,
    cfg: LayerConfig | None = LayerConfig(),
    rng: np.random.Generator | None = None,
):
    """One pass through the unified model; returns ``(loss, logits, GradBundle)``.

    ``cfg=None`` skips the JPEG layer (table gradients are zero).
    """
    if cfg is None:
        loss, logits, d_x, d_theta = classifier_forward_backward(x, labels, params)
        zeros = np.zeros(64)
        return loss, logits, GradBundle(d_x, zeros, zeros.copy(), zeros.copy(), zeros.copy(), d_theta)
    xhat, ctx = jpeg_layer_forward(x, tables, cfg, rng)
    loss, logits, d_xhat, d_theta = classifier_forward_backward(xhat, labels, params)
    g = jpeg_layer_backward(d_xhat, ctx)
    return loss, logits, GradBundle(g.d_pixels, g.d_q_y, g.d_q_c, g.d_alpha_y, g.d_alpha_c, d_theta)


def predict(
    x: np.ndarray,
    tables: QuantTables,
    params: ClassifierParams,
    cfg: LayerConfig | None = LayerConfig(training=False),
    chunk: int = 256,
) -> np.ndarray:
    out = []
    for start in range(0, len(x), chunk):
        batch = x[start : start + chunk]
        if cfg is not None:
            batch, _ = jpeg_layer_forward(batch, tables, cfg)
        out.append(classifier_forward(batch, params).argmax(axis=1))
    return np.concatenate(out)


def evaluate(
    dataset: LabeledDataset,
    tables: QuantTables,
    params: ClassifierParams,
    masked: bool = False,
    config: TrainConfig | None = None,
) -> float:
    """Top-1 accuracy of classifier-after-JPEG-layer; read-only on its inputs."""
    config = config or TrainConfig()
    layer = None
    if config.use_jpeg_layer:
        base = config.layer_config(training=False)
        layer = LayerConfig(base.variant, base.mode, masked, base.rounds, False)
    preds = predict(dataset.images, tables, params, layer)
    return float(np.mean(preds == dataset.labels))


def _enforce_table_invariants(tables: QuantTables) -> None:
    np.maximum(tables.q_y, Q_MIN, out=tables.q_y)
    np.maximum(tables.q_c, Q_MIN, out=tables.q_c)
    np.maximum(tables.alpha_y, _ALPHA_FLOOR, out=tables.alpha_y)
    np.maximum(tables.alpha_c, _ALPHA_FLOOR, out=tables.alpha_c)
    if tables.hbar is not None:
        tables.alpha_y[:] = tables.hbar / tables.q_y**2
        tables.alpha_c[:] = tables.hbar / tables.q_c**2


def train(
    dataset: LabeledDataset,
    tables: QuantTables,
    params: ClassifierParams,
    config: TrainConfig = TrainConfig(),
    val_dataset: LabeledDataset | None = None,
) -> TrainResult:
    """Mini-batch joint optimisation; inputs are copied, never mutated.

    Each step runs layer forward, classifier forward/backward and layer
    backward, then steps the classifier and the step tables (softness
    tables too when ``train_alpha``). With gradient scaling the softness
    tables are reset to ``hbar / q**2`` before every gradient evaluation.
    One metrics row is logged per epoch.
    """
    tables = tables.copy()
    params = params.copy()
    if config.gradient_scaling is not None:
        tables = apply_gradient_scaling(tables, config.gradient_scaling)
    rng = np.random.default_rng(config.seed)
    model_opt = config.model_optimizer.build()
    jpeg_opt = config.jpeg_optimizer.build()
    layer = config.layer_config(training=True) if config.use_jpeg_layer else None
    table_params = {"q_y": tables.q_y, "q_c": tables.q_c, "alpha_y": tables.alpha_y, "alpha_c": tables.alpha_c}

    n = len(dataset)
    result = TrainResult(tables, params)
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x, y = dataset.images[idx], dataset.labels[idx]
            _enforce_table_invariants(tables)
            loss, logits, g = forward_backward(x, y, tables, params, layer, rng)
            loss_sum += loss * len(idx)
            correct += int(np.sum(logits.argmax(axis=1) == y))

            model_opt.step(params.weights, g.d_theta)
            if layer is not None:
                grads = {"q_y": g.d_q_y, "q_c": g.d_q_c}
                if config.train_alpha and tables.hbar is None:
                    grads.update(alpha_y=g.d_alpha_y, alpha_c=g.d_alpha_c)
                jpeg_opt.step(table_params, grads)
            _enforce_table_invariants(tables)
            step += 1

        val_acc = "" if val_dataset is None else evaluate(val_dataset, tables, params, config.masked, config)
        row = {"step": step, "epoch": epoch, "loss": loss_sum / n, "train_acc": correct / n, "val_acc": val_acc}
        result.log.append(row)
        log.debug("epoch %d loss %.6f acc %.4f", epoch, row["loss"], row["train_acc"])
    return result


def estimate_sensitivity(
    params: ClassifierParams,
    dataset: LabeledDataset,
    mode: SubsamplingMode | str = SubsamplingMode.S444,
    chunk: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean ``|dL/dz|`` per zigzag frequency for luma and chroma (both channels).

    Quantization is bypassed: the image is the exact decode of its own
    coefficients, so ``dL/dz`` is the decoder adjoint applied to the
    per-sample pixel gradient.
    """
    sums = [np.zeros(64), np.zeros(64)]
    counts = [0, 0]
    for start in range(0, len(dataset), chunk):
        x = dataset.images[start : start + chunk]
        y = dataset.labels[start : start + chunk]
        _, _, d_x, _ = classifier_forward_backward(x, y, params)
        d_x = d_x * len(y)  # undo the batch mean: per-sample loss gradients
        _, ctx = pipeline_forward(x, mode)
        g_z = pipeline_inverse_backward(d_x, ctx)
        sums[0] += np.abs(g_z[0]).sum(axis=(0, 2))
        sums[1] += np.abs(g_z[1]).sum(axis=(0, 2)) + np.abs(g_z[2]).sum(axis=(0, 2))
        counts[0] += g_z[0].shape[0] * g_z[0].shape[2]
        counts[1] += 2 * g_z[1].shape[0] * g_z[1].shape[2]
    return sums[0] / counts[0], sums[1] / counts[1]


# --------------------------------------------------------------------------
# Metrics log
# --------------------------------------------------------------------------


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_metrics(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for row in rows:
        writer.writerow([_cell(row[k]) for k in METRICS_HEADER])
    return buf.getvalue()


def write_metrics(rows: list[dict], path: str | os.PathLike) -> None:
    Path(path).write_text(format_metrics(rows))
