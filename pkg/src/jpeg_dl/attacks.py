"""FGSM and PGD against the unified JPEG-layer + classifier model."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .classifier import ClassifierParams
from .layer import LayerConfig
from .qtable import QuantTables
from .tensor_data import LabeledDataset
from .trainer import forward_backward, predict


class AttackMethod(str, enum.Enum):
    FGSM = "fgsm"
    PGD = "pgd"


@dataclass(frozen=True)
class AttackConfig:
    """Budgets ``epsilons`` are in 0-255 pixel units (``eps=1`` means 1/255)."""

    method: AttackMethod = AttackMethod.FGSM
    epsilons: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    steps: int = 5
    step_size: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", AttackMethod(self.method))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if any(e < 0 for e in self.epsilons):
            raise ValueError("epsilon must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")

    def step_for(self, eps: float) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * eps / self.steps


def input_gradient(x, labels, tables, params, layer: LayerConfig | None) -> np.ndarray:
    return forward_backward(x, labels, tables, params, layer)[2].d_pixels


def fgsm(x, labels, tables, params, eps: float, layer: LayerConfig | None) -> np.ndarray:
    grad = input_gradient(x, labels, tables, params, layer)
    return np.clip(x + eps * np.sign(grad), 0.0, 255.0)


def pgd(x, labels, tables, params, eps: float, steps: int, step_size: float, layer: LayerConfig | None):
    """Signed-gradient ascent projected onto the L-inf ball and the pixel range; no random start."""
    lo = np.maximum(x - eps, 0.0)
    hi = np.minimum(x + eps, 255.0)
    adv = x.copy()
    for _ in range(steps):
        grad = input_gradient(adv, labels, tables, params, layer)
        adv = np.clip(adv + step_size * np.sign(grad), lo, hi)
    return adv


def adversarial_eval(
    dataset: LabeledDataset,
    tables: QuantTables,
    params: ClassifierParams,
    attack: AttackConfig,
    layer: LayerConfig | None = LayerConfig(training=False),
) -> dict[float, float]:
    """Robust accuracy for each budget in ``attack.epsilons``.

    Gradients flow through the full-support soft quantizer of the layer.
    """
    x, y = dataset.images, dataset.labels
    out = {}
    for eps in attack.epsilons:
        if attack.method is AttackMethod.FGSM:
            adv = fgsm(x, y, tables, params, eps, layer)
        else:
            adv = pgd(x, y, tables, params, eps, attack.steps, attack.step_for(eps), layer)
        out[eps] = float(np.mean(predict(adv, tables, params, layer) == y))
    return out
