"""Small numpy classifiers with exact gradients."""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class Architecture(str, enum.Enum):
    LINEAR = "linear"
    ONE_HIDDEN_RELU = "mlp"


@dataclass
class ClassifierParams:
    arch: Architecture
    input_dim: int
    num_classes: int
    weights: dict[str, np.ndarray]
    hidden: int = 0

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            self.arch, self.input_dim, self.num_classes,
            {k: v.copy() for k, v in self.weights.items()}, self.hidden,
        )  # fmt: skip

    def equals(self, other: "ClassifierParams") -> bool:
        return (
            self.arch == other.arch
            and self.weights.keys() == other.weights.keys()
            and all(np.array_equal(v, other.weights[k]) for k, v in self.weights.items())
        )


def init_classifier(
    arch: Architecture | str,
    input_shape,
    num_classes: int,
    hidden: int = 32,
    seed: int = 0,
    scale: float = 0.01,
) -> ClassifierParams:
    """Gaussian weights of standard deviation ``scale``, zero biases."""
    arch = Architecture(arch)
    dim = int(np.prod(input_shape))
    rng = np.random.default_rng(seed)
    if arch is Architecture.LINEAR:
        weights = {"W": rng.normal(0, scale, (dim, num_classes)), "b": np.zeros(num_classes)}
        hidden = 0
    else:
        weights = {
            "W1": rng.normal(0, scale, (dim, hidden)),
            "b1": np.zeros(hidden),
            "W2": rng.normal(0, scale, (hidden, num_classes)),
            "b2": np.zeros(num_classes),
        }
    return ClassifierParams(arch, dim, num_classes, weights, hidden)


def _flatten(x: np.ndarray, params: ClassifierParams) -> np.ndarray:
    flat = np.asarray(x, dtype=np.float64).reshape(x.shape[0], -1) / 255.0
    if flat.shape[1] != params.input_dim:
        raise ValueError(f"input has {flat.shape[1]} features, model expects {params.input_dim}")
    return flat


def classifier_forward(x: np.ndarray, params: ClassifierParams) -> np.ndarray:
    feats = _flatten(x, params)
    w = params.weights
    if params.arch is Architecture.LINEAR:
        return feats @ w["W"] + w["b"]
    hidden = np.maximum(feats @ w["W1"] + w["b1"], 0.0)
    return hidden @ w["W2"] + w["b2"]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    top = logits.argmax(axis=1)
    shifted = logits - logits[np.arange(len(logits)), top][:, None]
    rest = np.exp(shifted)
    rest[np.arange(len(logits)), top] = 0.0
    # log1p keeps small losses accurate when one class dominates
    return shifted - np.log1p(rest.sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(-_log_softmax(logits)[np.arange(len(labels)), labels].mean())


def classifier_forward_backward(x: np.ndarray, labels, params: ClassifierParams):
    """Mean softmax cross-entropy and its gradients.

    Returns ``(loss, logits, d_x, d_theta)`` where ``d_x`` is w.r.t. the
    un-normalised 0-255 input and ``d_theta`` mirrors ``params.weights``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= params.num_classes:
        raise ValueError(f"labels must lie in [0, {params.num_classes})")
    n = len(labels)
    feats = _flatten(x, params)
    w = params.weights
    if params.arch is Architecture.LINEAR:
        logits = feats @ w["W"] + w["b"]
    else:
        pre = feats @ w["W1"] + w["b1"]
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ w["W2"] + w["b2"]

    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())
    d_logits = np.exp(logp)
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n

    if params.arch is Architecture.LINEAR:
        d_theta = {"W": feats.T @ d_logits, "b": d_logits.sum(axis=0)}
        d_feats = d_logits @ w["W"].T
    else:
        d_hidden = d_logits @ w["W2"].T
        d_pre = d_hidden * (pre > 0)
        d_theta = {
            "W1": feats.T @ d_pre,
            "b1": d_pre.sum(axis=0),
            "W2": hidden.T @ d_logits,
            "b2": d_logits.sum(axis=0),
        }
        d_feats = d_pre @ w["W1"].T
    d_x = (d_feats / 255.0).reshape(np.shape(x))
    return loss, logits, d_x, d_theta


def save_classifier(params: ClassifierParams, path: str | os.PathLike) -> None:
    doc = {
        "arch": params.arch.value,
        "input_dim": params.input_dim,
        "num_classes": params.num_classes,
        "hidden": params.hidden,
        "weights": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in params.weights.items()},
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_classifier(path: str | os.PathLike) -> ClassifierParams:
    doc = json.loads(Path(path).read_text())
    weights = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["weights"].items()}
    return ClassifierParams(
        Architecture(doc["arch"]), doc["input_dim"], doc["num_classes"], weights, doc.get("hidden", 0)
    )
