"""Black-box classifier interface and a logistic linear reference model.

Anything with ``predict_proba(X) -> (n, 2)`` columns ``(p_normal, p_attack)``
can be explained; :class:`~idsxai.cart.CartTree` and
:class:`LinearClassifier` both qualify.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .cart import CartTree
from .errors import ArtifactMismatch, DimensionMismatch

MODEL_FORMAT = 1


@runtime_checkable
class BlackBoxModel(Protocol):
    def predict_proba(self, X) -> np.ndarray: ...


def sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(t, dtype=float)))


@dataclass(frozen=True)
class LinearClassifier:
    weights: np.ndarray
    bias: float
    learning_rate: float = 0.1
    epochs: int = 200
    seed: int = 0

    kind = "linear"

    @property
    def feature_count(self) -> int:
        return len(self.weights)

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != len(self.weights):
            raise DimensionMismatch(f"expected {len(self.weights)} features, got {X.shape[-1]}")
        p = sigmoid(self.decision_function(X))
        return np.stack([1.0 - p, p], axis=-1)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[..., 1] > 0.5).astype(np.int64)

    def to_dict(self) -> dict:
        return {"model": "linear", "format": MODEL_FORMAT, "weights": self.weights.tolist(),
                "bias": self.bias, "learning_rate": self.learning_rate, "epochs": self.epochs,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearClassifier":
        return cls(np.asarray(d["weights"], dtype=float), float(d["bias"]),
                   d.get("learning_rate", 0.1), d.get("epochs", 200), d.get("seed", 0))


def logistic_loss_grad(w, b, X, y):
    """Mean logistic loss and its gradient with respect to ``(w, b)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    t = X @ w + b
    # log(1 + e^t) - y t, written to avoid overflow
    loss = np.mean(np.logaddexp(0.0, t) - y * t)
    r = sigmoid(t) - y
    return float(loss), X.T @ r / len(y), float(r.mean())


def fit_linear(X, y, learning_rate: float = 0.1, epochs: int = 200, seed: int = 0) -> LinearClassifier:
    """Full-batch gradient descent on the mean logistic loss from zero weights.

    ``seed`` is recorded for the manifest; the procedure has no randomness.
    """
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        raise ValueError("training data is empty")
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(epochs):
        _, gw, gb = logistic_loss_grad(w, b, X, y)
        w -= learning_rate * gw
        b -= learning_rate * gb
    return LinearClassifier(w, b, learning_rate, epochs, seed)


def predict_proba(model: BlackBoxModel, x) -> np.ndarray:
    """``(p_normal, p_attack)`` for one vector, or an ``(n, 2)`` array for a matrix."""
    return np.asarray(model.predict_proba(x), dtype=float)


def predict(model: BlackBoxModel, X) -> np.ndarray:
    p = predict_proba(model, X)
    return (p[..., 1] > p[..., 0]).astype(np.int64)


def model_to_dict(model) -> dict:
    d = model.to_dict()
    d["format"] = MODEL_FORMAT
    return d


def model_from_dict(d: dict):
    if d.get("format") != MODEL_FORMAT:
        raise ArtifactMismatch(f"model format {d.get('format')!r} unsupported (expected {MODEL_FORMAT})")
    kind = d.get("model")
    if kind == "cart":
        return CartTree.from_dict(d)
    if kind == "linear":
        return LinearClassifier.from_dict(d)
    raise ArtifactMismatch(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
