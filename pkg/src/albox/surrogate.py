"""Linear softmax classifier standing in for detector fine-tuning.

Training is full-batch gradient descent on the weighted cross-entropy of
:mod:`albox.partial_loss` (one output per foreground class plus a
background column), so the down-weighting of background-labeled queries is
exercised exactly as in detector training. Full-batch descent with zero
initialization keeps runs bit-reproducible across strategies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .partial_loss import weighted_ce_grad_matrix


@dataclass(frozen=True)
class SurrogateConfig:
    steps: int = 300
    learning_rate: float = 0.5
    l2: float = 0.0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


@dataclass(frozen=True)
class TrainingExample:
    """One (feature, class) pair; class ``num_classes`` means background.

    ``weight`` is the classification weight: 1 for annotated objects, the
    query's background score for background-labeled negatives.
    """

    feature: tuple[float, ...]
    target_class: int
    weight: float = 1.0


@dataclass
class SurrogateModel:
    weights: np.ndarray  # (num_classes + 1, feature_dim), background last
    bias: np.ndarray  # (num_classes + 1,)
    loss_history: tuple[float, ...] = ()

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0] - 1

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights.T + self.bias


@dataclass(frozen=True)
class EvalReport:
    per_class_recall: tuple[float | None, ...]
    macro_recall: float
    confusion: np.ndarray  # (num_classes, num_classes + 1)


def init_model(num_classes: int, feature_dim: int) -> SurrogateModel:
    return SurrogateModel(
        weights=np.zeros((num_classes + 1, feature_dim)),
        bias=np.zeros(num_classes + 1),
    )


def train(
    model: SurrogateModel,
    examples: Sequence[TrainingExample],
    config: SurrogateConfig,
) -> SurrogateModel:
    """Full-batch gradient descent; returns a new model with loss history."""
    if not examples:
        raise ValueError("no training examples")
    X = np.array([e.feature for e in examples], dtype=np.float64)
    y = np.array([e.target_class for e in examples], dtype=np.intp)
    w = np.array([e.weight for e in examples], dtype=np.float64)
    if y.max() >= model.weights.shape[0]:
        raise ValueError("target class out of range for this model")

    W = model.weights.copy()
    b = model.bias.copy()
    history = []
    for _ in range(config.steps):
        logits = X @ W.T + b
        data_loss, grad = weighted_ce_grad_matrix(logits, y, w)
        history.append(data_loss + 0.5 * config.l2 * float((W * W).sum()))
        grad_W = grad.T @ X + config.l2 * W
        grad_b = grad.sum(axis=0)
        W = W - config.learning_rate * grad_W
        b = b - config.learning_rate * grad_b
    return SurrogateModel(weights=W, bias=b, loss_history=tuple(history))


def evaluate(
    model: SurrogateModel, features: np.ndarray, labels: np.ndarray
) -> EvalReport:
    """Argmax classification metrics over a held-out foreground set.

    Classes absent from the held-out set report no recall and are excluded
    from the macro average.
    """
    if len(features) == 0:
        raise ValueError("empty held-out set")
    num_classes = model.num_classes
    predicted = np.argmax(model.logits(np.asarray(features, dtype=np.float64)), axis=1)
    labels = np.asarray(labels, dtype=np.intp)
    confusion = np.zeros((num_classes, num_classes + 1), dtype=np.int64)
    for true, pred in zip(labels, predicted):
        confusion[true, pred] += 1
    recalls: list[float | None] = []
    for k in range(num_classes):
        support = confusion[k].sum()
        recalls.append(float(confusion[k, k] / support) if support else None)
    present = [r for r in recalls if r is not None]
    macro = float(np.mean(present)) if present else 0.0
    return EvalReport(
        per_class_recall=tuple(recalls), macro_recall=macro, confusion=confusion
    )
