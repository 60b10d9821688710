"""Bounding-box-head loss for mixed fully/partially labeled batches.

Classification is softmax cross-entropy over C foreground classes plus
background. Negatives from partially labeled images are down-weighted by
their predicted background score (an unlabeled object sitting in a
"negative" region makes that region's background score low, and its loss
contribution shrinks accordingly). The weight is a frozen constant with
respect to differentiation. Regression is smooth-L1 over five offsets
(four box coordinates plus angle), positives only.

Normalization: the classification term divides by the number of proposals
in the batch, the regression term by the number of positive proposals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

REG_DIM = 5


@dataclass(frozen=True)
class ProposalSample:
    """One region proposal in a training mini-batch.

    ``logits`` has C+1 entries, background last (index C). ``target_class``
    is C for background targets. ``background_score`` is the frozen
    down-weighting factor, present exactly for negatives from partially
    labeled images. Regression vectors are required for positives and
    ignored otherwise.
    """

    logits: tuple[float, ...]
    target_class: int
    is_positive: bool
    from_partial_image: bool
    background_score: float | None = None
    reg_pred: tuple[float, ...] | None = None
    reg_target: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.logits) < 2:
            raise ValueError("need at least one foreground class plus background")
        if not 0 <= self.target_class < len(self.logits):
            raise ValueError(f"target class {self.target_class} out of range")
        background_index = len(self.logits) - 1
        if self.is_positive and self.target_class == background_index:
            raise ValueError("positive proposal cannot target the background class")
        needs_mu = self.from_partial_image and not self.is_positive
        if needs_mu and self.background_score is None:
            raise ValueError("partial-image negative requires a background score")
        if not needs_mu and self.background_score is not None:
            raise ValueError("background score is only meaningful for partial-image negatives")
        if self.background_score is not None and not 0.0 <= self.background_score <= 1.0:
            raise ValueError(f"background score {self.background_score} outside [0, 1]")
        if self.is_positive:
            if self.reg_pred is None or self.reg_target is None:
                raise ValueError("positive proposal requires regression vectors")
            if len(self.reg_pred) != REG_DIM or len(self.reg_target) != REG_DIM:
                raise ValueError(f"regression vectors must have {REG_DIM} entries")


@dataclass(frozen=True)
class LossBreakdown:
    cls_loss: float
    reg_loss: float
    total: float
    lambda_cls: float
    lambda_reg: float
    W: int
    num_positive: int


def smooth_l1(x: float) -> float:
    """0.5*x^2 inside the unit interval, |x| - 0.5 outside."""
    ax = abs(x)
    return 0.5 * x * x if ax < 1.0 else ax - 0.5


def _smooth_l1_prime(x: float) -> float:
    # derivative is x inside, sign(x) outside: a clamp
    return min(1.0, max(-1.0, x))


def adaptive_weight(sample: ProposalSample) -> float:
    """Per-proposal classification weight.

    Positives and every proposal from a fully labeled image weigh 1; a
    negative from a partially labeled image weighs its predicted background
    score.
    """
    if sample.is_positive or not sample.from_partial_image:
        return 1.0
    return sample.background_score


def _softmax(logits: Sequence[float]) -> list[float]:
    top = max(logits)
    exps = [math.exp(z - top) for z in logits]
    denom = math.fsum(exps)
    return [e / denom for e in exps]


def _cross_entropy(logits: Sequence[float], target: int) -> float:
    top = max(logits)
    lse = top + math.log(math.fsum(math.exp(z - top) for z in logits))
    return lse - logits[target]


def bbox_loss(batch: Sequence[ProposalSample]) -> LossBreakdown:
    """Weighted cross-entropy plus smooth-L1 over one mini-batch."""
    if not batch:
        raise ValueError("empty batch")
    W = len(batch)
    num_positive = sum(1 for s in batch if s.is_positive)
    lambda_cls = 1.0 / W
    lambda_reg = 1.0 / max(1, num_positive)

    cls_terms = [adaptive_weight(s) * _cross_entropy(s.logits, s.target_class) for s in batch]
    cls_loss = math.fsum(cls_terms) / W

    reg_terms = []
    for s in batch:
        if s.is_positive:
            reg_terms.append(
                math.fsum(smooth_l1(p - t) for p, t in zip(s.reg_pred, s.reg_target))
            )
    reg_loss = math.fsum(reg_terms) / max(1, num_positive)
    return LossBreakdown(
        cls_loss=cls_loss,
        reg_loss=reg_loss,
        total=cls_loss + reg_loss,
        lambda_cls=lambda_cls,
        lambda_reg=lambda_reg,
        W=W,
        num_positive=num_positive,
    )


def bbox_loss_grad(
    batch: Sequence[ProposalSample],
) -> tuple[list[np.ndarray], list[np.ndarray | None]]:
    """Analytic gradients of :func:`bbox_loss`.

    Returns per-sample gradients with respect to the logits and (for
    positives) the regression predictions; background scores are constants.
    """
    if not batch:
        raise ValueError("empty batch")
    W = len(batch)
    num_positive = sum(1 for s in batch if s.is_positive)
    lambda_cls = 1.0 / W
    lambda_reg = 1.0 / max(1, num_positive)

    logit_grads: list[np.ndarray] = []
    reg_grads: list[np.ndarray | None] = []
    for s in batch:
        probs = _softmax(s.logits)
        grad = np.array(probs, dtype=np.float64)
        grad[s.target_class] -= 1.0
        grad *= lambda_cls * adaptive_weight(s)
        logit_grads.append(grad)
        if s.is_positive:
            diffs = [_smooth_l1_prime(p - t) for p, t in zip(s.reg_pred, s.reg_target)]
            reg_grads.append(lambda_reg * np.array(diffs, dtype=np.float64))
        else:
            reg_grads.append(None)
    return logit_grads, reg_grads


def weighted_ce_grad_matrix(
    logits: np.ndarray, targets: np.ndarray, weights: np.ndarray
) -> tuple[float, np.ndarray]:
    """Vectorized mean weighted cross-entropy and its logits gradient.

    Matrix form of the classification half of :func:`bbox_loss` /
    :func:`bbox_loss_grad` (lambda_cls = 1/W baked in), used by the
    surrogate trainer on large batches.
    """
    W = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    denom = exps.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    losses = -log_probs[np.arange(W), targets]
    mean_loss = float(np.dot(weights, losses) / W)
    grad = exps / denom
    grad[np.arange(W), targets] -= 1.0
    grad *= (weights / W)[:, None]
    return mean_loss, grad


def finite_diff_check(batch: Sequence[ProposalSample], epsilon: float) -> float:
    """Max relative error of analytic gradients vs central differences."""
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon outside sensible range [1e-7, 1e-3]")

    logit_grads, reg_grads = bbox_loss_grad(batch)
    worst = 0.0

    def total_with(sample_index: int, **fields) -> float:
        perturbed = list(batch)
        perturbed[sample_index] = replace(batch[sample_index], **fields)
        return bbox_loss(perturbed).total

    def rel_err(analytic: float, numeric: float) -> float:
        return abs(numeric - analytic) / max(abs(analytic), 1e-8)

    for i, sample in enumerate(batch):
        for k in range(len(sample.logits)):
            bumped = list(sample.logits)
            bumped[k] += epsilon
            plus = total_with(i, logits=tuple(bumped))
            bumped[k] -= 2 * epsilon
            minus = total_with(i, logits=tuple(bumped))
            numeric = (plus - minus) / (2 * epsilon)
            worst = max(worst, rel_err(float(logit_grads[i][k]), numeric))
        if sample.is_positive:
            for u in range(REG_DIM):
                bumped = list(sample.reg_pred)
                bumped[u] += epsilon
                plus = total_with(i, reg_pred=tuple(bumped))
                bumped[u] -= 2 * epsilon
                minus = total_with(i, reg_pred=tuple(bumped))
                numeric = (plus - minus) / (2 * epsilon)
                worst = max(worst, rel_err(float(reg_grads[i][u]), numeric))
    return worst
