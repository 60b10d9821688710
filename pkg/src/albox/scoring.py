"""Candidate scoring: image-level uncertainty times object-level entropy.

An image's uncertainty is one minus the mean top-class confidence over its
confident detections (those whose top foreground probability strictly
exceeds the threshold). Each detection's own score is the Shannon entropy
(natural log) of its foreground class distribution, renormalized to sum to
one; the background score never enters here, it is reserved for the
partial-label loss weighting. The final per-candidate score is the product
of the two terms, so ranking within one image follows entropy alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .datamodel import ImageStatus, PoolState, Prediction
from .errors import DegenerateProbabilityError


@dataclass(frozen=True)
class ScoringConfig:
    """Threshold for the confident set, plus the empty-set fallback.

    An image with no confident detection has an undefined mean confidence;
    it is treated as maximally uncertain (value 1.0) by default.
    """

    theta: float = 0.10
    empty_confident_set_value: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.theta) and 0.0 < self.theta < 1.0):
            raise ValueError(f"theta must be in (0, 1), got {self.theta!r}")


@dataclass(frozen=True)
class ScoredPrediction:
    image_id: int
    pred_id: int
    argmax_class: int
    phi_image: float
    phi_object: float
    phi: float


def confident_set(preds_of_image: Sequence[Prediction], theta: float) -> list[int]:
    """Indices of predictions whose top foreground probability exceeds theta.

    The comparison is strict: a detection sitting exactly at the threshold
    is excluded.
    """
    return [j for j, p in enumerate(preds_of_image) if max(p.class_probs) > theta]


def image_uncertainty(preds_of_image: Sequence[Prediction], config: ScoringConfig) -> float:
    """One minus the mean top-class confidence over the confident set."""
    confident = confident_set(preds_of_image, config.theta)
    if not confident:
        return config.empty_confident_set_value
    mean_conf = math.fsum(max(preds_of_image[j].class_probs) for j in confident) / len(confident)
    return 1.0 - mean_conf


def object_entropy(class_probs: Sequence[float]) -> float:
    """Shannon entropy (nats) of the renormalized foreground distribution."""
    total = math.fsum(class_probs)
    if total <= 0.0:
        raise DegenerateProbabilityError("class probabilities have no mass")
    entropy = 0.0
    for p in class_probs:
        q = p / total
        if q > 0.0:
            entropy -= q * math.log(q)
    return entropy


def _argmax(values: Sequence[float]) -> int:
    best, best_idx = values[0], 0
    for i in range(1, len(values)):
        if values[i] > best:  # strict: ties keep the lowest index
            best, best_idx = values[i], i
    return best_idx


def score_predictions(
    preds_by_image: Mapping[int, Sequence[Prediction]],
    config: ScoringConfig,
    *,
    image_uncertainty_override: float | None = None,
) -> list[ScoredPrediction]:
    """Score every candidate, canonically ordered by (image_id, pred_id).

    ``image_uncertainty_override`` pins the image term to a constant (used
    by the budget-only ablation, which scores by entropy alone).
    """
    scored = []
    for image_id in sorted(preds_by_image):
        preds = preds_by_image[image_id]
        if not preds:
            continue
        if image_uncertainty_override is None:
            phi_image = image_uncertainty(preds, config)
        else:
            phi_image = image_uncertainty_override
        for p in preds:
            phi_object = object_entropy(p.class_probs)
            scored.append(
                ScoredPrediction(
                    image_id=image_id,
                    pred_id=p.pred_id,
                    argmax_class=_argmax(p.class_probs),
                    phi_image=phi_image,
                    phi_object=phi_object,
                    phi=phi_image * phi_object,
                )
            )
    scored.sort(key=lambda s: (s.image_id, s.pred_id))
    return scored


def score_pool(pool: PoolState, config: ScoringConfig, **kwargs) -> list[ScoredPrediction]:
    """Score all predictions on images still open to queries."""
    preds_by_image = {
        image_id: pool.images[image_id].predictions
        for image_id in pool.queryable_image_ids()
        if pool.images[image_id].status != ImageStatus.FULLY_LABELED
    }
    return score_predictions(preds_by_image, config, **kwargs)
