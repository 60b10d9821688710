"""Image-level comparison strategies at matched annotation cost.

All three baselines label whole images. Cost is charged per ground-truth
object, so selection walks a ranked image list and keeps taking images
while the cumulative object count is below the budget; the image that
crosses the budget is still taken and the overshoot is reported rather
than truncated (partially labeling an image would change the baseline's
definition).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datamodel import ImageStatus, PoolState
from .scoring import object_entropy


@dataclass(frozen=True)
class ImageFeature:
    image_id: int
    vector: tuple[float, ...]


@dataclass(frozen=True)
class ImageSelection:
    image_ids: tuple[int, ...]
    charged: int
    overshoot: int


def take_until_budget(
    ordered_ids: Sequence[int], object_counts: Mapping[int, int], object_budget: int
) -> ImageSelection:
    """Apply the cumulative object-count budget rule to a ranked image list."""
    selected = []
    charged = 0
    for image_id in ordered_ids:
        if charged >= object_budget:
            break
        selected.append(image_id)
        charged += object_counts.get(image_id, 0)
    return ImageSelection(
        image_ids=tuple(selected),
        charged=charged,
        overshoot=max(0, charged - object_budget),
    )


def random_images(
    pool: PoolState,
    object_counts: Mapping[int, int],
    object_budget: int,
    rng: np.random.Generator,
) -> ImageSelection:
    """Uniformly shuffled unlabeled images under the object budget."""
    candidates = pool.image_ids(ImageStatus.UNLABELED)
    order = [candidates[i] for i in rng.permutation(len(candidates))]
    return take_until_budget(order, object_counts, object_budget)


def entropy_images(
    pool: PoolState,
    object_counts: Mapping[int, int],
    object_budget: int,
) -> ImageSelection:
    """Images ranked by mean prediction entropy, descending.

    An image with no predictions scores zero and sorts last; ties break on
    the lower image id.
    """
    scores = []
    for image_id in pool.image_ids(ImageStatus.UNLABELED):
        preds = pool.images[image_id].predictions
        if preds:
            score = math.fsum(object_entropy(p.class_probs) for p in preds) / len(preds)
        else:
            score = 0.0
        scores.append((-score, image_id))
    order = [image_id for _, image_id in sorted(scores)]
    return take_until_budget(order, object_counts, object_budget)


def coreset_order(
    labeled_features: Sequence[ImageFeature],
    unlabeled_features: Sequence[ImageFeature],
    limit: int,
) -> list[int]:
    """k-center greedy ranking of up to ``limit`` unlabeled images.

    Each step picks the unlabeled point farthest (Euclidean) from the
    nearest already-covered point; ties go to the lower image id. With no
    labeled points every distance starts infinite, so the first pick is the
    lowest image id.
    """
    if limit <= 0 or not unlabeled_features:
        return []
    candidates = sorted(unlabeled_features, key=lambda f: f.image_id)
    dims = {len(f.vector) for f in list(labeled_features) + candidates}
    if len(dims) > 1:
        raise ValueError(f"inconsistent feature dimensions: {sorted(dims)}")
    points = np.array([f.vector for f in candidates], dtype=np.float64)
    ids = [f.image_id for f in candidates]
    if labeled_features:
        labeled = np.array([f.vector for f in labeled_features], dtype=np.float64)
        dists = np.sqrt(((points[:, None, :] - labeled[None, :, :]) ** 2).sum(axis=2))
        min_dist = dists.min(axis=1)
    else:
        min_dist = np.full(len(candidates), np.inf)
    chosen: list[int] = []
    taken = np.zeros(len(candidates), dtype=bool)
    for _ in range(min(limit, len(candidates))):
        masked = np.where(taken, -np.inf, min_dist)
        pick = int(np.argmax(masked))  # argmax takes the first (lowest id) on ties
        chosen.append(ids[pick])
        taken[pick] = True
        new_dists = np.sqrt(((points - points[pick]) ** 2).sum(axis=1))
        min_dist = np.minimum(min_dist, new_dists)
    return chosen


def coreset_greedy(
    labeled_features: Sequence[ImageFeature],
    unlabeled_features: Sequence[ImageFeature],
    k: int,
) -> list[int]:
    """First k image ids of the k-center greedy ranking."""
    return coreset_order(labeled_features, unlabeled_features, k)


def coreset_images(
    labeled_features: Sequence[ImageFeature],
    unlabeled_features: Sequence[ImageFeature],
    object_counts: Mapping[int, int],
    object_budget: int,
) -> ImageSelection:
    """k-center greedy ranking under the object budget rule."""
    order = coreset_order(labeled_features, unlabeled_features, len(unlabeled_features))
    return take_until_budget(order, object_counts, object_budget)
