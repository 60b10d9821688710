"""Pool bookkeeping: labeled / unlabeled / partially-labeled image sets.

The pool sees detector predictions and the labels an oracle has already
returned; it never holds unrevealed ground truth. Ground truth lives behind
the oracle (see :mod:`albox.sampler`), which keeps selection strategies
from accidentally peeking at labels.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .errors import DuplicateLabelError, UnknownImageError
from .geometry import RotatedBox

PROB_SUM_TOL = 1e-6


class ImageStatus(str, enum.Enum):
    FULLY_LABELED = "fully_labeled"
    UNLABELED = "unlabeled"
    PARTIALLY_LABELED = "partially_labeled"


@dataclass
class GroundTruthObject:
    """One annotated object: class plus oriented box.

    ``labeled`` flips to True (once, monotonically) when the oracle returns
    this object to the learner.
    """

    gt_id: int
    class_id: int
    box: RotatedBox
    labeled: bool = False
    difficult: bool = False


@dataclass(frozen=True)
class Prediction:
    """One detector output box with foreground class probabilities.

    ``class_probs`` covers the C foreground classes; together with
    ``background_score`` the mass must sum to 1 (within tolerance, enforced
    at ingestion).
    """

    pred_id: int
    image_id: int
    box: RotatedBox
    class_probs: tuple[float, ...]
    background_score: float

    def __post_init__(self):
        if len(self.class_probs) < 2:
            raise ValueError(f"need >= 2 classes, got {len(self.class_probs)}")
        for p in self.class_probs:
            if not (0.0 <= p <= 1.0) or not math.isfinite(p):
                raise ValueError(f"class probability {p!r} outside [0, 1]")
        if not (0.0 <= self.background_score <= 1.0):
            raise ValueError(f"background score {self.background_score!r} outside [0, 1]")
        total = sum(self.class_probs) + self.background_score
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probability mass sums to {total!r}, expected 1")


@dataclass(frozen=True)
class QueryResult:
    """Oracle response to one box query.

    Either the query matched an unlabeled ground-truth object (class + true
    box returned) or it fell on background. Annotation cost is one unit
    either way.
    """

    image_id: int
    pred_id: int
    matched: bool
    class_id: int | None
    gt_id: int | None
    gt_box: RotatedBox | None
    iou_with_gt: float
    cycle: int
    cost: int = 1

    def __post_init__(self):
        if self.cost != 1:
            raise ValueError("annotation cost is one unit per query")
        if self.matched:
            if self.class_id is None or self.gt_id is None or self.gt_box is None:
                raise ValueError("matched result must carry class, gt_id and gt box")
            if not self.iou_with_gt > 0.0:
                raise ValueError("matched result requires positive IoU")
        elif not (self.class_id is None and self.gt_id is None and self.gt_box is None):
            raise ValueError("background result must not carry ground-truth fields")


@dataclass
class PoolImage:
    image_id: int
    predictions: list[Prediction]
    status: ImageStatus = ImageStatus.UNLABELED
    # Ground truth revealed by full-image labeling (the initial labeled set
    # and images labeled by image-based strategies).
    labeled_objects: list[GroundTruthObject] = field(default_factory=list)


class PoolState:
    """Mutable experiment pool: image statuses, revealed labels, class counts.

    Single-writer: one experiment mutates its pool sequentially; read-only
    snapshots may be shared with parallel scorers.
    """

    def __init__(self, images: dict[int, PoolImage], num_classes: int):
        if num_classes < 2:
            raise ValueError("need at least two classes")
        self.images = images
        self.num_classes = num_classes
        self.partial_labels: list[QueryResult] = []
        self.consumed_pred_ids: set[int] = set()
        self._matched_boxes: dict[int, list[RotatedBox]] = {}
        self.class_counts: list[int] = recount_classes(self)

    def image_ids(self, status: ImageStatus) -> list[int]:
        return sorted(i for i, img in self.images.items() if img.status == status)

    def queryable_image_ids(self) -> list[int]:
        """Images still open to object queries (unlabeled or partial)."""
        return sorted(
            i for i, img in self.images.items() if img.status != ImageStatus.FULLY_LABELED
        )

    def labeled_boxes(self, image_id: int) -> list[RotatedBox]:
        """True boxes of objects already returned for this image."""
        return list(self._matched_boxes.get(image_id, ()))

    def status_counts(self) -> dict[str, int]:
        counts = {status.value: 0 for status in ImageStatus}
        for img in self.images.values():
            counts[img.status.value] += 1
        return counts


@dataclass(frozen=True)
class CycleReport:
    """Metrics for one completed selection cycle of one seeded experiment.

    ``wall_time_s`` is informational only and is excluded from the canonical
    report serialization so that identical configs reproduce identical bytes.
    """

    seed: int
    cycle: int
    strategy: str
    theta: float
    queried_per_class: tuple[int, ...]
    kl_to_uniform: float | None
    budget_spent: int
    budget_unspent: int
    overshoot: int
    background_queries: int
    open_class_candidates: bool
    phi_min: float | None
    phi_median: float | None
    phi_max: float | None
    macro_recall: float | None
    per_class_recall: tuple[float | None, ...]
    config_digest: str
    wall_time_s: float = 0.0


def recount_classes(pool: PoolState) -> list[int]:
    """Recount per-class labeled objects from scratch.

    Counts ground truth revealed on fully labeled images plus matched query
    results; background queries carry no class and never count.
    """
    counts = [0] * pool.num_classes
    for img in pool.images.values():
        for gt in img.labeled_objects:
            counts[gt.class_id] += 1
    for result in pool.partial_labels:
        if result.matched:
            counts[result.class_id] += 1
    return counts


def apply_query_results(pool: PoolState, results: list[QueryResult]) -> PoolState:
    """Fold oracle responses into the pool (mutates and returns ``pool``).

    An image gaining its first label moves from unlabeled to partially
    labeled. Re-submitting a consumed prediction is an error: each box is
    annotated at most once.
    """
    for result in results:
        img = pool.images.get(result.image_id)
        if img is None:
            raise UnknownImageError(f"image {result.image_id} not in pool")
        if img.status == ImageStatus.FULLY_LABELED:
            raise UnknownImageError(
                f"image {result.image_id} is fully labeled and cannot be queried"
            )
        if result.pred_id in pool.consumed_pred_ids:
            raise DuplicateLabelError(f"prediction {result.pred_id} already labeled")
        pool.consumed_pred_ids.add(result.pred_id)
        pool.partial_labels.append(result)
        if img.status == ImageStatus.UNLABELED:
            img.status = ImageStatus.PARTIALLY_LABELED
        if result.matched:
            pool.class_counts[result.class_id] += 1
            pool._matched_boxes.setdefault(result.image_id, []).append(result.gt_box)
    return pool


def apply_image_labels(
    pool: PoolState, image_id: int, objects: list[GroundTruthObject]
) -> PoolState:
    """Record a whole-image annotation (image-based strategies).

    The image becomes fully labeled and every returned object counts toward
    the per-class totals.
    """
    img = pool.images.get(image_id)
    if img is None:
        raise UnknownImageError(f"image {image_id} not in pool")
    if img.status != ImageStatus.UNLABELED:
        raise DuplicateLabelError(f"image {image_id} is already (partially) labeled")
    img.status = ImageStatus.FULLY_LABELED
    img.labeled_objects = list(objects)
    for gt in objects:
        pool.class_counts[gt.class_id] += 1
    return pool
