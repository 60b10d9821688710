"""Greedy budgeted object selection with a simulated annotator.

One cycle runs: suppress candidates overlapping already-returned labels,
score the survivors, allocate per-class budgets from current labeled
counts, then walk candidates in descending score order. A candidate whose
predicted class still has budget is sent to the oracle; a candidate whose
class budget is exhausted is discarded. The walk stops when the total
budget is spent or candidates run out (a literal while-budget-remains loop
would never terminate on an exhausted pool).
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Mapping, Sequence

from .balancing import ClassBudget, budget_from_counts
from .datamodel import (
    GroundTruthObject,
    ImageStatus,
    PoolState,
    Prediction,
    QueryResult,
    apply_query_results,
)
from .geometry import RotatedBox, rotated_iou
from .scoring import ScoredPrediction, ScoringConfig, score_predictions


@dataclass(frozen=True)
class SamplerConfig:
    """Selection and labeling knobs for one experiment.

    ``budget`` is the total annotation budget per cycle. Background queries
    charge budget by default: a real annotator still inspects a box that
    turns out to be a false positive. ``second_pass_ignore_class`` spends
    leftover budget on the best remaining candidates regardless of class.
    """

    budget: int
    suppression_iou: float = 0.5
    min_match_iou: float = 0.0
    charge_background_queries: bool = True
    second_pass_ignore_class: bool = False
    match_difficult: bool = True

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if not 0.0 < self.suppression_iou <= 1.0:
            raise ValueError("suppression_iou must be in (0, 1]")
        if not 0.0 <= self.min_match_iou < 1.0:
            raise ValueError("min_match_iou must be in [0, 1)")


@dataclass(frozen=True)
class CycleStats:
    """Selection-level metrics for one cycle (consumed by the harness).

    ``matched_per_class`` histograms the true classes of annotated objects;
    ``taken_per_class`` counts charged queries by their predicted class,
    which is the axis the budgets constrain.
    """

    matched_per_class: tuple[int, ...]
    taken_per_class: tuple[int, ...]
    allocated_per_class: tuple[int, ...]
    charged: int
    unspent: int
    background_queries: int
    open_class_candidates: bool
    phi_min: float | None
    phi_median: float | None
    phi_max: float | None


def suppress_labeled_overlaps(
    preds: Sequence[Prediction],
    labeled_boxes: Sequence[RotatedBox],
    tau: float,
) -> list[Prediction]:
    """Drop predictions overlapping an already-labeled object above tau."""
    if not labeled_boxes:
        return list(preds)
    kept = []
    for pred in preds:
        if all(rotated_iou(pred.box, box) <= tau for box in labeled_boxes):
            kept.append(pred)
    return kept


def candidate_order(scored: Sequence[ScoredPrediction]) -> list[ScoredPrediction]:
    """Deterministic visit order: score descending, then image id, pred id."""
    return sorted(scored, key=lambda s: (-s.phi, s.image_id, s.pred_id))


def select_queries(
    scored: Sequence[ScoredPrediction], budget: ClassBudget
) -> list[ScoredPrediction]:
    """Greedy budgeted selection over sorted candidates.

    A candidate is taken iff its predicted class still has budget; taking
    decrements that class budget and the total. Candidates of exhausted
    classes are discarded, not deferred.
    """
    remaining = list(budget.per_class)
    total = budget.total
    taken: list[ScoredPrediction] = []
    for cand in candidate_order(scored):
        if total <= 0:
            break
        if remaining[cand.argmax_class] <= 0:
            continue
        remaining[cand.argmax_class] -= 1
        total -= 1
        taken.append(cand)
    return taken


def oracle_label(
    query: Prediction,
    gts: Sequence[GroundTruthObject],
    config: SamplerConfig,
    cycle: int = 0,
) -> QueryResult:
    """Label one queried box against the image's unlabeled ground truth.

    The unlabeled object with the largest IoU above the match floor is
    returned (ties to the lowest gt id) and flagged labeled; otherwise the
    query is recorded as background. Cost is one unit either way.
    """
    best: GroundTruthObject | None = None
    best_iou = 0.0
    best_seen = 0.0  # reported for background results (may sit below the floor)
    for gt in gts:
        if gt.labeled:
            continue
        if gt.difficult and not config.match_difficult:
            continue
        iou = rotated_iou(query.box, gt.box)
        if iou > best_seen:
            best_seen = iou
        if iou <= config.min_match_iou:
            continue
        if best is None or iou > best_iou or (iou == best_iou and gt.gt_id < best.gt_id):
            best = gt
            best_iou = iou
    if best is None:
        return QueryResult(
            image_id=query.image_id,
            pred_id=query.pred_id,
            matched=False,
            class_id=None,
            gt_id=None,
            gt_box=None,
            iou_with_gt=best_seen,
            cycle=cycle,
        )
    best.labeled = True
    return QueryResult(
        image_id=query.image_id,
        pred_id=query.pred_id,
        matched=True,
        class_id=best.class_id,
        gt_id=best.gt_id,
        gt_box=best.box,
        iou_with_gt=best_iou,
        cycle=cycle,
    )


class Oracle:
    """Holds the ground truth and answers queries by the IoU-max rule.

    Strategies never see this object; only the cycle driver and the
    harness's cost accounting talk to it.
    """

    def __init__(
        self,
        gt_by_image: Mapping[int, list[GroundTruthObject]],
        config: SamplerConfig,
    ):
        self.gt_by_image = dict(gt_by_image)
        self.config = config

    def label(self, query: Prediction, cycle: int = 0) -> QueryResult:
        gts = self.gt_by_image.get(query.image_id, [])
        return oracle_label(query, gts, self.config, cycle)

    def label_image(self, image_id: int) -> list[GroundTruthObject]:
        """Annotate every remaining object of an image (image-based methods)."""
        newly = [gt for gt in self.gt_by_image.get(image_id, []) if not gt.labeled]
        for gt in newly:
            gt.labeled = True
        return list(self.gt_by_image.get(image_id, []))

    def object_counts(self) -> dict[int, int]:
        """Ground-truth objects per image (annotation cost of full labeling)."""
        return {i: len(gts) for i, gts in self.gt_by_image.items()}


def _phi_summary(scored: Sequence[ScoredPrediction]):
    if not scored:
        return None, None, None
    values = [s.phi for s in scored]
    return min(values), statistics.median(values), max(values)


def run_cycle(
    pool: PoolState,
    oracle: Oracle,
    scoring_config: ScoringConfig,
    sampler_config: SamplerConfig,
    *,
    cycle: int = 0,
    use_class_budgets: bool = True,
    image_uncertainty_override: float | None = None,
) -> tuple[list[QueryResult], CycleStats, PoolState]:
    """Run one full selection cycle and fold the results into the pool.

    Selection and labeling interleave so that budget charging can depend on
    the oracle outcome; with background charging on (the default) the taken
    set is identical to :func:`select_queries` on the same candidates.
    """
    num_classes = pool.num_classes
    candidates_by_image: dict[int, list[Prediction]] = {}
    for image_id in pool.queryable_image_ids():
        img = pool.images[image_id]
        preds = [p for p in img.predictions if p.pred_id not in pool.consumed_pred_ids]
        preds = suppress_labeled_overlaps(
            preds, pool.labeled_boxes(image_id), sampler_config.suppression_iou
        )
        if preds:
            candidates_by_image[image_id] = preds
    scored = score_predictions(
        candidates_by_image,
        scoring_config,
        image_uncertainty_override=image_uncertainty_override,
    )
    if use_class_budgets:
        budget = budget_from_counts(pool.class_counts, sampler_config.budget)
    else:
        budget = ClassBudget.uncapped(num_classes, sampler_config.budget)

    preds_by_id = {
        p.pred_id: p for preds in candidates_by_image.values() for p in preds
    }
    ordered = candidate_order(scored)
    remaining = list(budget.per_class)
    total = budget.total
    results: list[QueryResult] = []
    charged = 0
    taken_per_class = [0] * num_classes
    queried_ids: set[int] = set()
    for cand in ordered:
        if total <= 0:
            break
        if remaining[cand.argmax_class] <= 0:
            continue
        result = oracle.label(preds_by_id[cand.pred_id], cycle)
        results.append(result)
        queried_ids.add(cand.pred_id)
        if result.matched or sampler_config.charge_background_queries:
            remaining[cand.argmax_class] -= 1
            taken_per_class[cand.argmax_class] += 1
            total -= 1
            charged += 1
    open_class_candidates = total > 0 and any(
        remaining[cand.argmax_class] > 0
        for cand in ordered
        if cand.pred_id not in queried_ids
    )
    if sampler_config.second_pass_ignore_class and total > 0:
        for cand in ordered:
            if total <= 0:
                break
            if cand.pred_id in queried_ids:
                continue
            result = oracle.label(preds_by_id[cand.pred_id], cycle)
            results.append(result)
            queried_ids.add(cand.pred_id)
            if result.matched or sampler_config.charge_background_queries:
                total -= 1
                charged += 1

    apply_query_results(pool, results)
    matched_per_class = [0] * num_classes
    background_queries = 0
    for result in results:
        if result.matched:
            matched_per_class[result.class_id] += 1
        else:
            background_queries += 1
    phi_min, phi_median, phi_max = _phi_summary(scored)
    stats = CycleStats(
        matched_per_class=tuple(matched_per_class),
        taken_per_class=tuple(taken_per_class),
        allocated_per_class=budget.per_class,
        charged=charged,
        unspent=sampler_config.budget - charged,
        background_queries=background_queries,
        open_class_candidates=open_class_candidates,
        phi_min=phi_min,
        phi_median=phi_median,
        phi_max=phi_max,
    )
    return results, stats, pool
