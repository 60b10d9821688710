import numpy as np
import pytest

from albox.datamodel import (
    GroundTruthObject,
    ImageStatus,
    PoolImage,
    PoolState,
    Prediction,
    QueryResult,
    apply_image_labels,
    apply_query_results,
    recount_classes,
)
from albox.errors import DuplicateLabelError, UnknownImageError
from albox.geometry import RotatedBox

BOX = RotatedBox(0, 0, 2, 2, 0)


def make_prediction(pred_id, image_id, probs=(0.6, 0.3), background=0.1):
    return Prediction(pred_id, image_id, BOX, tuple(probs), background)


def make_pool(num_images=3, num_classes=2):
    images = {
        i: PoolImage(i, [make_prediction(i * 10 + j, i) for j in range(2)])
        for i in range(num_images)
    }
    return PoolState(images, num_classes)


def matched(image_id, pred_id, class_id, cycle=0):
    return QueryResult(
        image_id=image_id,
        pred_id=pred_id,
        matched=True,
        class_id=class_id,
        gt_id=pred_id,
        gt_box=BOX,
        iou_with_gt=0.8,
        cycle=cycle,
    )


def background(image_id, pred_id, cycle=0):
    return QueryResult(
        image_id=image_id,
        pred_id=pred_id,
        matched=False,
        class_id=None,
        gt_id=None,
        gt_box=None,
        iou_with_gt=0.0,
        cycle=cycle,
    )


class TestPrediction:
    def test_mass_must_sum_to_one(self):
        with pytest.raises(ValueError):
            make_prediction(0, 0, probs=(0.5, 0.3), background=0.0)

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            Prediction(0, 0, BOX, (1.0,), 0.0)

    def test_probabilities_in_range(self):
        with pytest.raises(ValueError):
            Prediction(0, 0, BOX, (1.2, -0.2), 0.0)


class TestQueryResult:
    def test_matched_requires_positive_iou(self):
        with pytest.raises(ValueError):
            QueryResult(0, 0, True, 1, 1, BOX, 0.0, 0)

    def test_background_carries_no_gt(self):
        with pytest.raises(ValueError):
            QueryResult(0, 0, False, 1, None, None, 0.0, 0)

    def test_unit_cost(self):
        with pytest.raises(ValueError):
            QueryResult(0, 0, False, None, None, None, 0.0, 0, cost=2)


class TestRecount:
    def test_empty_pool(self):
        assert recount_classes(make_pool()) == [0, 0]

    def test_fully_labeled_objects(self):
        pool = make_pool()
        gts = [
            GroundTruthObject(0, 0, BOX),
            GroundTruthObject(1, 0, BOX),
            GroundTruthObject(2, 1, BOX),
        ]
        apply_image_labels(pool, 0, gts)
        assert recount_classes(pool) == [2, 1]
        assert pool.class_counts == [2, 1]

    def test_partial_adds(self):
        pool = make_pool()
        apply_image_labels(pool, 0, [GroundTruthObject(0, 0, BOX), GroundTruthObject(1, 0, BOX), GroundTruthObject(2, 1, BOX)])
        apply_query_results(pool, [matched(1, 10, class_id=1)])
        assert recount_classes(pool) == [2, 2]
        assert pool.class_counts == [2, 2]


class TestApplyQueryResults:
    def test_first_label_moves_to_partial(self):
        pool = make_pool()
        apply_query_results(pool, [matched(1, 10, 0)])
        assert pool.images[1].status == ImageStatus.PARTIALLY_LABELED
        assert pool.class_counts == [1, 0]
        assert pool.labeled_boxes(1) == [BOX]

    def test_background_changes_status_only(self):
        pool = make_pool()
        apply_query_results(pool, [background(1, 10)])
        assert pool.images[1].status == ImageStatus.PARTIALLY_LABELED
        assert pool.class_counts == [0, 0]
        assert pool.labeled_boxes(1) == []

    def test_replay_rejected(self):
        pool = make_pool()
        apply_query_results(pool, [matched(1, 10, 0)])
        with pytest.raises(DuplicateLabelError):
            apply_query_results(pool, [matched(1, 10, 0)])

    def test_unknown_image(self):
        pool = make_pool()
        with pytest.raises(UnknownImageError):
            apply_query_results(pool, [matched(99, 990, 0)])

    def test_fully_labeled_image_rejected(self):
        pool = make_pool()
        apply_image_labels(pool, 1, [GroundTruthObject(0, 0, BOX)])
        with pytest.raises(UnknownImageError):
            apply_query_results(pool, [matched(1, 10, 0)])


class TestInvariants:
    def test_partition_and_counts_after_random_sequences(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n_images = int(rng.integers(2, 8))
            pool = make_pool(num_images=n_images, num_classes=3)
            pred_ids = [p.pred_id for img in pool.images.values() for p in img.predictions]
            rng.shuffle(pred_ids)
            for step, pred_id in enumerate(pred_ids[: int(rng.integers(0, len(pred_ids)))]):
                image_id = pred_id // 10
                if rng.random() < 0.5:
                    result = matched(image_id, pred_id, int(rng.integers(0, 3)), cycle=step)
                else:
                    result = background(image_id, pred_id, cycle=step)
                apply_query_results(pool, [result])
                statuses = pool.status_counts()
                assert sum(statuses.values()) == n_images
                assert pool.class_counts == recount_classes(pool)

    def test_consumed_grows_monotonically(self):
        pool = make_pool()
        apply_query_results(pool, [background(0, 0), matched(0, 1, 1)])
        assert pool.consumed_pred_ids == {0, 1}
