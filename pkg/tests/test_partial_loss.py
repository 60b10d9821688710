import math

import numpy as np
import pytest

from albox.partial_loss import (
    LossBreakdown,
    ProposalSample,
    adaptive_weight,
    bbox_loss,
    bbox_loss_grad,
    finite_diff_check,
    smooth_l1,
    weighted_ce_grad_matrix,
)


def positive(logits, target, reg_pred=None, reg_target=None, partial=False):
    return ProposalSample(
        logits=tuple(logits),
        target_class=target,
        is_positive=True,
        from_partial_image=partial,
        reg_pred=tuple(reg_pred if reg_pred is not None else [0.0] * 5),
        reg_target=tuple(reg_target if reg_target is not None else [0.0] * 5),
    )


def negative(logits, partial=False, mu=None):
    background = len(logits) - 1
    return ProposalSample(
        logits=tuple(logits),
        target_class=background,
        is_positive=False,
        from_partial_image=partial,
        background_score=mu,
    )


def random_batch(rng, size=16, num_classes=None):
    num_classes = num_classes or int(rng.integers(2, 8))
    batch = []
    for _ in range(size):
        logits = [float(v) for v in rng.normal(0, 2, num_classes + 1)]
        if rng.random() < 0.5:
            # keep regression inputs away from the smooth-L1 kink at |x| = 1
            diffs = rng.uniform(-3, 3, 5)
            diffs = np.where(np.abs(np.abs(diffs) - 1.0) < 1e-3, 0.5, diffs)
            target = [float(v) for v in rng.normal(0, 1, 5)]
            pred = [t + float(d) for t, d in zip(target, diffs)]
            batch.append(
                positive(logits, int(rng.integers(0, num_classes)), pred, target,
                         partial=bool(rng.integers(0, 2)))
            )
        elif rng.random() < 0.5:
            batch.append(negative(logits, partial=True, mu=float(rng.uniform(0, 1))))
        else:
            batch.append(negative(logits, partial=False))
    return batch


class TestSmoothL1:
    def test_zero(self):
        assert smooth_l1(0.0) == 0.0

    def test_quadratic_branch(self):
        assert smooth_l1(0.5) == 0.125
        assert smooth_l1(-0.5) == 0.125

    def test_linear_branch(self):
        assert smooth_l1(2.0) == 1.5
        assert smooth_l1(-2.0) == 1.5

    def test_continuous_at_kink(self):
        assert smooth_l1(1.0) == pytest.approx(0.5)
        assert smooth_l1(1.0 - 1e-12) == pytest.approx(0.5, abs=1e-9)


class TestAdaptiveWeight:
    def test_positive_is_one(self):
        assert adaptive_weight(positive([0.0, 0.0, 0.0], 0, partial=True)) == 1.0

    def test_partial_negative_uses_background_score(self):
        assert adaptive_weight(negative([0.0, 0.0, 0.0], partial=True, mu=0.2)) == 0.2

    def test_fully_labeled_negative_is_one(self):
        assert adaptive_weight(negative([0.0, 0.0, 0.0], partial=False)) == 1.0

    def test_mu_required_for_partial_negative(self):
        with pytest.raises(ValueError):
            negative([0.0, 0.0, 0.0], partial=True, mu=None)

    def test_mu_rejected_elsewhere(self):
        with pytest.raises(ValueError):
            negative([0.0, 0.0, 0.0], partial=False, mu=0.5)


class TestBboxLoss:
    def test_single_positive_closed_form(self):
        logits = [2.0, 0.5, -1.0]
        probs = np.exp(logits) / np.sum(np.exp(logits))
        breakdown = bbox_loss([positive(logits, 0, [1.0, 0, 0, 0, 0], [0.0] * 5)])
        assert breakdown.cls_loss == pytest.approx(-math.log(probs[0]), abs=1e-12)
        assert breakdown.reg_loss == pytest.approx(0.5, abs=1e-12)  # smooth_l1(1.0)
        assert breakdown.total == breakdown.cls_loss + breakdown.reg_loss
        assert breakdown.lambda_cls == 1.0 and breakdown.lambda_reg == 1.0

    def test_perfect_regression_zero_loss(self):
        reg = [0.3, -0.2, 1.5, 0.0, -4.0]
        breakdown = bbox_loss([positive([1.0, 0.0, 0.0], 0, reg, reg)])
        assert breakdown.reg_loss == 0.0

    def test_zero_mu_annihilates_classification(self):
        sample = negative([5.0, -3.0, 1.0], partial=True, mu=0.0)
        assert bbox_loss([sample]).cls_loss == 0.0

    def test_normalization_constants(self):
        batch = [
            positive([0.0, 0.0, 0.0], 0),
            positive([0.0, 0.0, 0.0], 1),
            negative([0.0, 0.0, 0.0]),
            negative([0.0, 0.0, 0.0], partial=True, mu=0.5),
        ]
        breakdown = bbox_loss(batch)
        assert breakdown.W == 4 and breakdown.num_positive == 2
        assert breakdown.lambda_cls == 0.25 and breakdown.lambda_reg == 0.5

    def test_all_negative_batch_safe(self):
        breakdown = bbox_loss([negative([0.0, 0.0])])
        assert breakdown.lambda_reg == 1.0 and breakdown.reg_loss == 0.0

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            bbox_loss([])

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            breakdown = bbox_loss(random_batch(rng, size=8))
            assert breakdown.cls_loss >= 0.0
            assert breakdown.reg_loss >= 0.0
            assert breakdown.total >= 0.0

    def test_mu_linearity(self):
        logits = [1.0, -0.5, 0.3]
        values = {}
        for mu in (0.0, 0.5, 1.0):
            values[mu] = bbox_loss([negative(logits, partial=True, mu=mu)]).cls_loss
        assert values[0.5] == pytest.approx((values[0.0] + values[1.0]) / 2, abs=1e-12)
        assert values[0.0] == 0.0

    def test_fully_labeled_matches_plain_reference(self):
        # Reference: unweighted CE + smooth-L1 with the same accumulation
        # order, no weighting logic at all.
        def reference(batch):
            W = len(batch)
            npos = sum(1 for s in batch if s.is_positive)
            ce = []
            for s in batch:
                top = max(s.logits)
                lse = top + math.log(math.fsum(math.exp(z - top) for z in s.logits))
                ce.append(lse - s.logits[s.target_class])
            cls = math.fsum(ce) / W
            reg_terms = []
            for s in batch:
                if s.is_positive:
                    reg_terms.append(
                        math.fsum(smooth_l1(p - t) for p, t in zip(s.reg_pred, s.reg_target))
                    )
            reg = math.fsum(reg_terms) / max(1, npos)
            return cls, reg

        rng = np.random.default_rng(1)
        for _ in range(50):
            batch = [
                s if not s.from_partial_image else ProposalSample(
                    logits=s.logits,
                    target_class=s.target_class,
                    is_positive=s.is_positive,
                    from_partial_image=False,
                    reg_pred=s.reg_pred,
                    reg_target=s.reg_target,
                )
                for s in random_batch(rng, size=12)
            ]
            cls_ref, reg_ref = reference(batch)
            breakdown = bbox_loss(batch)
            assert breakdown.cls_loss == cls_ref  # bit-equal
            assert breakdown.reg_loss == reg_ref


class TestGradients:
    def test_uniform_logits_closed_form(self):
        sample = positive([0.0, 0.0, 0.0], 0)
        grads, _ = bbox_loss_grad([sample])
        assert grads[0] == pytest.approx([1 / 3 - 1, 1 / 3, 1 / 3], abs=1e-12)

    def test_clamped_regression_gradient(self):
        sample = positive([0.0, 0.0], 0, [2.0, -2.0, 0.5, 0.0, 1.0], [0.0] * 5)
        _, reg_grads = bbox_loss_grad([sample])
        assert reg_grads[0] == pytest.approx([1.0, -1.0, 0.5, 0.0, 1.0])

    def test_zero_mu_zero_gradient(self):
        sample = negative([3.0, -1.0, 0.5], partial=True, mu=0.0)
        grads, _ = bbox_loss_grad([sample])
        assert np.all(grads[0] == 0.0)

    def test_finite_difference_sample(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            err = finite_diff_check(random_batch(rng, size=16), epsilon=1e-4)
            assert err < 1e-5

    def test_epsilon_range_enforced(self):
        with pytest.raises(ValueError):
            finite_diff_check([negative([0.0, 0.0])], epsilon=1e-2)


class TestMatrixPath:
    def test_matches_per_sample_grads(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            batch = random_batch(rng, size=10, num_classes=4)
            logits = np.array([s.logits for s in batch])
            targets = np.array([s.target_class for s in batch])
            weights = np.array([adaptive_weight(s) for s in batch])
            mean_loss, grad = weighted_ce_grad_matrix(logits, targets, weights)
            assert mean_loss == pytest.approx(bbox_loss(batch).cls_loss, rel=1e-12)
            per_sample, _ = bbox_loss_grad(batch)
            assert np.allclose(grad, np.stack(per_sample), atol=1e-14)
