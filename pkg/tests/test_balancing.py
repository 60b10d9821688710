import math

import numpy as np
import pytest

from albox.balancing import (
    ClassBudget,
    allocate_budget,
    budget_from_counts,
    class_preferences,
    class_weights,
)

E = math.e


class TestClassWeights:
    def test_direct_formula(self):
        assert class_weights([3, 1]) == pytest.approx([0.25, 0.75])

    def test_symmetry(self):
        assert class_weights([5, 5]) == [0.5, 0.5]

    def test_extremes(self):
        assert class_weights([0, 10]) == [1.0, 0.0]

    def test_cold_start_uniform(self):
        assert class_weights([0, 0, 0]) == [1.0, 1.0, 1.0]

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            class_weights([-1, 2])


class TestClassPreferences:
    def test_softmax_example(self):
        zeta = class_preferences([0.25, 0.75])
        assert zeta == pytest.approx([0.377541, 0.622459], abs=1e-6)

    def test_uniform(self):
        zeta = class_preferences([0.7, 0.7, 0.7, 0.7])
        assert zeta == pytest.approx([0.25] * 4, abs=1e-15)

    def test_closed_form(self):
        zeta = class_preferences([1.0, 0.0])
        assert zeta == pytest.approx([E / (E + 1), 1 / (E + 1)], abs=1e-12)
        assert zeta == pytest.approx([0.731059, 0.268941], abs=1e-6)

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            beta = rng.uniform(-5, 5, size=int(rng.integers(2, 20)))
            assert math.fsum(class_preferences(list(beta))) == pytest.approx(1.0, abs=1e-12)


class TestAllocateBudget:
    def test_largest_remainder_example(self):
        budget = allocate_budget([0.377541, 0.622459], 10)
        assert budget.per_class == (4, 6)

    def test_uniform_exact(self):
        assert allocate_budget([0.25] * 4, 8).per_class == (2, 2, 2, 2)

    def test_zero_budget(self):
        assert allocate_budget([0.3, 0.7], 0).per_class == (0, 0)

    def test_tie_goes_to_lower_index(self):
        budget = allocate_budget([0.5, 0.5], 3)
        assert budget.per_class == (2, 1)

    def test_conservation_property(self):
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            c = int(rng.integers(2, 12))
            zeta = rng.dirichlet(np.ones(c))
            n = int(rng.integers(0, 500))
            budget = allocate_budget(list(zeta), n)
            assert sum(budget.per_class) == n
            assert all(b >= 0 for b in budget.per_class)


class TestBudgetFromCounts:
    def test_monotone_preference(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            c = int(rng.integers(2, 10))
            counts = [int(v) for v in rng.integers(0, 50, size=c)]
            if sum(counts) == 0:
                counts[0] = 1
            n = int(rng.integers(1, 200))
            budget = budget_from_counts(counts, n)
            for i in range(c):
                for j in range(c):
                    if counts[i] < counts[j]:
                        assert budget.zeta[i] > budget.zeta[j]
                        assert budget.per_class[i] >= budget.per_class[j] - 1

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            c = int(rng.integers(2, 10))
            counts = [int(v) for v in rng.integers(1, 40, size=c)]
            scale = int(rng.integers(2, 9))
            zeta_base = budget_from_counts(counts, 10).zeta
            zeta_scaled = budget_from_counts([v * scale for v in counts], 10).zeta
            assert zeta_base == pytest.approx(zeta_scaled, abs=1e-12)

    def test_cold_start(self):
        budget = budget_from_counts([0, 0, 0, 0], 8)
        assert budget.per_class == (2, 2, 2, 2)


class TestUncapped:
    def test_no_class_constraint(self):
        budget = ClassBudget.uncapped(3, 7)
        assert budget.per_class == (7, 7, 7)
        assert budget.total == 7
