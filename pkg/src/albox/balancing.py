"""Class-balanced budget allocation from labeled-set class frequencies.

Each class gets weight one minus its share of the labeled objects, a
softmax turns the weights into preferences, and the integer per-class
budgets come from largest-remainder rounding of preference times total
budget, which conserves the total exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class ClassBudget:
    """Integer per-class annotation budgets plus the weights behind them."""

    per_class: tuple[int, ...]
    total: int
    zeta: tuple[float, ...]
    beta: tuple[float, ...]

    def __post_init__(self):
        if self.total < 0:
            raise ValueError("total budget must be non-negative")
        if any(b < 0 for b in self.per_class):
            raise ValueError("per-class budgets must be non-negative")
        if not (len(self.per_class) == len(self.zeta) == len(self.beta)):
            raise ValueError("per_class, zeta and beta must have equal length")

    @staticmethod
    def uncapped(num_classes: int, total: int) -> "ClassBudget":
        """Budget with no per-class constraint (each class capped only by N)."""
        uniform = 1.0 / num_classes
        return ClassBudget(
            per_class=(total,) * num_classes,
            total=total,
            zeta=(uniform,) * num_classes,
            beta=(uniform,) * num_classes,
        )


def class_weights(counts: Sequence[int]) -> list[float]:
    """Inverse-frequency weight per class: 1 - count_k / sum(counts).

    With no labeled objects yet there is no frequency information; every
    class gets weight 1, which the softmax maps to a uniform preference.
    """
    if any(c < 0 for c in counts):
        raise ValueError("counts must be non-negative")
    total = sum(counts)
    if total == 0:
        return [1.0] * len(counts)
    return [1.0 - c / total for c in counts]


def class_preferences(beta: Sequence[float]) -> list[float]:
    """Softmax of the class weights, computed with max subtraction."""
    top = max(beta)
    exps = [math.exp(b - top) for b in beta]
    denom = math.fsum(exps)
    return [e / denom for e in exps]


def allocate_budget(
    zeta: Sequence[float], total: int, beta: Sequence[float] | None = None
) -> ClassBudget:
    """Largest-remainder rounding of total * zeta_k into integer budgets.

    Floors are assigned first; the leftover units go to classes in
    decreasing fractional-part order, ties to the lower class index. The
    per-class budgets always sum to ``total``.
    """
    if total < 0:
        raise ValueError("budget must be non-negative")
    shares = [total * z for z in zeta]
    floors = [math.floor(s) for s in shares]
    leftover = total - sum(floors)
    order = sorted(range(len(zeta)), key=lambda k: (-(shares[k] - floors[k]), k))
    for k in order[:leftover]:
        floors[k] += 1
    return ClassBudget(
        per_class=tuple(floors),
        total=total,
        zeta=tuple(float(z) for z in zeta),
        beta=tuple(float(b) for b in (beta if beta is not None else zeta)),
    )


def budget_from_counts(counts: Sequence[int], total: int) -> ClassBudget:
    """Full pipeline: labeled counts -> weights -> preferences -> budgets."""
    beta = class_weights(counts)
    zeta = class_preferences(beta)
    return allocate_budget(zeta, total, beta)
