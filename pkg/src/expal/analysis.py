"""Learning-curve aggregation and 2x2 contingency statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .engine import TrialCurve


class AnalysisError(ValueError):
    """Raised for misaligned curves or degenerate contingency tables."""


@dataclass(frozen=True)
class IterationSummary:
    iteration: int
    mean: float
    std: float  # sample standard deviation (n-1 denominator; 0 for n=1)
    trials: int


@dataclass(frozen=True)
class CurveSummary:
    per_iteration: tuple[IterationSummary, ...]

    @property
    def iterations(self) -> int:
        return len(self.per_iteration)

    def final(self) -> IterationSummary:
        return self.per_iteration[-1]


def aggregate_curves(curves: Sequence[TrialCurve]) -> CurveSummary:
    """Per-iteration mean and sample standard deviation across trials.

    Curves must have contiguous 1-based iteration indices; shorter curves
    (aborted trials) simply stop contributing past their last iteration.
    """
    if not curves:
        raise AnalysisError("no curves to aggregate")
    for curve in curves:
        for position, result in enumerate(curve.results, start=1):
            if result.iteration != position:
                raise AnalysisError(
                    f"trial {curve.trial_index}: iteration {result.iteration} at position {position}"
                )
    length = max(len(c.results) for c in curves)
    rows = []
    for t in range(1, length + 1):
        values = np.array([c.results[t - 1].accuracy for c in curves if len(c.results) >= t])
        std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        rows.append(IterationSummary(iteration=t, mean=float(values.mean()), std=std, trials=len(values)))
    return CurveSummary(per_iteration=tuple(rows))


@dataclass(frozen=True)
class RatingTable2x2:
    """Counts (group1 yes/no, group2 yes/no); all margins must be positive."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self) -> None:
        if min(self.a, self.b, self.c, self.d) < 0:
            raise AnalysisError("counts must be non-negative")
        margins = (self.a + self.b, self.c + self.d, self.a + self.c, self.b + self.d)
        if min(margins) == 0:
            raise AnalysisError(f"zero margin in table {(self.a, self.b, self.c, self.d)}")


@dataclass(frozen=True)
class ChiSquareResult:
    chi2: float
    p_value: float
    dof: int = 1


def chi_square_2x2(table: RatingTable2x2, yates: bool = False) -> ChiSquareResult:
    """Pearson chi-square on a 2x2 table, dof=1.

    chi2 = N*(ad-bc)^2 / ((a+b)(c+d)(a+c)(b+d)), without continuity
    correction by default. The p-value uses the exact dof-1 identity
    p = erfc(sqrt(chi2/2)).
    """
    a, b, c, d = table.a, table.b, table.c, table.d
    n = a + b + c + d
    cross = abs(a * d - b * c)
    if yates:
        cross = max(0.0, cross - n / 2)
    chi2 = n * cross * cross / ((a + b) * (c + d) * (a + c) * (b + d))
    return ChiSquareResult(chi2=float(chi2), p_value=chi_square_p_value(float(chi2)))


def chi_square_p_value(chi2: float) -> float:
    """Survival function of the chi-square distribution with dof=1."""
    if chi2 < 0:
        raise AnalysisError("chi2 must be non-negative")
    return math.erfc(math.sqrt(chi2 / 2.0))


@dataclass(frozen=True)
class DominanceRow:
    iteration: int
    mean_a: float
    mean_b: float
    leader: str  # "a", "b", or "tie"
    margin: float  # mean_a - mean_b


@dataclass(frozen=True)
class SelectorComparison:
    rows: tuple[DominanceRow, ...]
    success_table: Optional[RatingTable2x2]
    chi_square: Optional[ChiSquareResult]
    threshold: float


def compare_selectors(
    curves_a: Sequence[TrialCurve],
    curves_b: Sequence[TrialCurve],
    threshold: float = 0.5,
) -> SelectorComparison:
    """Compare two selectors' curves from the same setting.

    Emits which selector's mean accuracy leads at every iteration and the
    margin, plus a chi-square test on final-iteration success counts (a
    trial succeeds when its final accuracy reaches ``threshold``). The
    chi-square is omitted when the 2x2 table has a zero margin.
    """
    summary_a = aggregate_curves(curves_a)
    summary_b = aggregate_curves(curves_b)
    if summary_a.iterations != summary_b.iterations:
        raise AnalysisError(
            f"misaligned summaries: {summary_a.iterations} vs {summary_b.iterations} iterations"
        )
    rows = []
    for ia, ib in zip(summary_a.per_iteration, summary_b.per_iteration):
        margin = ia.mean - ib.mean
        leader = "tie" if margin == 0 else ("a" if margin > 0 else "b")
        rows.append(
            DominanceRow(iteration=ia.iteration, mean_a=ia.mean, mean_b=ib.mean,
                         leader=leader, margin=margin)
        )

    def successes(curves: Sequence[TrialCurve]) -> tuple[int, int]:
        finals = [c.results[-1].accuracy for c in curves if c.results]
        yes = sum(1 for v in finals if v >= threshold)
        return yes, len(finals) - yes

    a_yes, a_no = successes(curves_a)
    b_yes, b_no = successes(curves_b)
    try:
        table = RatingTable2x2(a_yes, a_no, b_yes, b_no)
        result = chi_square_2x2(table)
    except AnalysisError:
        table, result = None, None
    return SelectorComparison(
        rows=tuple(rows), success_table=table, chi_square=result, threshold=threshold
    )
