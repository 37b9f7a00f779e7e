"""Active-learning data selection strategies.

Three strategies: ``random`` (seeded uniform draw), ``content_diversity``
(rank by mean similarity to previously labeled contents), and
``explanation_diversity`` (rank by mean similarity to previously annotated
explanations). The diversity strategies pick from the ranked list at equal
intervals. Before anything is labeled there are no reference explanations,
so both diversity strategies fall back to comparing candidate contents with
each other and select identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import LABELS, DataPool, Dataset, LabeledRecord, content_of
from .embedding import centroid

STRATEGIES = ("random", "content_diversity", "explanation_diversity")


class SelectionError(ValueError):
    """Raised for unsatisfiable quotas or invalid selection inputs."""


@dataclass(frozen=True)
class Strategy:
    kind: str
    seed: Optional[int] = None  # random only

    def __post_init__(self) -> None:
        if self.kind not in STRATEGIES:
            raise SelectionError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.kind == "random" and self.seed is None:
            raise SelectionError("random strategy requires a seed")


@dataclass(frozen=True)
class Quota:
    """Batch size: either per gold-label category or a global total."""

    count: int
    per_category: bool = False

    def __post_init__(self) -> None:
        if self.count < 1:
            raise SelectionError("quota must be >= 1")

    @property
    def batch_size(self) -> int:
        return self.count * len(LABELS) if self.per_category else self.count


@dataclass(frozen=True)
class RankedCandidate:
    example_id: str
    score: float


def rank_order(candidates: Sequence[RankedCandidate]) -> list[RankedCandidate]:
    """Total order: score descending, ties broken by ascending example id."""
    return sorted(candidates, key=lambda c: (-c.score, c.example_id))


def score_candidates(
    candidates: Sequence,  # Example
    references: Sequence[str],
    embedder,
    exclude_self: bool = False,
    separator: str = " ",
) -> list[RankedCandidate]:
    """Score candidates by mean cosine similarity to the reference texts.

    Scores are computed in one pass via the centroid identity:
    ``mean_p sim(u, r_p) == dot(u, centroid(r))``. With ``exclude_self`` the
    references must be exactly the candidates' own contents in order; each
    candidate's self-similarity (1 unless its text embeds empty) is removed
    from the mean. Output is sorted by the total rank order.
    """
    if not references:
        raise SelectionError("references must be non-empty")
    if not candidates:
        raise SelectionError("no candidates to score")
    if exclude_self and len(references) != len(candidates):
        raise SelectionError("exclude_self requires one reference per candidate")

    candidate_vectors = embedder.embed_many([content_of(ex, separator) for ex in candidates])
    reference_vectors = embedder.embed_many(list(references))
    center = centroid(reference_vectors)
    matrix = np.stack([v.values for v in candidate_vectors])
    scores = matrix @ center

    n = len(references)
    if exclude_self:
        if n == 1:
            # A single candidate referencing only itself has no peers.
            scores = np.zeros(1)
        else:
            self_sim = np.array([0.0 if v.empty else 1.0 for v in candidate_vectors])
            scores = (n * scores - self_sim) / (n - 1)

    ranked = [
        RankedCandidate(example_id=ex.id, score=float(s))
        for ex, s in zip(candidates, scores)
    ]
    return rank_order(ranked)


def reference_texts(
    pool: DataPool,
    dataset: Dataset,
    strategy: Strategy,
    iteration: int,
    explanation_source: str = "human",
    separator: str = " ",
) -> list[str]:
    """Reference texts the diversity strategies rank candidates against.

    Iteration 0 has no annotations yet, so both strategies use the contents
    of all unlabeled candidates (self-similarity is excluded later, in
    scoring). Afterwards ``explanation_diversity`` uses labeled records'
    explanations filtered by the source policy and ``content_diversity``
    uses labeled records' contents.
    """
    records, texts = _reference_records(
        pool, dataset, strategy, iteration, explanation_source, separator
    )
    del records
    return texts


def _reference_records(
    pool: DataPool,
    dataset: Dataset,
    strategy: Strategy,
    iteration: int,
    explanation_source: str,
    separator: str,
) -> tuple[list[LabeledRecord], list[str]]:
    if strategy.kind == "random":
        raise SelectionError("random strategy has no reference texts")
    if iteration == 0:
        return [], [content_of(dataset[eid], separator) for eid in pool.unlabeled]
    if not pool.labeled:
        raise SelectionError(f"iteration {iteration} > 0 but the labeled set is empty")
    if strategy.kind == "content_diversity":
        records = list(pool.labeled)
        return records, [content_of(dataset[r.example_id], separator) for r in records]
    if explanation_source == "generated":
        records = [r for r in pool.labeled if r.source == "generated"]
    else:
        records = [r for r in pool.labeled if r.source in ("human", "oracle")]
    if not records:
        raise SelectionError(
            f"no labeled records with explanation source {explanation_source!r}"
        )
    return records, [r.explanation for r in records]


def equal_interval_indices(n: int, x: int) -> list[int]:
    """Rank indices picked at equal intervals through a list of length n.

    Round-half-up of ``i*(n-1)/(x-1)`` for ``i`` in ``0..x-1``, computed in
    exact integer arithmetic. Includes both endpoints whenever ``x >= 2``.
    """
    if x < 1:
        raise SelectionError("x must be >= 1")
    if x >= n:
        return list(range(n))
    if x == 1:
        return [0]
    indices = []
    seen = set()
    q = 2 * (x - 1)
    for i in range(x):
        idx = (2 * i * (n - 1) + (x - 1)) // q  # floor(i*(n-1)/(x-1) + 1/2)
        if idx not in seen:
            seen.add(idx)
            indices.append(idx)
    return indices


def select_equal_interval(ranked: Sequence[RankedCandidate], x: int) -> list[str]:
    """Pick x example ids at equal intervals through a ranked list."""
    if not ranked:
        raise SelectionError("ranked list must be non-empty")
    return [ranked[i].example_id for i in equal_interval_indices(len(ranked), x)]


def select(
    pool: DataPool,
    dataset: Dataset,
    strategy: Strategy,
    quota: Quota,
    iteration: int,
    embedder=None,
    explanation_source: str = "human",
    separator: str = " ",
    rng: Optional[np.random.Generator] = None,
    trace: Optional[Callable[[dict], None]] = None,
) -> list[str]:
    """Select a batch of example ids from the unlabeled pool.

    Per-category quotas (simulation mode, where the oracle knows gold
    labels) rank and interval-pick within each gold-label sublist; total
    quotas apply to the global ranked list. ``trace``, when given, receives
    one event describing the reference records used, for audit logs.
    """
    if not pool.unlabeled:
        raise SelectionError("unlabeled pool is empty")

    if quota.per_category:
        by_label: dict[str, list[str]] = {label: [] for label in LABELS}
        for eid in pool.unlabeled:
            by_label[dataset[eid].gold_label].append(eid)
        for label in LABELS:
            if len(by_label[label]) < quota.count:
                raise SelectionError(
                    f"label {label!r} has {len(by_label[label])} unlabeled candidates; need {quota.count}"
                )
    elif len(pool.unlabeled) < quota.count:
        raise SelectionError(
            f"pool has {len(pool.unlabeled)} unlabeled candidates; need {quota.count}"
        )

    if strategy.kind == "random":
        if rng is None:
            rng = np.random.Generator(np.random.PCG64(strategy.seed))
        if quota.per_category:
            selected = []
            for label in LABELS:
                ids = by_label[label]
                picks = rng.choice(len(ids), size=quota.count, replace=False)
                selected.extend(ids[i] for i in picks)
            return selected
        picks = rng.choice(len(pool.unlabeled), size=quota.count, replace=False)
        return [pool.unlabeled[i] for i in picks]

    if embedder is None:
        raise SelectionError("diversity strategies require an embedder")

    records, references = _reference_records(
        pool, dataset, strategy, iteration, explanation_source, separator
    )
    if trace is not None:
        trace(
            {
                "event": "selector.references",
                "strategy": strategy.kind,
                "iteration": iteration,
                "count": len(references),
                "sources": sorted({r.source for r in records}),
            }
        )
    candidates = [dataset[eid] for eid in pool.unlabeled]
    ranked = score_candidates(
        candidates,
        references,
        embedder,
        exclude_self=(iteration == 0),
        separator=separator,
    )
    if quota.per_category:
        selected = []
        for label in LABELS:
            sublist = [c for c in ranked if dataset[c.example_id].gold_label == label]
            selected.extend(select_equal_interval(sublist, quota.count))
        return selected
    return select_equal_interval(ranked, quota.count)
