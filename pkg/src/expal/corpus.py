"""Dataset model, CSV ingestion, stratified sampling, and pool bookkeeping.

The canonical on-disk form of a dataset is a UTF-8 line-delimited record
stream: one JSON object per line with fields ``id``, ``premise``,
``hypothesis``, ``label``, ``explanation``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

LABELS = ("entailment", "neutral", "contradiction")

ANNOTATION_SOURCES = ("human", "oracle", "generated")

# Default mapping for the public e-SNLI CSV release.
ESNLI_COLUMNS = {
    "id": "pairID",
    "premise": "Sentence1",
    "hypothesis": "Sentence2",
    "label": "gold_label",
    "explanation": "Explanation_1",
}


class DataError(ValueError):
    """Raised for malformed input data or violated dataset invariants."""


class ColumnMapError(DataError):
    """Raised when a column mapping does not fit the CSV (config error)."""


class PoolError(ValueError):
    """Raised for illegal pool mutations (unknown or duplicate ids)."""


def canonical_label(raw: str) -> str:
    """Normalize a label string to its canonical lowercase form."""
    label = raw.strip().lower()
    if label not in LABELS:
        raise DataError(f"unknown label {raw!r}; expected one of {LABELS}")
    return label


@dataclass(frozen=True)
class Example:
    """One NLI record: the unit of selection and annotation."""

    id: str
    premise: str
    hypothesis: str
    gold_label: str
    gold_explanation: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("example id must be non-empty")
        if not self.premise or not self.hypothesis:
            raise DataError(f"example {self.id}: premise and hypothesis must be non-empty")
        if self.gold_label not in LABELS:
            raise DataError(f"example {self.id}: unknown label {self.gold_label!r}")


def content_of(example: Example, separator: str = " ") -> str:
    """Data content string of an example: premise, separator, hypothesis."""
    return f"{example.premise}{separator}{example.hypothesis}"


@dataclass(frozen=True)
class LabeledRecord:
    """An annotation outcome: label plus free-form explanation provenance."""

    example_id: str
    label: str
    explanation: str
    source: str  # human | oracle | generated
    iteration: int = 0

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise DataError(f"record {self.example_id}: unknown label {self.label!r}")
        if self.source not in ANNOTATION_SOURCES:
            raise DataError(f"record {self.example_id}: unknown source {self.source!r}")
        if self.source in ("human", "oracle") and not self.explanation:
            raise DataError(f"record {self.example_id}: {self.source} annotation requires an explanation")
        if self.iteration < 0:
            raise DataError(f"record {self.example_id}: iteration must be >= 0")


class Dataset:
    """An ordered, id-indexed collection of :class:`Example`."""

    def __init__(self, examples: Iterable[Example], name: str = "dataset"):
        self.name = name
        self.examples: list[Example] = list(examples)
        self._by_id: dict[str, Example] = {}
        for ex in self.examples:
            if ex.id in self._by_id:
                raise DataError(f"duplicate example id {ex.id!r}")
            self._by_id[ex.id] = ex
        if not self.examples:
            raise DataError("dataset is empty")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def __contains__(self, example_id: str) -> bool:
        return example_id in self._by_id

    def __getitem__(self, example_id: str) -> Example:
        try:
            return self._by_id[example_id]
        except KeyError:
            raise KeyError(f"unknown example id {example_id!r} in dataset {self.name!r}") from None

    def ids(self) -> list[str]:
        return [ex.id for ex in self.examples]

    def by_label(self) -> dict[str, list[str]]:
        """Example ids grouped by gold label, dataset order preserved."""
        groups: dict[str, list[str]] = {label: [] for label in LABELS}
        for ex in self.examples:
            groups[ex.gold_label].append(ex.id)
        return groups


@dataclass
class DataPool:
    """Partition of a sampled dataset into unlabeled candidates and labeled records.

    Selection moves ids from ``unlabeled`` to ``labeled``; it never drops
    them, so ``len(unlabeled) + len(labeled)`` is constant. Mutation is
    single-writer; share snapshots read-only across threads.
    """

    unlabeled: list[str]
    labeled: list[LabeledRecord] = field(default_factory=list)
    dataset_ref: str = "dataset"

    def __post_init__(self) -> None:
        unlabeled_set = set(self.unlabeled)
        if len(unlabeled_set) != len(self.unlabeled):
            raise PoolError("duplicate ids in unlabeled pool")
        overlap = unlabeled_set & {r.example_id for r in self.labeled}
        if overlap:
            raise PoolError(f"ids present in both partitions: {sorted(overlap)[:5]}")

    @property
    def size(self) -> int:
        return len(self.unlabeled) + len(self.labeled)

    def labeled_ids(self) -> list[str]:
        return [r.example_id for r in self.labeled]

    def commit_annotations(self, records: Sequence[LabeledRecord]) -> None:
        """Move annotated ids from unlabeled to labeled, atomically.

        Validates the whole batch before mutating: every id must currently
        be unlabeled and appear at most once in the batch.
        """
        seen: set[str] = set()
        for record in records:
            if record.example_id in seen:
                raise PoolError(f"duplicate id in annotation batch: {record.example_id!r}")
            seen.add(record.example_id)
        unlabeled_set = set(self.unlabeled)
        missing = seen - unlabeled_set
        if missing:
            raise PoolError(f"ids not in unlabeled pool: {sorted(missing)[:5]}")
        self.unlabeled = [eid for eid in self.unlabeled if eid not in seen]
        self.labeled.extend(records)

    def snapshot(self) -> dict:
        return {
            "dataset_ref": self.dataset_ref,
            "unlabeled": list(self.unlabeled),
            "labeled": [vars(r) for r in self.labeled],
        }

    @classmethod
    def from_snapshot(cls, data: Mapping) -> "DataPool":
        return cls(
            unlabeled=list(data["unlabeled"]),
            labeled=[LabeledRecord(**r) for r in data["labeled"]],
            dataset_ref=data.get("dataset_ref", "dataset"),
        )


def commit_annotations(pool: DataPool, records: Sequence[LabeledRecord]) -> DataPool:
    """Functional wrapper around :meth:`DataPool.commit_annotations`."""
    pool.commit_annotations(records)
    return pool


def ingest_csv(
    path: str | Path,
    column_map: Mapping[str, str] | None = None,
    name: str | None = None,
    explanations_required: bool = True,
) -> Dataset:
    """Read a CSV file into a validated :class:`Dataset`.

    ``column_map`` names the CSV columns holding ``premise``, ``hypothesis``,
    ``label``, and optionally ``explanation`` and ``id``; it defaults to the
    e-SNLI release columns. Rows with unknown label strings are rejected with
    their row numbers (1-based, header excluded). When no id column is
    mapped, ids are synthesized as zero-padded row indices.
    """
    path = Path(path)
    mapping = dict(column_map or ESNLI_COLUMNS)
    for required in ("premise", "hypothesis", "label"):
        if required not in mapping:
            raise ColumnMapError(f"column map must name a column for {required!r}")
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        for key, column in mapping.items():
            if column is not None and column not in reader.fieldnames:
                raise ColumnMapError(f"{path}: mapped column {column!r} (for {key}) not found")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")

    pad = len(str(len(rows)))
    examples = []
    bad_rows: list[tuple[int, str]] = []
    for index, row in enumerate(rows, start=1):
        raw_label = (row[mapping["label"]] or "").strip().lower()
        if raw_label not in LABELS:
            bad_rows.append((index, raw_label))
            continue
        example_id = row[mapping["id"]] if mapping.get("id") else str(index).zfill(pad)
        explanation = (row[mapping["explanation"]] or "") if mapping.get("explanation") else ""
        if explanations_required and not explanation:
            bad_rows.append((index, "<missing explanation>"))
            continue
        examples.append(
            Example(
                id=example_id,
                premise=row[mapping["premise"]],
                hypothesis=row[mapping["hypothesis"]],
                gold_label=raw_label,
                gold_explanation=explanation,
            )
        )
    if bad_rows:
        shown = "; ".join(f"row {i}: {val!r}" for i, val in bad_rows[:10])
        more = f" (+{len(bad_rows) - 10} more)" if len(bad_rows) > 10 else ""
        raise DataError(f"{path}: {len(bad_rows)} invalid rows: {shown}{more}")
    return Dataset(examples, name=name or path.stem)


def write_records(dataset: Dataset, path: str | Path) -> int:
    """Write a dataset as the canonical line-delimited record stream."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as out:
        for ex in dataset:
            line = json.dumps(
                {
                    "id": ex.id,
                    "premise": ex.premise,
                    "hypothesis": ex.hypothesis,
                    "label": ex.gold_label,
                    "explanation": ex.gold_explanation,
                },
                ensure_ascii=False,
            )
            out.write(line + "\n")
    return len(dataset)


def read_records(path: str | Path, name: str | None = None) -> Dataset:
    """Read a dataset from the canonical line-delimited record stream."""
    path = Path(path)
    examples = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid record: {exc}") from exc
            examples.append(
                Example(
                    id=str(obj["id"]),
                    premise=obj["premise"],
                    hypothesis=obj["hypothesis"],
                    gold_label=canonical_label(obj["label"]),
                    gold_explanation=obj.get("explanation", ""),
                )
            )
    if not examples:
        raise DataError(f"{path}: no records")
    return Dataset(examples, name=name or path.stem)


def stratified_sample(dataset: Dataset, k_per_category: int, seed: int) -> DataPool:
    """Draw ``k_per_category`` unlabeled examples per label into a fresh pool.

    The draw uses a PCG64 generator seeded with ``seed``, so identical
    ``(dataset, k, seed)`` inputs replay bit-identically across platforms.
    The sampled ids are shuffled once so the pool order is not label-blocked.
    """
    if k_per_category < 1:
        raise DataError("k_per_category must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    groups = dataset.by_label()
    chosen: list[str] = []
    for label in LABELS:
        ids = groups[label]
        if len(ids) < k_per_category:
            raise DataError(
                f"label {label!r} has only {len(ids)} examples; need {k_per_category}"
            )
        picks = rng.choice(len(ids), size=k_per_category, replace=False)
        chosen.extend(ids[i] for i in picks)
    order = rng.permutation(len(chosen))
    return DataPool(unlabeled=[chosen[i] for i in order], dataset_ref=dataset.name)


def uniform_sample(dataset: Dataset, n: int, seed: int) -> DataPool:
    """Draw ``n`` examples uniformly without replacement (no stratification).

    Used by annotation sessions, where gold labels are treated as unknown.
    """
    if n < 1 or n > len(dataset):
        raise DataError(f"need 1 <= n <= {len(dataset)}, got {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    ids = dataset.ids()
    picks = rng.choice(len(ids), size=n, replace=False)
    return DataPool(unlabeled=[ids[i] for i in picks], dataset_ref=dataset.name)
