"""The active-learning loop, trial runner, and simulation harness.

One iteration runs: select a batch, annotate it (oracle copy in
simulation, human records in annotation sessions), fine-tune the
explanation generator on the annotated explanations, generate explanations
for the new batch, fine-tune the predictor on pairs built from those
generated explanations, then evaluate on the trial's fixed held-out set.
Trials are independent: each gets its own pool sample, eval sample,
backends, and seed streams derived from the master seed, so runs replay
bit-identically and trials may execute in parallel.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import DataPool, Dataset, Example, LabeledRecord, stratified_sample
from .embedding import HashedTfEmbedder
from .modeling import (
    DEFAULT_EXPLAINER_HP,
    DEFAULT_PREDICTOR_HP,
    Hyperparameters,
    LabelParseError,
    PRELIMINARY_SIZES,
    SimulatedBackendConfig,
    SimulatedExplainer,
    SimulatedPredictor,
    make_explainer_pairs,
    make_predictor_pairs,
    one_shot_hyperparameters,
    parse_predicted_label,
    render_explainer_input,
    render_predictor_input,
)
from .selector import Quota, Strategy, select

MODES = ("standard", "transfer", "preliminary")

# Seed-derivation roles; each (trial, role) pair owns an independent stream.
ROLE_POOL = 0
ROLE_EVAL = 1
ROLE_SELECT = 2
ROLE_BACKEND = 3

EMPTY_EXPLANATION_PLACEHOLDER = "(no explanation)"


class EngineError(RuntimeError):
    """Raised for configuration conflicts and aborted iterations."""


def derive_seed(master_seed: int, trial_index: int, role: int) -> int:
    """Deterministic per-trial, per-role seed from the master seed."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial_index, role))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ALConfig:
    strategy: Strategy
    quota: Quota
    iterations: int
    explanation_source: str = "human"  # human | generated
    explainer_hp: Hyperparameters = DEFAULT_EXPLAINER_HP
    predictor_hp: Hyperparameters = DEFAULT_PREDICTOR_HP
    eval_per_category: int = 300  # 0 = evaluate on the full eval split
    trial_count: int = 1
    master_seed: int = 0
    mode: str = "standard"  # standard | transfer | preliminary
    pool_per_category: int = 3000
    frozen_explainer_ref: Optional[str] = None
    warm_start: bool = True
    content_separator: str = " "

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise EngineError(f"unknown mode {self.mode!r}")
        if self.iterations < 1 or self.trial_count < 1:
            raise EngineError("iterations and trial_count must be >= 1")
        if self.explanation_source not in ("human", "generated"):
            raise EngineError(f"unknown explanation source {self.explanation_source!r}")
        if self.mode == "standard" and self.explanation_source != "human":
            raise EngineError("standard mode requires explanation_source='human'")
        if self.mode == "transfer":
            if self.frozen_explainer_ref is None:
                raise EngineError("transfer mode requires a frozen explainer reference")
            if self.explanation_source != "generated":
                raise EngineError("transfer mode requires explanation_source='generated'")
        if self.mode == "preliminary":
            if self.iterations != 1:
                raise EngineError("preliminary mode is single-shot (iterations=1)")
            if self.strategy.kind != "random":
                raise EngineError("preliminary mode uses the random strategy")

    def to_dict(self) -> dict:
        return {
            "strategy": {"kind": self.strategy.kind, "seed": self.strategy.seed},
            "quota": {"count": self.quota.count, "per_category": self.quota.per_category},
            "iterations": self.iterations,
            "explanation_source": self.explanation_source,
            "explainer_hp": vars(self.explainer_hp),
            "predictor_hp": vars(self.predictor_hp),
            "eval_per_category": self.eval_per_category,
            "trial_count": self.trial_count,
            "master_seed": self.master_seed,
            "mode": self.mode,
            "pool_per_category": self.pool_per_category,
            "frozen_explainer_ref": self.frozen_explainer_ref,
            "warm_start": self.warm_start,
            "content_separator": self.content_separator,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ALConfig":
        return cls(
            strategy=Strategy(**data["strategy"]),
            quota=Quota(**data["quota"]),
            iterations=data["iterations"],
            explanation_source=data.get("explanation_source", "human"),
            explainer_hp=Hyperparameters(**data["explainer_hp"]),
            predictor_hp=Hyperparameters(**data["predictor_hp"]),
            eval_per_category=data.get("eval_per_category", 300),
            trial_count=data.get("trial_count", 1),
            master_seed=data.get("master_seed", 0),
            mode=data.get("mode", "standard"),
            pool_per_category=data.get("pool_per_category", 3000),
            frozen_explainer_ref=data.get("frozen_explainer_ref"),
            warm_start=data.get("warm_start", True),
            content_separator=data.get("content_separator", " "),
        )


def setting_1(**overrides) -> ALConfig:
    """3 per category x 20 iterations (180 annotations altogether)."""
    params = dict(
        strategy=Strategy("explanation_diversity"),
        quota=Quota(3, per_category=True),
        iterations=20,
        trial_count=80,
    )
    params.update(overrides)
    return ALConfig(**params)


def setting_2(**overrides) -> ALConfig:
    """10 per category x 15 iterations (450 annotations altogether)."""
    params = dict(
        strategy=Strategy("explanation_diversity"),
        quota=Quota(10, per_category=True),
        iterations=15,
        trial_count=80,
    )
    params.update(overrides)
    return ALConfig(**params)


def transfer_setting(**overrides) -> ALConfig:
    """Frozen-explainer transfer run; selection uses generated explanations."""
    params = dict(
        strategy=Strategy("explanation_diversity"),
        quota=Quota(3, per_category=True),
        iterations=20,
        mode="transfer",
        explanation_source="generated",
        frozen_explainer_ref="simulated",
        trial_count=15,
    )
    params.update(overrides)
    return ALConfig(**params)


def preliminary_setting(**overrides) -> ALConfig:
    """Single-shot training on a stratified random sample, 3 sub-trials."""
    params = dict(
        strategy=Strategy("random", seed=0),
        quota=Quota(10, per_category=True),
        iterations=1,
        mode="preliminary",
        trial_count=3,
        eval_per_category=0,
        pool_per_category=10,
    )
    params.update(overrides)
    return ALConfig(**params)


@dataclass(frozen=True)
class IterationResult:
    iteration: int  # 1-based count of completed iterations
    selected_ids: tuple[str, ...]
    accuracy: float
    n_labeled: int
    timing: dict = field(default_factory=dict)  # selection_ms, train_ms, eval_ms


@dataclass(frozen=True)
class TrialCurve:
    trial_index: int
    trial_seed: int
    results: tuple[IterationResult, ...]


@dataclass(frozen=True)
class SimulatedBackendFactory:
    """Builds a fresh simulated explainer/predictor pair per trial."""

    sim: SimulatedBackendConfig = SimulatedBackendConfig()

    def __call__(self, examples_by_id, seed: int):
        cfg = replace(self.sim, seed=seed)
        return SimulatedExplainer(examples_by_id, cfg), SimulatedPredictor(examples_by_id, cfg)


@dataclass
class TrialState:
    """Mutable state of one trial; phases run strictly sequentially."""

    config: ALConfig
    dataset: Dataset
    pool: DataPool
    eval_examples: list[Example]
    explainer: object
    predictor: object
    embedder: object
    select_rng: np.random.Generator
    trial_index: int = 0
    completed: int = 0  # iterations finished so far
    explainer_fine_tune_calls: int = 0
    recorder: Optional[Callable[[dict], None]] = None
    pending_selection_ms: float = 0.0

    def record(self, event: dict) -> None:
        if self.recorder is not None:
            self.recorder(dict(event, trial=self.trial_index))


def build_trial_state(
    config: ALConfig,
    train_dataset: Dataset,
    eval_dataset: Dataset,
    trial_index: int = 0,
    backend_factory=None,
    recorder: Optional[Callable[[dict], None]] = None,
    pool: Optional[DataPool] = None,
    eval_examples: Optional[Sequence[Example]] = None,
    embedder_factory: Optional[Callable[[], object]] = None,
) -> TrialState:
    """Assemble a fresh trial: pool sample, eval sample, backends, streams.

    ``pool`` and ``eval_examples`` may be supplied to reuse one sample
    across selectors (the controlled-comparison protocol); by default both
    are drawn from seeds that depend only on (master_seed, trial_index), so
    runs differing only in strategy still share samples. The default
    embedder is the memoized builtin; a remote embedder factory may replace
    it at the cost of bit-reproducibility guarantees.
    """
    factory = backend_factory or SimulatedBackendFactory()
    if pool is None:
        pool_seed = derive_seed(config.master_seed, trial_index, ROLE_POOL)
        pool = stratified_sample(train_dataset, config.pool_per_category, pool_seed)
    if eval_examples is None:
        if config.eval_per_category > 0:
            eval_seed = derive_seed(config.master_seed, trial_index, ROLE_EVAL)
            eval_pool = stratified_sample(eval_dataset, config.eval_per_category, eval_seed)
            eval_examples = [eval_dataset[eid] for eid in eval_pool.unlabeled]
        else:
            eval_examples = list(eval_dataset)
    examples_by_id = {ex.id: ex for ex in train_dataset}
    for ex in eval_examples:
        examples_by_id[ex.id] = ex
    explainer, predictor = factory(
        examples_by_id, derive_seed(config.master_seed, trial_index, ROLE_BACKEND)
    )
    select_rng = np.random.Generator(
        np.random.PCG64(derive_seed(config.master_seed, trial_index, ROLE_SELECT))
    )
    embedder = embedder_factory() if embedder_factory else HashedTfEmbedder(memoize=True)
    return TrialState(
        config=config,
        dataset=train_dataset,
        pool=pool,
        eval_examples=list(eval_examples),
        explainer=explainer,
        predictor=predictor,
        embedder=embedder,
        select_rng=select_rng,
        trial_index=trial_index,
        recorder=recorder,
    )


def propose_batch(state: TrialState) -> list[str]:
    """Phase 1: pick this iteration's batch from the unlabeled pool."""
    start = time.perf_counter()
    selected = select(
        state.pool,
        state.dataset,
        state.config.strategy,
        state.config.quota,
        iteration=state.completed,
        embedder=state.embedder,
        explanation_source=state.config.explanation_source,
        separator=state.config.content_separator,
        rng=state.select_rng,
        trace=state.record if state.recorder is not None else None,
    )
    state.pending_selection_ms = (time.perf_counter() - start) * 1000.0
    return selected


def oracle_annotations(state: TrialState, selected_ids: Sequence[str]) -> list[LabeledRecord]:
    """Simulation stand-in for a human: copy gold label and explanation."""
    return [
        LabeledRecord(
            example_id=eid,
            label=state.dataset[eid].gold_label,
            explanation=state.dataset[eid].gold_explanation,
            source="oracle",
            iteration=state.completed + 1,
        )
        for eid in selected_ids
    ]


def evaluate(predictor, eval_examples: Sequence[Example], explainer) -> float:
    """Inference-time pipeline: generate an explanation per example, feed it
    to the predictor, parse the output. Unparseable predictions count as
    incorrect."""
    if not eval_examples:
        raise EngineError("evaluation set is empty")
    ids = [ex.id for ex in eval_examples]
    explanations = explainer.generate(
        [render_explainer_input(ex) for ex in eval_examples], example_ids=ids
    )
    predictions = predictor.generate(
        [
            render_predictor_input(ex, explanation or EMPTY_EXPLANATION_PLACEHOLDER)
            for ex, explanation in zip(eval_examples, explanations)
        ],
        example_ids=ids,
    )
    correct = 0
    for ex, prediction in zip(eval_examples, predictions):
        try:
            if parse_predicted_label(prediction) == ex.gold_label:
                correct += 1
        except LabelParseError:
            pass
    return correct / len(eval_examples)


def complete_iteration(
    state: TrialState,
    selected_ids: Sequence[str],
    human_records: Optional[Sequence[LabeledRecord]] = None,
) -> IterationResult:
    """Phases 2-6 of one iteration; commits the pool atomically at the end.

    In standard/preliminary modes the annotations come from
    ``human_records`` (annotation sessions) or the oracle. In transfer mode
    the frozen explainer produces the explanation and the record is marked
    generated-source. Backend failures propagate and leave the pool
    unchanged.
    """
    config = state.config
    selected_examples = [state.dataset[eid] for eid in selected_ids]
    train_start = time.perf_counter()

    if config.mode == "transfer":
        generated = state.explainer.generate(
            [render_explainer_input(ex) for ex in selected_examples],
            example_ids=list(selected_ids),
        )
        state.record({"event": "explainer.generate", "iteration": state.completed + 1,
                      "inputs": len(selected_ids)})
        records = [
            LabeledRecord(
                example_id=ex.id,
                label=ex.gold_label,
                explanation=text,
                source="generated",
                iteration=state.completed + 1,
            )
            for ex, text in zip(selected_examples, generated)
        ]
        generated_map = {ex.id: text for ex, text in zip(selected_examples, generated)}
    else:
        records = list(human_records) if human_records is not None else oracle_annotations(state, selected_ids)
        if {r.example_id for r in records} != set(selected_ids):
            raise EngineError("annotations do not cover the selected batch")
        explainer_records = [r for r in state.pool.labeled if r.source in ("human", "oracle")] + list(records)
        if not config.warm_start:
            state.explainer.reset()
        pairs = make_explainer_pairs(explainer_records, state.dataset)
        state.explainer.fine_tune(pairs, config.explainer_hp)
        state.explainer_fine_tune_calls += 1
        state.record({"event": "explainer.fine_tune", "iteration": state.completed + 1,
                      "pairs": len(pairs)})

        generated = state.explainer.generate(
            [render_explainer_input(ex) for ex in selected_examples],
            example_ids=list(selected_ids),
        )
        state.record({"event": "explainer.generate", "iteration": state.completed + 1,
                      "inputs": len(selected_ids)})
        generated_map = {eid: text for eid, text in zip(selected_ids, generated)}

    predictor_records = records
    if not config.warm_start and config.mode != "transfer":
        # Cold start retrains the predictor on every labeled example, with
        # explanations regenerated by the current explainer.
        state.predictor.reset()
        prior = list(state.pool.labeled)
        if prior:
            prior_ids = [r.example_id for r in prior]
            regenerated = state.explainer.generate(
                [render_explainer_input(state.dataset[eid]) for eid in prior_ids],
                example_ids=prior_ids,
            )
            generated_map = dict(generated_map)
            generated_map.update(zip(prior_ids, regenerated))
        predictor_records = prior + list(records)
    predictor_pairs = make_predictor_pairs(predictor_records, generated_map, state.dataset)
    state.predictor.fine_tune(predictor_pairs, config.predictor_hp)
    state.record({"event": "predictor.fine_tune", "iteration": state.completed + 1,
                  "pairs": len(predictor_pairs)})
    train_ms = (time.perf_counter() - train_start) * 1000.0

    eval_start = time.perf_counter()
    if state.eval_examples:
        accuracy = evaluate(state.predictor, state.eval_examples, state.explainer)
    else:
        accuracy = float("nan")  # annotation sessions without an eval split
    eval_ms = (time.perf_counter() - eval_start) * 1000.0

    state.pool.commit_annotations(records)
    state.completed += 1
    result = IterationResult(
        iteration=state.completed,
        selected_ids=tuple(selected_ids),
        accuracy=accuracy,
        n_labeled=len(state.pool.labeled),
        timing={
            "selection_ms": state.pending_selection_ms,
            "train_ms": train_ms,
            "eval_ms": eval_ms,
        },
    )
    state.pending_selection_ms = 0.0
    return result


def run_iteration(state: TrialState) -> IterationResult:
    """One full select -> annotate -> train -> evaluate cycle."""
    selected = propose_batch(state)
    return complete_iteration(state, selected)


def run_trial(
    config: ALConfig,
    train_dataset: Dataset,
    eval_dataset: Dataset,
    trial_index: int = 0,
    backend_factory=None,
    recorder: Optional[Callable[[dict], None]] = None,
    pool: Optional[DataPool] = None,
    eval_examples: Optional[Sequence[Example]] = None,
    embedder_factory: Optional[Callable[[], object]] = None,
) -> TrialCurve:
    """Run ``config.iterations`` iterations on a fresh trial."""
    state = build_trial_state(
        config,
        train_dataset,
        eval_dataset,
        trial_index=trial_index,
        backend_factory=backend_factory,
        recorder=recorder,
        pool=pool,
        eval_examples=eval_examples,
        embedder_factory=embedder_factory,
    )
    results = []
    for _ in range(config.iterations):
        try:
            results.append(run_iteration(state))
        except Exception as exc:
            raise EngineError(f"trial {trial_index} failed at iteration {state.completed + 1}: {exc}") from exc
    return TrialCurve(
        trial_index=trial_index,
        trial_seed=derive_seed(config.master_seed, trial_index, ROLE_BACKEND),
        results=tuple(results),
    )


def _trial_worker(args) -> TrialCurve:
    config, train_dataset, eval_dataset, trial_index, backend_factory = args
    return run_trial(config, train_dataset, eval_dataset, trial_index, backend_factory)


def run_simulation(
    config: ALConfig,
    train_dataset: Dataset,
    eval_dataset: Dataset,
    backend_factory=None,
    jobs: int = 1,
    recorder: Optional[Callable[[dict], None]] = None,
) -> list[TrialCurve]:
    """Run ``config.trial_count`` independent trials, ordered by index."""
    indices = list(range(config.trial_count))
    if jobs > 1 and config.trial_count > 1:
        factory = backend_factory or SimulatedBackendFactory()
        args = [(config, train_dataset, eval_dataset, i, factory) for i in indices]
        with ProcessPoolExecutor(max_workers=jobs) as pool_exec:
            return list(pool_exec.map(_trial_worker, args))
    return [
        run_trial(config, train_dataset, eval_dataset, i, backend_factory, recorder=recorder)
        for i in indices
    ]


@dataclass(frozen=True)
class PreliminaryResult:
    k_per_category: int
    total_examples: int
    accuracies: tuple[float, ...]
    mean: float
    std: float


def run_preliminary(
    config: ALConfig,
    train_dataset: Dataset,
    eval_dataset: Dataset,
    backend_factory=None,
    k_values: Optional[Sequence[int]] = None,
    sub_trials: int = 3,
) -> list[PreliminaryResult]:
    """One-shot train/evaluate at each per-category size, averaged over
    randomly re-sampled sub-trials. Epoch counts follow the per-size preset.
    """
    if config.mode != "preliminary":
        raise EngineError("run_preliminary requires mode='preliminary'")
    sizes = list(k_values) if k_values is not None else list(PRELIMINARY_SIZES)
    out = []
    for k_index, k in enumerate(sizes):
        explainer_hp, predictor_hp = one_shot_hyperparameters(k)
        shot_config = replace(
            config,
            quota=Quota(k, per_category=True),
            pool_per_category=k,
            explainer_hp=explainer_hp,
            predictor_hp=predictor_hp,
        )
        accuracies = []
        for sub in range(sub_trials):
            curve = run_trial(
                shot_config,
                train_dataset,
                eval_dataset,
                trial_index=k_index * sub_trials + sub,
                backend_factory=backend_factory,
            )
            accuracies.append(curve.results[-1].accuracy)
        arr = np.asarray(accuracies)
        std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        out.append(
            PreliminaryResult(
                k_per_category=k,
                total_examples=k * 3,
                accuracies=tuple(accuracies),
                mean=float(arr.mean()),
                std=std,
            )
        )
    return out


# --- run directory layout -------------------------------------------------

def curve_csv_lines(curve: TrialCurve) -> list[str]:
    """Deterministic curve rows: trial, iteration, n_labeled, accuracy."""
    lines = ["trial,iteration,n_labeled,accuracy"]
    for r in curve.results:
        lines.append(f"{curve.trial_index},{r.iteration},{r.n_labeled},{r.accuracy!r}")
    return lines


def timing_csv_lines(curve: TrialCurve) -> list[str]:
    lines = ["trial,iteration,selection_ms,train_ms,eval_ms"]
    for r in curve.results:
        t = r.timing
        lines.append(
            f"{curve.trial_index},{r.iteration},{t.get('selection_ms', 0.0):.3f},"
            f"{t.get('train_ms', 0.0):.3f},{t.get('eval_ms', 0.0):.3f}"
        )
    return lines


def write_run_directory(out_dir: str | Path, config: ALConfig, curves: Sequence[TrialCurve]) -> Path:
    """Write the run layout: config snapshot, per-trial curve and timing
    CSVs, and per-iteration selected-id logs.

    Timing lives in sibling files so the curve CSVs are byte-identical
    across replays of the same master seed.
    """
    out = Path(out_dir)
    (out / "trials").mkdir(parents=True, exist_ok=True)
    (out / "selected").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
    for curve in curves:
        stem = f"trial_{curve.trial_index:03d}"
        (out / "trials" / f"{stem}.csv").write_text(
            "\n".join(curve_csv_lines(curve)) + "\n", encoding="utf-8"
        )
        (out / "trials" / f"{stem}_timing.csv").write_text(
            "\n".join(timing_csv_lines(curve)) + "\n", encoding="utf-8"
        )
        selected_lines = ["trial,iteration,example_id"]
        for r in curve.results:
            selected_lines.extend(
                f"{curve.trial_index},{r.iteration},{eid}" for eid in r.selected_ids
            )
        (out / "selected" / f"{stem}.csv").write_text(
            "\n".join(selected_lines) + "\n", encoding="utf-8"
        )
    return out


def read_run_curves(run_dir: str | Path) -> tuple[ALConfig, list[TrialCurve]]:
    """Load a run directory back into config + curves (timing omitted)."""
    run_dir = Path(run_dir)
    config = ALConfig.from_dict(json.loads((run_dir / "config.json").read_text(encoding="utf-8")))
    curves = []
    trial_files = sorted(
        p for p in (run_dir / "trials").glob("trial_*.csv") if not p.stem.endswith("_timing")
    )
    if not trial_files:
        raise EngineError(f"{run_dir}: no trial curve files")
    for path in trial_files:
        lines = path.read_text(encoding="utf-8").strip().splitlines()
        results = []
        trial_index = 0
        for line in lines[1:]:
            trial_str, iteration, n_labeled, accuracy = line.split(",")
            trial_index = int(trial_str)
            results.append(
                IterationResult(
                    iteration=int(iteration),
                    selected_ids=(),
                    accuracy=float(accuracy),
                    n_labeled=int(n_labeled),
                )
            )
        curves.append(TrialCurve(trial_index=trial_index, trial_seed=0, results=tuple(results)))
    return config, curves
