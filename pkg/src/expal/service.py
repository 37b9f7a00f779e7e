"""Human-in-the-loop annotation service.

Sessions walk a strict phase machine (awaiting_batch ->
awaiting_annotations -> training -> awaiting_batch, or -> idle). Every
acknowledged annotation is appended to a per-session JSONL event log and
fsynced *before* the acknowledgment leaves the process; proposed batches
are logged the same way before they are served. Recovery replays the
snapshot plus both logs: complete batches are re-trained from the logged
annotations (never re-asked of humans), and an unfinished batch is
re-served verbatim.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import (
    DataPool,
    Dataset,
    LABELS,
    LabeledRecord,
    read_records,
    stratified_sample,
    uniform_sample,
)
from .embedding import HashedTfEmbedder
from .engine import (
    ALConfig,
    ROLE_SELECT,
    SimulatedBackendFactory,
    TrialState,
    complete_iteration,
    derive_seed,
    propose_batch,
)
from .modeling import DEFAULT_EXPLAINER_HP, DEFAULT_PREDICTOR_HP, Hyperparameters, render_explainer_input
from .selector import Quota, Strategy

PHASES = ("awaiting_batch", "awaiting_annotations", "training", "idle")

ROLE_SESSION_BACKEND = 100


class ServiceError(Exception):
    status_code = 500


class UnknownResourceError(ServiceError):
    status_code = 404


class InvalidConfigError(ServiceError):
    status_code = 400


class PhaseError(ServiceError):
    status_code = 409


class BatchMismatchError(ServiceError):
    status_code = 422

    def __init__(self, message: str, missing: Sequence[str] = (), unknown: Sequence[str] = ()):
        super().__init__(message)
        self.missing = list(missing)
        self.unknown = list(unknown)


@dataclass(frozen=True)
class AnnotationEvent:
    session_id: str
    example_id: str
    label: str
    explanation: str
    annotator_id: str
    timestamp: float

    def to_json(self) -> str:
        return json.dumps(vars(self), ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: Mapping) -> "AnnotationEvent":
        return cls(
            session_id=str(data["session_id"]),
            example_id=str(data["example_id"]),
            label=str(data["label"]),
            explanation=str(data["explanation"]),
            annotator_id=str(data.get("annotator_id", "")),
            timestamp=float(data.get("timestamp", 0.0)),
        )


@dataclass(frozen=True)
class SessionConfig:
    """Annotation-mode configuration; quotas are totals (gold labels are
    unknown at selection time, so per-category stratification is illegal)."""

    x_total: int = 9
    strategy: str = "explanation_diversity"
    seed: int = 0
    pool_size: Optional[int] = None
    eval_dataset: Optional[str] = None
    eval_per_category: int = 0
    explainer_hp: Hyperparameters = DEFAULT_EXPLAINER_HP
    predictor_hp: Hyperparameters = DEFAULT_PREDICTOR_HP
    max_rounds: Optional[int] = None
    show_predicted_label: bool = False
    annotator_required: bool = False

    def __post_init__(self) -> None:
        if self.x_total < 1:
            raise InvalidConfigError("x_total must be >= 1")
        if self.strategy not in ("random", "content_diversity", "explanation_diversity"):
            raise InvalidConfigError(f"unknown strategy {self.strategy!r}")
        if self.eval_per_category < 0:
            raise InvalidConfigError("eval_per_category must be >= 0")
        if self.eval_dataset is not None and self.eval_per_category < 1:
            raise InvalidConfigError("eval_dataset requires eval_per_category >= 1")

    def to_dict(self) -> dict:
        data = dict(vars(self))
        data["explainer_hp"] = vars(self.explainer_hp)
        data["predictor_hp"] = vars(self.predictor_hp)
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "SessionConfig":
        data = dict(data)
        if isinstance(data.get("explainer_hp"), Mapping):
            data["explainer_hp"] = Hyperparameters(**data["explainer_hp"])
        if isinstance(data.get("predictor_hp"), Mapping):
            data["predictor_hp"] = Hyperparameters(**data["predictor_hp"])
        return cls(**data)


def validate_session_payload(payload: Mapping) -> SessionConfig:
    """Build a SessionConfig from a request payload, rejecting
    simulation-only knobs (trial counts, per-category quotas, modes)."""
    data = dict(payload)
    trial_count = data.pop("trial_count", 1)
    if trial_count not in (None, 1):
        raise InvalidConfigError("trial_count > 1 is a simulation-only setting")
    mode = data.pop("mode", "standard")
    if mode not in (None, "standard"):
        raise InvalidConfigError(f"annotation sessions only support standard mode, not {mode!r}")
    if data.pop("per_category", False):
        raise InvalidConfigError("annotation sessions cannot stratify by gold label")
    unknown = set(data) - {f for f in SessionConfig.__dataclass_fields__}
    if unknown:
        raise InvalidConfigError(f"unknown config fields: {sorted(unknown)}")
    try:
        return SessionConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InvalidConfigError(str(exc)) from exc


class SessionStorage:
    """Append-only JSONL logs plus a write-once snapshot per session.

    ``append_lines`` issues a single O_APPEND write followed by fsync; the
    acknowledgment barrier for annotations sits on that fsync.
    """

    SNAPSHOT = "snapshot.json"
    BATCHES = "batches.log"
    EVENTS = "events.log"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)

    def session_dir(self, session_id: str) -> Path:
        return self.root / "sessions" / session_id

    def session_ids(self) -> list[str]:
        base = self.root / "sessions"
        return sorted(p.name for p in base.iterdir() if p.is_dir())

    def write_snapshot(self, session_id: str, payload: dict) -> None:
        directory = self.session_dir(session_id)
        directory.mkdir(parents=True, exist_ok=True)
        final = directory / self.SNAPSHOT
        tmp = directory / (self.SNAPSHOT + ".tmp")
        data = (json.dumps(payload, ensure_ascii=False, indent=2) + "\n").encode("utf-8")
        self._durable_write(tmp, data, append=False)
        os.replace(tmp, final)

    def read_snapshot(self, session_id: str) -> Optional[dict]:
        path = self.session_dir(session_id) / self.SNAPSHOT
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return None

    def append_lines(self, session_id: str, log_name: str, lines: Sequence[str]) -> None:
        path = self.session_dir(session_id) / log_name
        payload = "".join(line + "\n" for line in lines).encode("utf-8")
        self._durable_write(path, payload, append=True)

    def _durable_write(self, path: Path, data: bytes, append: bool) -> None:
        flags = os.O_WRONLY | os.O_CREAT | (os.O_APPEND if append else os.O_TRUNC)
        fd = os.open(path, flags, 0o644)
        try:
            os.write(fd, data)
            os.fsync(fd)
        finally:
            os.close(fd)

    def read_log(self, session_id: str, log_name: str) -> tuple[list[dict], list[int]]:
        """Parse a JSONL log; unparseable lines are quarantined by number."""
        path = self.session_dir(session_id) / log_name
        if not path.exists():
            return [], []
        entries: list[dict] = []
        quarantined: list[int] = []
        with path.open("r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entries.append(json.loads(line))
                except json.JSONDecodeError:
                    quarantined.append(lineno)
        return entries, quarantined


@dataclass
class Session:
    id: str
    config: SessionConfig
    dataset_ref: str
    state: TrialState
    phase: str = "awaiting_batch"
    current_batch: list[dict] = field(default_factory=list)  # {example_id, suggested_explanation}
    curve: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def completed_rounds(self) -> int:
        return self.state.completed

    def batch_ids(self) -> list[str]:
        return [item["example_id"] for item in self.current_batch]


class AnnotationService:
    """Session lifecycle, batch proposal, annotation intake, and recovery.

    Per-session mutations are serialized under the session lock; distinct
    sessions are independent. ``async_training=True`` runs the training
    phase on a worker thread (clients poll the phase via metrics);
    ``False`` trains inside the submit call, which recovery and tests use.
    """

    def __init__(
        self,
        storage: SessionStorage | str | Path,
        datasets: Mapping[str, Dataset | str | Path],
        backend_factory=None,
        embedder_factory=None,
        async_training: bool = False,
        recover: bool = True,
    ):
        self.storage = storage if isinstance(storage, SessionStorage) else SessionStorage(storage)
        self._datasets: dict[str, Dataset | str | Path] = dict(datasets)
        self._dataset_cache: dict[str, Dataset] = {}
        self.backend_factory = backend_factory or SimulatedBackendFactory()
        self.embedder_factory = embedder_factory or (lambda: HashedTfEmbedder(memoize=True))
        self.async_training = async_training
        self.sessions: dict[str, Session] = {}
        if recover:
            self.recover_sessions()

    # -- datasets ----------------------------------------------------------

    def dataset(self, ref: str) -> Dataset:
        if ref in self._dataset_cache:
            return self._dataset_cache[ref]
        if ref not in self._datasets:
            raise UnknownResourceError(f"unknown dataset {ref!r}")
        source = self._datasets[ref]
        dataset = source if isinstance(source, Dataset) else read_records(source, name=ref)
        self._dataset_cache[ref] = dataset
        return dataset

    # -- session construction ----------------------------------------------

    def _build_state(self, session_id: str, dataset_ref: str, config: SessionConfig) -> TrialState:
        dataset = self.dataset(dataset_ref)
        if config.pool_size is not None:
            pool = uniform_sample(dataset, config.pool_size, config.seed)
        else:
            pool = DataPool(unlabeled=dataset.ids(), dataset_ref=dataset.name)
        eval_examples = []
        if config.eval_dataset is not None:
            eval_dataset = self.dataset(config.eval_dataset)
            eval_pool = stratified_sample(eval_dataset, config.eval_per_category, config.seed)
            eval_examples = [eval_dataset[eid] for eid in eval_pool.unlabeled]
        examples_by_id = {ex.id: ex for ex in dataset}
        for ex in eval_examples:
            examples_by_id[ex.id] = ex
        backend_seed = derive_seed(config.seed, 0, ROLE_SESSION_BACKEND)
        explainer, predictor = self.backend_factory(examples_by_id, backend_seed)
        al_config = ALConfig(
            strategy=Strategy(config.strategy, seed=config.seed if config.strategy == "random" else None),
            quota=Quota(config.x_total, per_category=False),
            iterations=config.max_rounds or 1_000_000,
            explanation_source="human",
            explainer_hp=config.explainer_hp,
            predictor_hp=config.predictor_hp,
            eval_per_category=config.eval_per_category,
            master_seed=config.seed,
            mode="standard",
        )
        return TrialState(
            config=al_config,
            dataset=dataset,
            pool=pool,
            eval_examples=eval_examples,
            explainer=explainer,
            predictor=predictor,
            embedder=self.embedder_factory(),
            select_rng=np.random.Generator(np.random.PCG64(config.seed)),
        )

    def create_session(self, dataset_ref: str, config: SessionConfig | Mapping | None = None) -> str:
        if config is None:
            config = SessionConfig()
        elif isinstance(config, Mapping):
            config = validate_session_payload(config)
        dataset = self.dataset(dataset_ref)  # 404 before any persistence
        if config.pool_size is not None and config.pool_size > len(dataset):
            raise InvalidConfigError(
                f"pool_size {config.pool_size} exceeds dataset size {len(dataset)}"
            )
        session_id = uuid.uuid4().hex[:12]
        state = self._build_state(session_id, dataset_ref, config)
        session = Session(id=session_id, config=config, dataset_ref=dataset_ref, state=state)
        self.storage.write_snapshot(
            session_id,
            {
                "session_id": session_id,
                "dataset_ref": dataset_ref,
                "config": config.to_dict(),
                "created_at": time.time(),
            },
        )
        self.sessions[session_id] = session
        return session_id

    def _session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownResourceError(f"unknown session {session_id!r}")
        return session

    # -- the annotation loop -------------------------------------------------

    def next_batch(self, session_id: str) -> dict:
        session = self._session(session_id)
        with session.lock:
            if session.phase != "awaiting_batch":
                raise PhaseError(f"cannot serve a batch while {session.phase}")
            state = session.state
            if len(state.pool.unlabeled) < session.config.x_total:
                session.phase = "idle"
                raise PhaseError(
                    f"pool exhausted: {len(state.pool.unlabeled)} unlabeled left, batch is {session.config.x_total}"
                )
            round_index = state.completed
            state.select_rng = np.random.Generator(
                np.random.PCG64(derive_seed(session.config.seed, round_index, ROLE_SELECT))
            )
            selected = propose_batch(state)
            suggestions: dict[str, str] = {}
            predicted: dict[str, str] = {}
            if state.explainer_fine_tune_calls > 0:
                generated = state.explainer.generate(
                    [render_explainer_input(state.dataset[eid]) for eid in selected],
                    example_ids=selected,
                )
                suggestions = dict(zip(selected, generated))
                if session.config.show_predicted_label:
                    predicted = self._predict_labels(state, selected, suggestions)
            batch_record = {
                "round": round_index,
                "example_ids": list(selected),
                "suggestions": suggestions,
                "predicted": predicted,
            }
            # Durable before serving: recovery re-serves this exact batch.
            self.storage.append_lines(session_id, SessionStorage.BATCHES, [json.dumps(batch_record, ensure_ascii=False)])
            session.current_batch = [
                {
                    "example_id": eid,
                    "suggested_explanation": suggestions.get(eid),
                    "predicted_label": predicted.get(eid),
                }
                for eid in selected
            ]
            session.phase = "awaiting_annotations"
            return self._batch_payload(session)

    def _predict_labels(self, state: TrialState, selected: Sequence[str], suggestions: Mapping[str, str]) -> dict[str, str]:
        from .modeling import LabelParseError, parse_predicted_label, render_predictor_input

        inputs = [
            render_predictor_input(state.dataset[eid], suggestions.get(eid) or "(no explanation)")
            for eid in selected
        ]
        outputs = state.predictor.generate(inputs, example_ids=list(selected))
        predicted = {}
        for eid, text in zip(selected, outputs):
            try:
                predicted[eid] = parse_predicted_label(text)
            except LabelParseError:
                pass
        return predicted

    def _batch_payload(self, session: Session) -> dict:
        items = []
        for item in session.current_batch:
            example = session.state.dataset[item["example_id"]]
            entry = {
                "example_id": example.id,
                "premise": example.premise,
                "hypothesis": example.hypothesis,
                "suggested_explanation": item["suggested_explanation"],
            }
            if session.config.show_predicted_label:
                entry["predicted_label"] = item.get("predicted_label")
            items.append(entry)
        return {
            "session_id": session.id,
            "round": session.state.completed,
            "items": items,
        }

    def current_batch(self, session_id: str) -> dict:
        """The batch awaiting annotations, re-served verbatim."""
        session = self._session(session_id)
        with session.lock:
            if session.phase != "awaiting_annotations":
                raise PhaseError(f"no batch awaiting annotations (phase: {session.phase})")
            return self._batch_payload(session)

    def submit_annotations(self, session_id: str, events: Sequence[AnnotationEvent | Mapping]) -> dict:
        session = self._session(session_id)
        with session.lock:
            if session.phase != "awaiting_annotations":
                raise PhaseError(f"cannot accept annotations while {session.phase}")
            parsed = [
                e if isinstance(e, AnnotationEvent) else AnnotationEvent.from_dict({**e, "session_id": session_id})
                for e in events
            ]
            batch_ids = set(session.batch_ids())
            got_ids = [e.example_id for e in parsed]
            if len(set(got_ids)) != len(got_ids):
                raise BatchMismatchError("duplicate example ids in submission")
            unknown = [eid for eid in got_ids if eid not in batch_ids]
            missing = sorted(batch_ids - set(got_ids))
            if unknown or missing:
                raise BatchMismatchError(
                    f"submission must cover the batch exactly; missing={missing} unknown={unknown}",
                    missing=missing,
                    unknown=unknown,
                )
            for event in parsed:
                if event.label not in LABELS:
                    raise BatchMismatchError(f"unknown label {event.label!r} for {event.example_id}")
                if not event.explanation.strip():
                    raise BatchMismatchError(f"empty explanation for {event.example_id}")
                if session.config.annotator_required and not event.annotator_id:
                    raise BatchMismatchError(f"annotator_id required for {event.example_id}")
            stamped = [
                e if e.timestamp > 0 else AnnotationEvent(
                    session_id=e.session_id,
                    example_id=e.example_id,
                    label=e.label,
                    explanation=e.explanation,
                    annotator_id=e.annotator_id,
                    timestamp=time.time(),
                )
                for e in parsed
            ]
            # Log-before-ack: once these lines are fsynced the annotations
            # survive any crash; only then does the phase advance.
            self.storage.append_lines(
                session_id, SessionStorage.EVENTS, [e.to_json() for e in stamped]
            )
            session.phase = "training"
            round_index = session.state.completed
            batch_order = session.batch_ids()
            receipt = {"session_id": session_id, "round": round_index, "accepted": len(stamped)}

        if self.async_training:
            threading.Thread(
                target=self._train_round, args=(session, stamped, batch_order), daemon=True
            ).start()
        else:
            self._train_round(session, stamped, batch_order)
        return receipt

    def _train_round(
        self, session: Session, events: Sequence[AnnotationEvent], batch_ids: Sequence[str]
    ) -> None:
        with session.lock:
            state = session.state
            records = [
                LabeledRecord(
                    example_id=e.example_id,
                    label=e.label,
                    explanation=e.explanation,
                    source="human",
                    iteration=state.completed + 1,
                )
                for e in events
            ]
            try:
                result = complete_iteration(state, list(batch_ids), records)
            except Exception as exc:
                session.flags.append(f"training failed at round {state.completed}: {exc}")
                session.phase = "idle"
                return
            session.curve.append(
                {
                    "iteration": result.iteration,
                    "n_labeled": result.n_labeled,
                    "accuracy": None if math.isnan(result.accuracy) else result.accuracy,
                }
            )
            session.current_batch = []
            if session.config.max_rounds is not None and state.completed >= session.config.max_rounds:
                session.phase = "idle"
            else:
                session.phase = "awaiting_batch"

    # -- reads ---------------------------------------------------------------

    def get_metrics(self, session_id: str) -> dict:
        session = self._session(session_id)
        with session.lock:
            return {
                "session_id": session.id,
                "phase": session.phase,
                "rounds_completed": session.state.completed,
                "unlabeled": len(session.state.pool.unlabeled),
                "labeled": len(session.state.pool.labeled),
                "curve": [dict(point) for point in session.curve],
                "flags": list(session.flags),
            }

    def get_example(self, session_id: str, example_id: str) -> dict:
        session = self._session(session_id)
        dataset = session.state.dataset
        if example_id not in dataset:
            raise UnknownResourceError(f"unknown example {example_id!r}")
        example = dataset[example_id]
        record = next(
            (r for r in session.state.pool.labeled if r.example_id == example_id), None
        )
        payload = {
            "example_id": example.id,
            "premise": example.premise,
            "hypothesis": example.hypothesis,
        }
        if record is not None:
            payload["annotation"] = {
                "label": record.label,
                "explanation": record.explanation,
                "iteration": record.iteration,
            }
        return payload

    # -- recovery --------------------------------------------------------------

    def recover_sessions(self) -> list[str]:
        """Rebuild every persisted session by replaying its logs.

        Complete batches are re-trained from logged annotations (the
        simulated backends are deterministic, so the curve is reproduced);
        an incomplete trailing batch is re-served for annotation. Corrupt
        log lines are quarantined and flagged on the session.
        """
        recovered = []
        for session_id in self.storage.session_ids():
            snapshot = self.storage.read_snapshot(session_id)
            if snapshot is None:
                continue
            try:
                config = SessionConfig.from_dict(snapshot["config"])
                state = self._build_state(session_id, snapshot["dataset_ref"], config)
            except Exception as exc:
                # Dataset gone or snapshot unusable: surface a flagged shell.
                flagged = Session(
                    id=session_id,
                    config=SessionConfig(),
                    dataset_ref=str(snapshot.get("dataset_ref", "?")),
                    state=None,  # type: ignore[arg-type]
                    phase="idle",
                    flags=[f"unrecoverable: {exc}"],
                )
                self.sessions[session_id] = flagged
                continue
            session = Session(
                id=session_id, config=config, dataset_ref=snapshot["dataset_ref"], state=state
            )
            batches, bad_batches = self.storage.read_log(session_id, SessionStorage.BATCHES)
            events, bad_events = self.storage.read_log(session_id, SessionStorage.EVENTS)
            for lineno in bad_batches:
                session.flags.append(f"quarantined batches.log line {lineno}")
            for lineno in bad_events:
                session.flags.append(f"quarantined events.log line {lineno}")
            parsed_events = [AnnotationEvent.from_dict(e) for e in events]
            self._replay(session, batches, parsed_events)
            self.sessions[session_id] = session
            recovered.append(session_id)
        return recovered

    def _replay(self, session: Session, batches: Sequence[dict], events: Sequence[AnnotationEvent]) -> None:
        remaining = list(events)
        for batch in batches:
            ids = [str(e) for e in batch["example_ids"]]
            id_set = set(ids)
            # Latest event per id wins: an un-acked torn submission is
            # superseded by the re-submission that followed recovery.
            by_id: dict[str, AnnotationEvent] = {}
            leftovers = []
            for event in remaining:
                if event.example_id in id_set:
                    by_id[event.example_id] = event
                else:
                    leftovers.append(event)
            remaining = leftovers
            if set(by_id) == id_set:
                self._train_round(session, [by_id[eid] for eid in ids], ids)
                if session.phase == "idle" and session.flags:
                    return
            else:
                # Unfinished batch: re-serve it exactly as logged.
                suggestions = batch.get("suggestions") or {}
                predicted = batch.get("predicted") or {}
                session.current_batch = [
                    {
                        "example_id": eid,
                        "suggested_explanation": suggestions.get(eid),
                        "predicted_label": predicted.get(eid),
                    }
                    for eid in ids
                ]
                session.phase = "awaiting_annotations"
                if remaining:
                    session.flags.append(f"{len(remaining)} orphaned events after unfinished batch")
                return
        if remaining:
            session.flags.append(f"{len(remaining)} orphaned events with no matching batch")
        if session.phase == "training":
            session.phase = "awaiting_batch"
