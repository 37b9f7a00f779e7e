import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expal.corpus import LABELS
from expal.service import (
    AnnotationService,
    BatchMismatchError,
    InvalidConfigError,
    PhaseError,
    SessionConfig,
    SessionStorage,
    UnknownResourceError,
    validate_session_payload,
)

from conftest import make_dataset


class SimulatedCrash(Exception):
    pass


class CrashingStorage(SessionStorage):
    """Stops persisting after a write budget, optionally tearing the last
    write in half, then raises. A fresh SessionStorage over the same
    directory plays the restarted process."""

    def __init__(self, root, crash_after_writes=None, torn=False):
        super().__init__(root)
        self.writes = 0
        self.crash_after_writes = crash_after_writes
        self.torn = torn

    def _durable_write(self, path, data, append):
        if self.crash_after_writes is not None and self.writes >= self.crash_after_writes:
            if self.torn and len(data) > 1:
                super()._durable_write(path, data[: len(data) // 2], append)
            raise SimulatedCrash(f"crash at write {self.writes}")
        self.writes += 1
        super()._durable_write(path, data, append)


def make_service(tmp_path, storage=None, **config_overrides):
    dataset = make_dataset(12, seed=41, prefix="an")
    eval_dataset = make_dataset(4, seed=43, prefix="ev")
    service = AnnotationService(
        storage=storage or SessionStorage(tmp_path),
        datasets={"toy": dataset, "toyeval": eval_dataset},
    )
    config = SessionConfig(
        x_total=3,
        seed=7,
        eval_dataset="toyeval",
        eval_per_category=2,
        **config_overrides,
    )
    return service, service.create_session("toy", config)


def annotate_batch(batch, tag="t"):
    return [
        {
            "example_id": item["example_id"],
            "label": LABELS[i % 3],
            "explanation": f"human text {tag} {item['example_id']}",
            "annotator_id": "alice",
        }
        for i, item in enumerate(batch["items"])
    ]


class TestSessionLifecycle:
    def test_create_and_metrics(self, tmp_path):
        service, sid = make_service(tmp_path)
        metrics = service.get_metrics(sid)
        assert metrics["phase"] == "awaiting_batch"
        assert metrics["curve"] == []
        assert metrics["unlabeled"] == 36
        assert metrics["labeled"] == 0

    def test_unknown_dataset(self, tmp_path):
        service = AnnotationService(storage=tmp_path, datasets={})
        with pytest.raises(UnknownResourceError):
            service.create_session("missing", SessionConfig())

    def test_unknown_session(self, tmp_path):
        service, _ = make_service(tmp_path)
        with pytest.raises(UnknownResourceError):
            service.get_metrics("nope")

    def test_simulation_only_fields_rejected(self):
        with pytest.raises(InvalidConfigError, match="trial_count"):
            validate_session_payload({"trial_count": 5})
        with pytest.raises(InvalidConfigError, match="stratify"):
            validate_session_payload({"per_category": True})
        with pytest.raises(InvalidConfigError, match="unknown config fields"):
            validate_session_payload({"bogus_knob": 1})

    def test_payload_accepts_annotation_fields(self):
        config = validate_session_payload({"x_total": 5, "strategy": "random", "seed": 3, "trial_count": 1})
        assert config.x_total == 5


class TestAnnotationLoop:
    def test_first_batch_has_no_suggestions(self, tmp_path):
        service, sid = make_service(tmp_path)
        batch = service.next_batch(sid)
        assert len(batch["items"]) == 3
        assert all(item["suggested_explanation"] is None for item in batch["items"])

    def test_second_batch_has_suggestions(self, tmp_path):
        service, sid = make_service(tmp_path)
        batch = service.next_batch(sid)
        service.submit_annotations(sid, annotate_batch(batch))
        second = service.next_batch(sid)
        assert len(second["items"]) == 3
        assert all(item["suggested_explanation"] for item in second["items"])

    def test_next_batch_wrong_phase(self, tmp_path):
        service, sid = make_service(tmp_path)
        service.next_batch(sid)
        with pytest.raises(PhaseError):
            service.next_batch(sid)

    def test_submit_partial_batch_lists_missing(self, tmp_path):
        service, sid = make_service(tmp_path)
        batch = service.next_batch(sid)
        events = annotate_batch(batch)[:-1]
        with pytest.raises(BatchMismatchError) as excinfo:
            service.submit_annotations(sid, events)
        assert excinfo.value.missing == [batch["items"][-1]["example_id"]]
        # No state change: same batch still awaiting.
        assert service.get_metrics(sid)["phase"] == "awaiting_annotations"
        assert service.get_metrics(sid)["labeled"] == 0

    def test_submit_empty_explanation_rejected(self, tmp_path):
        service, sid = make_service(tmp_path)
        batch = service.next_batch(sid)
        events = annotate_batch(batch)
        events[1]["explanation"] = "   "
        with pytest.raises(BatchMismatchError, match="empty explanation"):
            service.submit_annotations(sid, events)

    def test_duplicate_submission_after_ack_rejected(self, tmp_path):
        service, sid = make_service(tmp_path)
        batch = service.next_batch(sid)
        events = annotate_batch(batch)
        receipt = service.submit_annotations(sid, events)
        assert receipt["accepted"] == 3
        with pytest.raises(PhaseError):
            service.submit_annotations(sid, events)

    def test_curve_grows_per_round(self, tmp_path):
        service, sid = make_service(tmp_path)
        for round_index in range(3):
            batch = service.next_batch(sid)
            service.submit_annotations(sid, annotate_batch(batch, tag=str(round_index)))
            metrics = service.get_metrics(sid)
            assert metrics["phase"] == "awaiting_batch"
            assert len(metrics["curve"]) == round_index + 1
            assert metrics["labeled"] == (round_index + 1) * 3
            point = metrics["curve"][-1]
            assert point["n_labeled"] == (round_index + 1) * 3
            assert 0.0 <= point["accuracy"] <= 1.0

    def test_curve_without_eval_set_has_null_accuracy(self, tmp_path):
        dataset = make_dataset(6, seed=50, prefix="an")
        service = AnnotationService(storage=tmp_path, datasets={"toy": dataset})
        sid = service.create_session("toy", SessionConfig(x_total=2, seed=1))
        batch = service.next_batch(sid)
        service.submit_annotations(sid, annotate_batch(batch))
        assert service.get_metrics(sid)["curve"][0]["accuracy"] is None

    def test_get_example(self, tmp_path):
        service, sid = make_service(tmp_path)
        batch = service.next_batch(sid)
        eid = batch["items"][0]["example_id"]
        payload = service.get_example(sid, eid)
        assert payload["premise"] and payload["hypothesis"]
        service.submit_annotations(sid, annotate_batch(batch))
        annotated = service.get_example(sid, eid)
        assert annotated["annotation"]["explanation"].startswith("human text")

    def test_exactly_once_labeling(self, tmp_path):
        service, sid = make_service(tmp_path)
        seen = set()
        for round_index in range(4):
            batch = service.next_batch(sid)
            ids = {item["example_id"] for item in batch["items"]}
            assert not (ids & seen)
            seen |= ids
            service.submit_annotations(sid, annotate_batch(batch, tag=str(round_index)))

    def test_pool_exhaustion(self, tmp_path):
        dataset = make_dataset(1, seed=51, prefix="an")  # 3 examples total
        service = AnnotationService(storage=tmp_path, datasets={"toy": dataset})
        sid = service.create_session("toy", SessionConfig(x_total=2, seed=1))
        batch = service.next_batch(sid)
        service.submit_annotations(sid, annotate_batch(batch))
        with pytest.raises(PhaseError, match="pool exhausted"):
            service.next_batch(sid)

    def test_max_rounds_goes_idle(self, tmp_path):
        service, sid = make_service(tmp_path, max_rounds=1)
        batch = service.next_batch(sid)
        service.submit_annotations(sid, annotate_batch(batch))
        assert service.get_metrics(sid)["phase"] == "idle"
        with pytest.raises(PhaseError):
            service.next_batch(sid)


def test_remote_embedder_selects_like_builtin(tmp_path):
    # The embedding service wraps the builtin embedder, so selection through
    # the remote path must match the local one id for id.
    from fastapi.testclient import TestClient

    from expal.embedding import RemoteEmbedder
    from expal.model_service import build_embedding_app

    app = build_embedding_app(dimension=1024)
    datasets = lambda: {"toy": make_dataset(12, seed=41, prefix="an")}
    local = AnnotationService(storage=tmp_path / "local", datasets=datasets())
    remote = AnnotationService(
        storage=tmp_path / "remote",
        datasets=datasets(),
        embedder_factory=lambda: RemoteEmbedder("http://emb", client=TestClient(app), memoize=True),
    )
    config = SessionConfig(x_total=4, seed=3)
    sid_local = local.create_session("toy", config)
    sid_remote = remote.create_session("toy", config)
    batch_local = local.next_batch(sid_local)
    batch_remote = remote.next_batch(sid_remote)
    assert [i["example_id"] for i in batch_local["items"]] == [
        i["example_id"] for i in batch_remote["items"]
    ]


class TestPhaseMachine:
    @given(st.lists(st.sampled_from(["batch", "submit", "partial", "metrics"]), max_size=12))
    @settings(max_examples=40, deadline=None)
    def test_no_illegal_transitions(self, tmp_path_factory, ops):
        tmp_path = tmp_path_factory.mktemp("phase")
        service, sid = make_service(tmp_path)
        phase = "awaiting_batch"
        for op in ops:
            current = service.get_metrics(sid)["phase"]
            assert current == phase
            session = service.sessions[sid]
            assert bool(session.current_batch) == (current == "awaiting_annotations")
            if op == "batch":
                try:
                    service.next_batch(sid)
                    assert phase == "awaiting_batch"
                    phase = "awaiting_annotations"
                except PhaseError:
                    assert phase != "awaiting_batch" or not _can_serve(service, sid)
            elif op == "submit":
                batch = service.sessions[sid].current_batch
                events = [
                    {"example_id": item["example_id"], "label": "neutral", "explanation": "ok"}
                    for item in batch
                ]
                try:
                    service.submit_annotations(sid, events)
                    assert phase == "awaiting_annotations"
                    phase = "awaiting_batch"  # synchronous training completes
                except (PhaseError, BatchMismatchError):
                    assert phase != "awaiting_annotations"
            elif op == "partial":
                batch = service.sessions[sid].current_batch
                events = [
                    {"example_id": item["example_id"], "label": "neutral", "explanation": "ok"}
                    for item in batch[:-1]
                ]
                try:
                    service.submit_annotations(sid, events)
                    assert False, "partial submission must never be accepted"
                except BatchMismatchError:
                    assert phase == "awaiting_annotations"
                except PhaseError:
                    assert phase != "awaiting_annotations"
            else:
                service.get_metrics(sid)


def _can_serve(service, sid):
    session = service.sessions[sid]
    return len(session.state.pool.unlabeled) >= session.config.x_total


class TestRecovery:
    def test_restart_recovers_acked_rounds(self, tmp_path):
        service, sid = make_service(tmp_path)
        annotations = {}
        for round_index in range(2):
            batch = service.next_batch(sid)
            events = annotate_batch(batch, tag=str(round_index))
            for event in events:
                annotations[event["example_id"]] = event["explanation"]
            service.submit_annotations(sid, events)
        before = service.get_metrics(sid)

        restarted = AnnotationService(
            storage=SessionStorage(tmp_path),
            datasets={"toy": make_dataset(12, seed=41, prefix="an"),
                      "toyeval": make_dataset(4, seed=43, prefix="ev")},
        )
        after = restarted.get_metrics(sid)
        assert after["phase"] == "awaiting_batch"
        assert after["labeled"] == before["labeled"]
        assert after["curve"] == before["curve"]
        recovered = {r.example_id: r.explanation for r in restarted.sessions[sid].state.pool.labeled}
        assert recovered == annotations

    def test_unfinished_batch_reserved_verbatim(self, tmp_path):
        service, sid = make_service(tmp_path)
        batch = service.next_batch(sid)
        served_ids = [item["example_id"] for item in batch["items"]]

        restarted = AnnotationService(
            storage=SessionStorage(tmp_path),
            datasets={"toy": make_dataset(12, seed=41, prefix="an"),
                      "toyeval": make_dataset(4, seed=43, prefix="ev")},
        )
        metrics = restarted.get_metrics(sid)
        assert metrics["phase"] == "awaiting_annotations"
        again = restarted.current_batch(sid)
        assert [item["example_id"] for item in again["items"]] == served_ids
        # And the loop continues normally after recovery.
        restarted.submit_annotations(sid, annotate_batch(again))
        assert restarted.get_metrics(sid)["labeled"] == 3

    def test_corrupt_log_line_quarantined(self, tmp_path):
        service, sid = make_service(tmp_path)
        batch = service.next_batch(sid)
        service.submit_annotations(sid, annotate_batch(batch))
        events_path = tmp_path / "sessions" / sid / "events.log"
        with events_path.open("a", encoding="utf-8") as handle:
            handle.write('{"torn json...\n')
        restarted = AnnotationService(
            storage=SessionStorage(tmp_path),
            datasets={"toy": make_dataset(12, seed=41, prefix="an"),
                      "toyeval": make_dataset(4, seed=43, prefix="ev")},
        )
        metrics = restarted.get_metrics(sid)
        assert any("quarantined" in flag for flag in metrics["flags"])
        assert metrics["labeled"] == 3  # the acked round survived

    def test_empty_storage_zero_sessions(self, tmp_path):
        service = AnnotationService(storage=tmp_path, datasets={})
        assert service.sessions == {}


def drive_with_crashes(tmp_path, crash_after, torn, rounds=3):
    """Run an annotation session to completion, crashing once at the given
    durable-write boundary, then recovering. Returns invariant data."""
    datasets = lambda: {
        "toy": make_dataset(12, seed=41, prefix="an"),
        "toyeval": make_dataset(4, seed=43, prefix="ev"),
    }
    config = SessionConfig(x_total=3, seed=7, eval_dataset="toyeval", eval_per_category=2)
    storage = CrashingStorage(tmp_path, crash_after_writes=crash_after, torn=torn)
    acked = {}  # example_id -> explanation, only for acked submissions
    sid = None
    crashed = False

    def loop(service, sid):
        while service.get_metrics(sid)["rounds_completed"] < rounds:
            phase = service.get_metrics(sid)["phase"]
            if phase == "awaiting_batch":
                batch = service.next_batch(sid)
            else:
                batch = service.current_batch(sid)
            events = annotate_batch(batch, tag="r")
            service.submit_annotations(sid, events)
            for event in events:
                acked[event["example_id"]] = event["explanation"]

    try:
        service = AnnotationService(storage=storage, datasets=datasets())
        sid = service.create_session("toy", config)
        loop(service, sid)
    except SimulatedCrash:
        crashed = True

    # Restart on clean storage (the crash point never repeats).
    recovered = AnnotationService(storage=SessionStorage(tmp_path), datasets=datasets())
    if sid is None or sid not in recovered.sessions:
        # Crashed during session creation; nothing was acknowledged.
        assert not acked
        sid = recovered.create_session("toy", config)
    state = recovered.sessions[sid].state
    for eid, explanation in acked.items():
        match = [r for r in state.pool.labeled if r.example_id == eid]
        assert len(match) == 1, f"acked annotation lost or duplicated: {eid}"
        assert match[0].explanation == explanation
    loop(recovered, sid)

    metrics = recovered.get_metrics(sid)
    labeled = recovered.sessions[sid].state.pool.labeled
    ids = [r.example_id for r in labeled]
    assert len(ids) == len(set(ids)), "duplicated labels"
    assert metrics["labeled"] == rounds * config.x_total
    assert len(metrics["curve"]) == rounds
    for eid, explanation in acked.items():
        match = [r for r in labeled if r.example_id == eid]
        assert len(match) == 1 and match[0].explanation == explanation
    return crashed


class TestCrashInjection:
    def test_crash_sweep_all_boundaries(self, tmp_path):
        # 1 snapshot + rounds * (1 batch + 1 events) writes = 7 boundaries.
        crash_seen = 0
        for crash_after in range(8):
            for torn in (False, True):
                directory = tmp_path / f"c{crash_after}_{int(torn)}"
                crashed = drive_with_crashes(directory, crash_after, torn)
                crash_seen += crashed
        assert crash_seen > 0

    def test_no_crash_baseline(self, tmp_path):
        assert drive_with_crashes(tmp_path, crash_after=None, torn=False) is False
