import pytest

from expal.engine import (
    ALConfig,
    EngineError,
    SimulatedBackendFactory,
    build_trial_state,
    derive_seed,
    evaluate,
    preliminary_setting,
    read_run_curves,
    run_iteration,
    run_preliminary,
    run_simulation,
    run_trial,
    setting_1,
    setting_2,
    transfer_setting,
    write_run_directory,
)
from expal.modeling import SimulatedBackendConfig, SimulatedExplainer, SimulatedPredictor
from expal.selector import Quota, Strategy

from conftest import make_dataset


class RecordingBackend:
    """Wraps any backend and logs call order, pair payloads, and ids."""

    def __init__(self, inner, name, log):
        self.inner = inner
        self.name = name
        self.log = log

    def fine_tune(self, pairs, hp):
        self.log.append({"call": f"{self.name}.fine_tune", "pairs": list(pairs), "epochs": hp.epochs})
        return self.inner.fine_tune(pairs, hp)

    def generate(self, inputs, example_ids=None):
        self.log.append({"call": f"{self.name}.generate", "n": len(inputs),
                         "example_ids": tuple(example_ids or ())})
        return self.inner.generate(inputs, example_ids=example_ids)

    def reset(self):
        self.log.append({"call": f"{self.name}.reset"})
        return self.inner.reset()


class RecordingFactory:
    def __init__(self, log, sim=None):
        self.log = log
        self.sim = sim or SimulatedBackendConfig()
        self.inner = SimulatedBackendFactory(self.sim)

    def __call__(self, examples_by_id, seed):
        explainer, predictor = self.inner(examples_by_id, seed)
        return (
            RecordingBackend(explainer, "explainer", self.log),
            RecordingBackend(predictor, "predictor", self.log),
        )


class CanaryExplainer(SimulatedExplainer):
    """Generates explanations that share no text with the gold ones."""

    def generate(self, inputs, example_ids=None):
        return [f"CANARY::{eid}" for eid in (example_ids or [])]


class CanaryFactory:
    def __init__(self, log):
        self.log = log

    def __call__(self, examples_by_id, seed):
        config = SimulatedBackendConfig(seed=seed)
        return (
            RecordingBackend(CanaryExplainer(examples_by_id, config), "explainer", self.log),
            RecordingBackend(SimulatedPredictor(examples_by_id, config), "predictor", self.log),
        )


def small_config(**overrides):
    params = dict(pool_per_category=20, eval_per_category=6, trial_count=1, iterations=4)
    params.update(overrides)
    return setting_1(**params)


class TestConfig:
    def test_standard_requires_human_source(self):
        with pytest.raises(EngineError, match="human"):
            setting_1(explanation_source="generated")

    def test_transfer_requires_frozen_reference(self):
        with pytest.raises(EngineError, match="frozen explainer"):
            transfer_setting(frozen_explainer_ref=None)

    def test_preliminary_forces_single_shot_random(self):
        with pytest.raises(EngineError, match="single-shot"):
            preliminary_setting(iterations=2)
        with pytest.raises(EngineError, match="random"):
            preliminary_setting(strategy=Strategy("content_diversity"))

    def test_roundtrip_dict(self):
        config = setting_2(master_seed=42)
        assert ALConfig.from_dict(config.to_dict()) == config

    def test_derive_seed_stable(self):
        assert derive_seed(7, 0, 1) == derive_seed(7, 0, 1)
        assert derive_seed(7, 0, 1) != derive_seed(7, 1, 1)
        assert derive_seed(7, 0, 1) != derive_seed(8, 0, 1)


class TestIteration:
    def test_first_iteration_labels_nine(self, small_train, small_eval):
        state = build_trial_state(small_config(), small_train, small_eval)
        result = run_iteration(state)
        assert result.iteration == 1
        assert len(result.selected_ids) == 9
        assert result.n_labeled == 9
        assert 0.0 <= result.accuracy <= 1.0
        assert set(result.timing) == {"selection_ms", "train_ms", "eval_ms"}

    def test_repeat_run_identical(self, small_train, small_eval):
        def run():
            state = build_trial_state(small_config(), small_train, small_eval)
            return [run_iteration(state) for _ in range(3)]

        first, second = run(), run()
        assert [r.accuracy for r in first] == [r.accuracy for r in second]
        assert [r.selected_ids for r in first] == [r.selected_ids for r in second]

    def test_backend_failure_rolls_back_pool(self, small_train, small_eval):
        class FailingPredictor:
            def fine_tune(self, pairs, hp):
                raise RuntimeError("synthetic backend failure")

            def generate(self, inputs, example_ids=None):
                raise RuntimeError("unreachable")

            def reset(self):
                pass

        def factory(examples_by_id, seed):
            explainer, _ = SimulatedBackendFactory()(examples_by_id, seed)
            return explainer, FailingPredictor()

        state = build_trial_state(small_config(), small_train, small_eval, backend_factory=factory)
        before = list(state.pool.unlabeled)
        with pytest.raises(RuntimeError, match="synthetic backend failure"):
            run_iteration(state)
        assert state.pool.unlabeled == before
        assert state.pool.labeled == []
        assert state.completed == 0


class TestTrial:
    def test_setting_1_bookkeeping(self, small_eval):
        train = make_dataset(70, seed=21, prefix="tr")
        config = setting_1(pool_per_category=60, eval_per_category=5, trial_count=1)
        curve = run_trial(config, train, small_eval)
        assert len(curve.results) == 20
        assert all(len(r.selected_ids) == 9 for r in curve.results)
        assert curve.results[-1].n_labeled == 180
        for t, result in enumerate(curve.results, start=1):
            assert result.n_labeled == t * 9

    def test_setting_2_bookkeeping(self, small_eval):
        train = make_dataset(160, seed=22, prefix="tr")
        config = setting_2(pool_per_category=150, eval_per_category=5, trial_count=1)
        curve = run_trial(config, train, small_eval)
        assert len(curve.results) == 15
        assert all(len(r.selected_ids) == 30 for r in curve.results)
        assert curve.results[-1].n_labeled == 450

    def test_pool_conservation(self, small_train, small_eval):
        config = small_config()
        state = build_trial_state(config, small_train, small_eval)
        initial = state.pool.size
        for _ in range(config.iterations):
            run_iteration(state)
            assert state.pool.size == initial

    def test_same_trial_same_pool_across_selectors(self, small_train, small_eval):
        ids = {}
        for kind in ("explanation_diversity", "content_diversity", "random"):
            seed = 5 if kind == "random" else None
            config = small_config(strategy=Strategy(kind, seed=seed), master_seed=123)
            state = build_trial_state(config, small_train, small_eval, trial_index=4)
            ids[kind] = (tuple(state.pool.unlabeled), tuple(e.id for e in state.eval_examples))
        assert len(set(ids.values())) == 1

    def test_training_order_every_iteration(self, small_train, small_eval):
        log = []
        config = small_config()
        run_trial(config, small_train, small_eval, backend_factory=RecordingFactory(log))
        per_iteration = []
        current = []
        for entry in log:
            current.append(entry)
            # An iteration's window ends with the eval predictor.generate.
            if entry["call"] == "predictor.generate":
                per_iteration.append(current)
                current = []
        assert len(per_iteration) == config.iterations
        for window in per_iteration:
            names = [e["call"] for e in window]
            ft = names.index("explainer.fine_tune")
            gen = names.index("explainer.generate")
            pt = names.index("predictor.fine_tune")
            assert ft < gen < pt

    def test_eval_ids_constant_across_iterations(self, small_train, small_eval):
        log = []
        config = small_config()
        run_trial(config, small_train, small_eval, backend_factory=RecordingFactory(log))
        eval_size = config.eval_per_category * 3
        eval_calls = [
            entry for entry in log
            if entry["call"] == "explainer.generate" and len(entry["example_ids"]) == eval_size
        ]
        assert len(eval_calls) == config.iterations
        assert len({entry["example_ids"] for entry in eval_calls}) == 1

    def test_predictor_never_sees_gold_explanations(self, small_train, small_eval):
        log = []
        config = small_config()
        run_trial(config, small_train, small_eval, backend_factory=CanaryFactory(log))
        gold_explanations = {ex.gold_explanation for ex in small_train}
        predictor_pairs = [
            pair
            for entry in log
            if entry["call"] == "predictor.fine_tune"
            for pair in entry["pairs"]
        ]
        assert predictor_pairs
        for pair in predictor_pairs:
            assert "CANARY::" in pair.input
            assert not any(gold in pair.input for gold in gold_explanations)

    def test_cold_start_resets_models(self, small_train, small_eval):
        log = []
        config = small_config(warm_start=False, iterations=3)
        run_trial(config, small_train, small_eval, backend_factory=RecordingFactory(log))
        resets = [e["call"] for e in log if e["call"].endswith(".reset")]
        assert resets.count("explainer.reset") == 3
        assert resets.count("predictor.reset") == 3


class TestTransfer:
    def config(self):
        return transfer_setting(
            pool_per_category=20, eval_per_category=5, trial_count=1, iterations=4,
            quota=Quota(2, per_category=True),
        )

    def test_zero_explainer_fine_tune_calls(self, small_train, small_eval):
        log = []
        run_trial(self.config(), small_train, small_eval, backend_factory=RecordingFactory(log))
        assert not any(e["call"] == "explainer.fine_tune" for e in log)
        assert any(e["call"] == "explainer.generate" for e in log)
        assert any(e["call"] == "predictor.fine_tune" for e in log)

    def test_records_are_generated_source(self, small_train, small_eval):
        state = build_trial_state(self.config(), small_train, small_eval)
        for _ in range(3):
            run_iteration(state)
        assert state.pool.labeled
        assert all(r.source == "generated" for r in state.pool.labeled)

    def test_references_exclusively_generated(self, small_train, small_eval):
        events = []
        run_trial(self.config(), small_train, small_eval, recorder=events.append)
        reference_events = [e for e in events if e.get("event") == "selector.references"]
        assert len(reference_events) == 4
        assert reference_events[0]["sources"] == []  # iteration 0: contents
        for event in reference_events[1:]:
            assert event["sources"] == ["generated"]


class TestSimulation:
    def test_trial_count_and_order(self, small_train, small_eval):
        config = small_config(trial_count=3, iterations=2)
        curves = run_simulation(config, small_train, small_eval)
        assert [c.trial_index for c in curves] == [0, 1, 2]
        assert all(len(c.results) == 2 for c in curves)

    def test_parallel_equals_serial(self, small_train, small_eval):
        config = small_config(trial_count=3, iterations=2)
        serial = run_simulation(config, small_train, small_eval, jobs=1)
        parallel = run_simulation(config, small_train, small_eval, jobs=2)
        for a, b in zip(serial, parallel):
            assert [r.accuracy for r in a.results] == [r.accuracy for r in b.results]
            assert [r.selected_ids for r in a.results] == [r.selected_ids for r in b.results]

    def test_master_seed_changes_curves(self, small_train, small_eval):
        a = run_simulation(small_config(master_seed=1, iterations=2), small_train, small_eval)
        b = run_simulation(small_config(master_seed=2, iterations=2), small_train, small_eval)
        assert [r.accuracy for r in a[0].results] != [r.accuracy for r in b[0].results]

    def test_run_directory_roundtrip(self, tmp_path, small_train, small_eval):
        config = small_config(trial_count=2, iterations=3)
        curves = run_simulation(config, small_train, small_eval)
        out = write_run_directory(tmp_path / "run", config, curves)
        assert (out / "config.json").exists()
        assert (out / "trials" / "trial_000.csv").exists()
        assert (out / "trials" / "trial_000_timing.csv").exists()
        assert (out / "selected" / "trial_001.csv").exists()
        config_back, curves_back = read_run_curves(out)
        assert config_back == config
        assert len(curves_back) == 2
        for original, loaded in zip(curves, curves_back):
            assert [r.accuracy for r in original.results] == [r.accuracy for r in loaded.results]
            assert [r.n_labeled for r in original.results] == [r.n_labeled for r in loaded.results]


class TestEvaluate:
    def test_fraction_correct(self, small_train):
        class FixedPredictor:
            def __init__(self, answers):
                self.answers = answers

            def generate(self, inputs, example_ids=None):
                return self.answers[: len(inputs)]

        class GoldExplainer:
            def generate(self, inputs, example_ids=None):
                return ["because reasons"] * len(inputs)

        examples = small_train.examples[:9]
        answers = [ex.gold_label for ex in examples[:6]] + ["garbage"] * 3
        accuracy = evaluate(FixedPredictor(answers), examples, GoldExplainer())
        assert accuracy == pytest.approx(6 / 9, abs=1e-9)

    def test_all_unparseable_zero(self, small_train):
        class NoiseBackend:
            def generate(self, inputs, example_ids=None):
                return ["???"] * len(inputs)

        accuracy = evaluate(NoiseBackend(), small_train.examples[:5], NoiseBackend())
        assert accuracy == 0.0

    def test_perfect_oracle_is_one(self, small_train):
        examples = small_train.examples[:5]

        class OraclePredictor:
            def __init__(self, by_id):
                self.by_id = by_id

            def generate(self, inputs, example_ids=None):
                return [self.by_id[eid].gold_label for eid in example_ids]

        class GoldExplainer:
            def generate(self, inputs, example_ids=None):
                return ["gold"] * len(inputs)

        accuracy = evaluate(OraclePredictor({e.id: e for e in examples}), examples, GoldExplainer())
        assert accuracy == 1.0


class TestPreliminary:
    def test_sweep_shape_and_preset_epochs(self, small_eval):
        train = make_dataset(12, seed=30, prefix="tr")
        log = []
        config = preliminary_setting(master_seed=3)
        results = run_preliminary(
            config, train, small_eval, backend_factory=RecordingFactory(log), k_values=[10]
        )
        assert len(results) == 1
        result = results[0]
        assert result.k_per_category == 10
        assert result.total_examples == 30
        assert len(result.accuracies) == 3
        assert result.mean == pytest.approx(sum(result.accuracies) / 3)
        # Per-size preset: explainer 25 epochs, predictor 100 epochs.
        explainer_epochs = {e["epochs"] for e in log if e["call"] == "explainer.fine_tune"}
        predictor_epochs = {e["epochs"] for e in log if e["call"] == "predictor.fine_tune"}
        assert explainer_epochs == {25}
        assert predictor_epochs == {100}

    def test_full_eval_split_used(self, small_eval):
        train = make_dataset(6, seed=31, prefix="tr")
        log = []
        config = preliminary_setting()
        run_preliminary(config, train, small_eval, backend_factory=RecordingFactory(log), k_values=[5])
        eval_calls = [
            e for e in log if e["call"] == "predictor.generate"
        ]
        assert all(e["n"] == len(small_eval) for e in eval_calls)

    def test_mode_guard(self, small_train, small_eval):
        with pytest.raises(EngineError, match="preliminary"):
            run_preliminary(small_config(), small_train, small_eval)
