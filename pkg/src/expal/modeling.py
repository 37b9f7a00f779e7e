"""Prompt rendering, the model-backend contract, and backend implementations.

Two sequence-to-sequence roles exist: an explanation generator (content ->
free-text explanation) and a label predictor (content + explanation ->
label). Real models live behind an HTTP protocol; the simulated backends
here make desk-scale runs deterministic and fast.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Protocol, Sequence

import numpy as np

from .corpus import LABELS, Dataset, Example, LabeledRecord

EXPLAINER_PROMPT = "explain:"
PREDICTOR_PROMPT = "question:"
DEFAULT_SEPARATOR_TOKEN = "<sep>"

_CHOICES = "choice1: entailment choice2: neutral choice3: contradiction"


class ModelError(RuntimeError):
    """Raised for backend failures and wire-protocol violations."""


class LabelParseError(ValueError):
    """Raised when generated text cannot be decoded into a label."""


@dataclass(frozen=True)
class TrainPair:
    input: str
    target: str

    def __post_init__(self) -> None:
        if not self.input or not self.target:
            raise ValueError("train pair input and target must be non-empty")


@dataclass(frozen=True)
class Hyperparameters:
    learning_rate: float = 1e-4
    epochs: int = 20
    batch_size: int = 2
    input_max_length: int = 512
    target_max_length: int = 64

    def __post_init__(self) -> None:
        if min(self.learning_rate, self.epochs, self.batch_size,
               self.input_max_length, self.target_max_length) <= 0:
            raise ValueError("all hyperparameters must be positive")


DEFAULT_EXPLAINER_HP = Hyperparameters(epochs=20)
DEFAULT_PREDICTOR_HP = Hyperparameters(epochs=250)

# Fine-tuning epochs (explainer, predictor) for one-shot runs, keyed by the
# per-category training size. None covers the full-split setting.
ONE_SHOT_EPOCHS: dict[Optional[int], tuple[int, int]] = {
    10: (25, 100),
    50: (25, 250),
    100: (10, 250),
    500: (5, 50),
    1500: (5, 50),
    3000: (5, 25),
    5000: (5, 25),
    None: (1, 1),
}

PRELIMINARY_SIZES = (10, 50, 100, 500, 1500, 3000, 5000)


def one_shot_hyperparameters(k_per_category: Optional[int]) -> tuple[Hyperparameters, Hyperparameters]:
    """Epoch preset for one-shot training at a given per-category size."""
    key = k_per_category if k_per_category in ONE_SHOT_EPOCHS else None
    explainer_epochs, predictor_epochs = ONE_SHOT_EPOCHS[key]
    return (
        replace(DEFAULT_EXPLAINER_HP, epochs=explainer_epochs),
        replace(DEFAULT_PREDICTOR_HP, epochs=predictor_epochs),
    )


def render_explainer_input(example: Example, prompt: str = EXPLAINER_PROMPT) -> str:
    """Training/generation input for the explanation model.

    The hypothesis comes before the premise; the template is fixed verbatim
    and covered by golden-string tests.
    """
    return (
        f"{prompt} what is the relationship between {example.hypothesis} "
        f"and {example.premise} {_CHOICES}"
    )


def render_predictor_input(
    example: Example,
    explanation: str,
    prompt: str = PREDICTOR_PROMPT,
    separator_token: str = DEFAULT_SEPARATOR_TOKEN,
) -> str:
    """Training/generation input for the prediction model.

    The explanation is appended after the separator token and "because".
    Backends may declare their own separator token string via /info.
    """
    if not explanation:
        raise ValueError(f"example {example.id}: predictor input requires a non-empty explanation")
    return (
        f"{prompt} what is the relationship between {example.hypothesis} "
        f"and {example.premise} {_CHOICES} {separator_token} because {explanation}"
    )


def make_explainer_pairs(
    records: Sequence[LabeledRecord],
    dataset: Dataset,
    sources: Sequence[str] = ("human", "oracle"),
) -> list[TrainPair]:
    """Explainer training pairs: rendered content -> annotated explanation.

    Only records whose source is in ``sources`` participate; the default
    keeps the generator supervised by human(-stand-in) explanations only.
    """
    pairs = []
    for record in records:
        if record.source not in sources:
            continue
        if not record.explanation:
            raise ValueError(f"record {record.example_id} has no explanation")
        pairs.append(
            TrainPair(
                input=render_explainer_input(dataset[record.example_id]),
                target=record.explanation,
            )
        )
    return pairs


def make_predictor_pairs(
    records: Sequence[LabeledRecord],
    generated_explanations: Mapping[str, str],
    dataset: Dataset,
    separator_token: str = DEFAULT_SEPARATOR_TOKEN,
) -> list[TrainPair]:
    """Predictor training pairs: content + generated explanation -> label.

    The input always embeds the generated explanation, never the annotated
    one, because no annotated explanations exist at inference time.
    """
    pairs = []
    for record in records:
        if record.example_id not in generated_explanations:
            raise ValueError(f"no generated explanation for record {record.example_id}")
        explanation = generated_explanations[record.example_id]
        pairs.append(
            TrainPair(
                input=render_predictor_input(
                    dataset[record.example_id],
                    explanation or "(no explanation)",
                    separator_token=separator_token,
                ),
                target=record.label,
            )
        )
    return pairs


def parse_predicted_label(text: str) -> str:
    """Decode generated text into a canonical label.

    Exact match after trimming and lowercasing; otherwise a unique-substring
    match. Anything else raises, which evaluation counts as incorrect.
    """
    cleaned = text.strip().lower()
    if cleaned in LABELS:
        return cleaned
    hits = [label for label in LABELS if label in cleaned]
    if len(hits) == 1:
        return hits[0]
    raise LabelParseError(f"cannot parse label from {text!r}")


@dataclass(frozen=True)
class TrainingReceipt:
    pairs_in_call: int
    trained_pairs_total: int


class ModelBackend(Protocol):
    """Fine-tune/generate contract shared by real and simulated models.

    ``fine_tune`` is cumulative within a trial and resettable between
    trials; ``generate`` returns exactly one output per input, in order.
    ``example_ids`` is a sidecar used by simulated backends to look up the
    underlying example; HTTP backends ignore it.
    """

    def fine_tune(self, pairs: Sequence[TrainPair], hp: Hyperparameters) -> TrainingReceipt: ...

    def generate(self, inputs: Sequence[str], example_ids: Optional[Sequence[str]] = None) -> list[str]: ...

    def reset(self) -> None: ...


@dataclass(frozen=True)
class SimulatedBackendConfig:
    seed: int = 0
    noise_rate: float = 0.0        # explainer token dropout
    accuracy_floor: float = 0.45   # predictor accuracy at zero training data
    accuracy_ceiling: float = 0.87  # asymptotic predictor accuracy
    scale: float = 120.0           # pairs needed to close most of the gap
    content_aware: bool = False    # boost accuracy with train-label entropy
    entropy_weight: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must be in [0, 1]")
        if self.accuracy_floor > self.accuracy_ceiling:
            raise ValueError("accuracy floor must not exceed ceiling")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if not 0.0 <= self.entropy_weight <= 1.0:
            raise ValueError("entropy_weight must be in [0, 1]")


class SimulatedExplainer:
    """Oracle explainer: emits the example's gold explanation, optionally
    degraded by seeded per-token dropout at ``noise_rate``.
    """

    def __init__(self, examples_by_id: Mapping[str, Example], config: SimulatedBackendConfig):
        self._examples = examples_by_id
        self._config = config
        self._rng = np.random.Generator(np.random.PCG64(config.seed))
        self.trained_pairs_total = 0
        self.fine_tune_calls = 0

    def fine_tune(self, pairs: Sequence[TrainPair], hp: Hyperparameters) -> TrainingReceipt:
        self.fine_tune_calls += 1
        self.trained_pairs_total += len(pairs)
        return TrainingReceipt(len(pairs), self.trained_pairs_total)

    def generate(self, inputs: Sequence[str], example_ids: Optional[Sequence[str]] = None) -> list[str]:
        if example_ids is None or len(example_ids) != len(inputs):
            raise ModelError("simulated explainer needs one example id per input")
        outputs = []
        for eid in example_ids:
            example = self._examples.get(eid)
            if example is None:
                raise ModelError(f"unknown example id {eid!r}")
            explanation = example.gold_explanation
            if self._config.noise_rate > 0.0:
                kept = [
                    token
                    for token in explanation.split()
                    if self._rng.random() >= self._config.noise_rate
                ]
                explanation = " ".join(kept)
            outputs.append(explanation)
        return outputs

    def reset(self) -> None:
        self._rng = np.random.Generator(np.random.PCG64(self._config.seed))
        self.trained_pairs_total = 0
        self.fine_tune_calls = 0


def _label_entropy(counts: Mapping[str, int]) -> float:
    """Shannon entropy of a label histogram, normalized to [0, 1]."""
    total = sum(counts.values())
    if total == 0:
        return 0.0
    h = 0.0
    for count in counts.values():
        if count > 0:
            p = count / total
            h -= p * np.log(p)
    return float(h / np.log(len(LABELS)))


class SimulatedPredictor:
    """Schedule predictor: answers correctly with probability
    ``ceiling - (ceiling - floor) * exp(-n / scale)`` where n is the
    cumulative number of training pairs; otherwise a seeded-uniform wrong
    label. The content-aware mode scales the learned part of that
    probability by the label entropy of the training data it has seen, so
    label-balanced selections measurably help.
    """

    def __init__(self, examples_by_id: Mapping[str, Example], config: SimulatedBackendConfig):
        self._examples = examples_by_id
        self._config = config
        self._rng = np.random.Generator(np.random.PCG64(config.seed + 1))
        self.trained_pairs_total = 0
        self.fine_tune_calls = 0
        self._label_counts: dict[str, int] = {label: 0 for label in LABELS}

    def fine_tune(self, pairs: Sequence[TrainPair], hp: Hyperparameters) -> TrainingReceipt:
        self.fine_tune_calls += 1
        self.trained_pairs_total += len(pairs)
        for pair in pairs:
            if pair.target in self._label_counts:
                self._label_counts[pair.target] += 1
        return TrainingReceipt(len(pairs), self.trained_pairs_total)

    def accuracy_probability(self) -> float:
        cfg = self._config
        n = self.trained_pairs_total
        p = cfg.accuracy_ceiling - (cfg.accuracy_ceiling - cfg.accuracy_floor) * float(
            np.exp(-n / cfg.scale)
        )
        if cfg.content_aware:
            mix = (1.0 - cfg.entropy_weight) + cfg.entropy_weight * _label_entropy(self._label_counts)
            p = cfg.accuracy_floor + (p - cfg.accuracy_floor) * mix
        return p

    def generate(self, inputs: Sequence[str], example_ids: Optional[Sequence[str]] = None) -> list[str]:
        if self.fine_tune_calls == 0:
            raise ModelError("simulated predictor used before any fine_tune call")
        if example_ids is None or len(example_ids) != len(inputs):
            raise ModelError("simulated predictor needs one example id per input")
        p = self.accuracy_probability()
        outputs = []
        for eid in example_ids:
            example = self._examples.get(eid)
            if example is None:
                raise ModelError(f"unknown example id {eid!r}")
            if self._rng.random() < p:
                outputs.append(example.gold_label)
            else:
                wrong = [label for label in LABELS if label != example.gold_label]
                outputs.append(wrong[int(self._rng.integers(len(wrong)))])
        return outputs

    def reset(self) -> None:
        self._rng = np.random.Generator(np.random.PCG64(self._config.seed + 1))
        self.trained_pairs_total = 0
        self.fine_tune_calls = 0
        self._label_counts = {label: 0 for label in LABELS}


class HttpModelBackend:
    """Client for the HTTP model protocol.

    Creates a session lazily, forwards fine-tune and generate calls, and
    treats an output-count mismatch as a protocol violation.
    """

    def __init__(self, endpoint: str, model: str, client=None):
        import httpx

        if model not in ("explainer", "predictor"):
            raise ValueError(f"model must be explainer or predictor, got {model!r}")
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self._client = client or httpx.Client(base_url=self.endpoint, timeout=120.0)
        self._session_id: Optional[str] = None

    def _request(self, method: str, path: str, **kwargs):
        try:
            response = self._client.request(method, path, **kwargs)
        except Exception as exc:
            raise ModelError(f"model service {self.endpoint}{path}: transport failure: {exc}") from exc
        if response.status_code // 100 != 2:
            raise ModelError(
                f"model service {self.endpoint}{path}: HTTP {response.status_code}: {response.text[:200]}"
            )
        return response.json()

    def _session(self) -> str:
        if self._session_id is None:
            data = self._request("POST", "/sessions", json={"model": self.model})
            self._session_id = data["session_id"]
        return self._session_id

    def info(self) -> dict:
        return self._request("GET", "/info")

    def fine_tune(self, pairs: Sequence[TrainPair], hp: Hyperparameters) -> TrainingReceipt:
        payload = {
            "pairs": [{"input": p.input, "target": p.target} for p in pairs],
            "hyperparameters": {
                "learning_rate": hp.learning_rate,
                "epochs": hp.epochs,
                "batch_size": hp.batch_size,
                "input_max_length": hp.input_max_length,
                "target_max_length": hp.target_max_length,
            },
        }
        data = self._request("POST", f"/sessions/{self._session()}/fine_tune", json=payload)
        return TrainingReceipt(len(pairs), int(data["trained_pairs_total"]))

    def generate(self, inputs: Sequence[str], example_ids: Optional[Sequence[str]] = None) -> list[str]:
        del example_ids  # ids never cross the wire
        inputs = list(inputs)
        if not inputs:
            return []
        data = self._request("POST", f"/sessions/{self._session()}/generate", json={"inputs": inputs})
        outputs = data["outputs"]
        if len(outputs) != len(inputs):
            raise ModelError(
                f"model service returned {len(outputs)} outputs for {len(inputs)} inputs"
            )
        return [str(o) for o in outputs]

    def reset(self) -> None:
        if self._session_id is not None:
            self._request("DELETE", f"/sessions/{self._session_id}")
            self._session_id = None
