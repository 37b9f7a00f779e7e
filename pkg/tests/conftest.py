import numpy as np
import pytest

from expal.corpus import Dataset, Example, LABELS

WORDS = [
    "river", "mountain", "guitar", "market", "bicycle", "garden", "harbor",
    "lantern", "violin", "meadow", "tunnel", "orchard", "casserole",
    "sparrow", "anvil", "tapestry", "compass", "ladder", "marble", "whistle",
]


def make_dataset(n_per_class: int, seed: int = 7, prefix: str = "ex") -> Dataset:
    """Synthetic NLI-like corpus. Explanations share label-specific cue words
    so explanation similarity carries a different signal than content."""
    rng = np.random.Generator(np.random.PCG64(seed))
    examples = []
    index = 0
    for label in LABELS:
        for _ in range(n_per_class):
            premise = " ".join(rng.choice(WORDS, size=6))
            hypothesis = " ".join(rng.choice(WORDS, size=4))
            explanation = f"{label} cue {' '.join(rng.choice(WORDS, size=3))} case {index}"
            examples.append(
                Example(
                    id=f"{prefix}{index:05d}",
                    premise=premise,
                    hypothesis=hypothesis,
                    gold_label=label,
                    gold_explanation=explanation,
                )
            )
            index += 1
    return Dataset(examples, name=prefix)


@pytest.fixture
def small_train():
    return make_dataset(40, seed=11, prefix="tr")


@pytest.fixture
def small_eval():
    return make_dataset(15, seed=13, prefix="ev")


# Well-known e-SNLI sample records, one per label; the golden prompt
# strings in the template tests are rendered from these.
SAMPLE_RECORDS = [
    Example(
        id="sample-entailment",
        premise="This church choir sings to the masses as they sing joyous songs from the book at a church.",
        hypothesis="The church is filled with song.",
        gold_label="entailment",
        gold_explanation='"Filled with song" is a rephrasing of the "choir sings to the masses.',
    ),
    Example(
        id="sample-neutral",
        premise="A man playing an electric guitar on stage.",
        hypothesis="A man is performing for cash.",
        gold_label="neutral",
        gold_explanation="It is unknown if the man is performing for cash.",
    ),
    Example(
        id="sample-contradiction",
        premise="A couple walk hand in hand down a street.",
        hypothesis="A couple is sitting on a bench.",
        gold_label="contradiction",
        gold_explanation="The couple cannot be walking and sitting a the same time.",
    ),
]
