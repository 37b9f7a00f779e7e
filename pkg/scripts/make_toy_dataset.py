#!/usr/bin/env python3
"""Generate a synthetic NLI-style corpus as a canonical record stream.

Explanations carry label-specific cue words, so the explanation-diversity
selector has a signal distinct from raw content. Useful for exercising the
CLI and the annotation service without real data.

    python3 scripts/make_toy_dataset.py --per-class 200 --seed 7 --out data/train.jsonl
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from expal.corpus import Dataset, Example, LABELS, write_records  # noqa: E402

WORDS = [
    "river", "mountain", "guitar", "market", "bicycle", "garden", "harbor",
    "lantern", "violin", "meadow", "tunnel", "orchard", "casserole",
    "sparrow", "anvil", "tapestry", "compass", "ladder", "marble", "whistle",
]


def build(per_class: int, seed: int, prefix: str) -> Dataset:
    rng = np.random.Generator(np.random.PCG64(seed))
    examples = []
    index = 0
    for label in LABELS:
        for _ in range(per_class):
            premise = " ".join(rng.choice(WORDS, size=6))
            hypothesis = " ".join(rng.choice(WORDS, size=4))
            explanation = f"{label} cue {' '.join(rng.choice(WORDS, size=3))} case {index}"
            examples.append(
                Example(
                    id=f"{prefix}{index:06d}",
                    premise=premise,
                    hypothesis=hypothesis,
                    gold_label=label,
                    gold_explanation=explanation,
                )
            )
            index += 1
    return Dataset(examples, name=prefix)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--per-class", type=int, default=100)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--prefix", default="toy")
    parser.add_argument("--out", required=True)
    args = parser.parse_args()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    count = write_records(build(args.per_class, args.seed, args.prefix), args.out)
    print(f"wrote {count} records -> {args.out}")


if __name__ == "__main__":
    main()
