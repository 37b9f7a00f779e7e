#!/usr/bin/env python3
"""Run the three selectors on shared trial samples and report the comparison.

Per-trial pool and eval samples depend only on (master seed, trial index),
so the three runs see identical data and differ only in selection. With the
content-aware simulated predictor, stratified selections earn a visible
accuracy edge, which gives the report something to rank.

    python3 scripts/run_selector_comparison.py --out /tmp/comparison --trials 20
"""

import argparse
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def run(cmd):
    print("+", " ".join(str(c) for c in cmd))
    subprocess.run([sys.executable, "-m", "expal.cli", *map(str, cmd)], check=True,
                   env={"PYTHONPATH": str(ROOT / "src"), "PATH": "/usr/bin:/bin"})


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--trials", type=int, default=10)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        train = Path(tmp) / "train.jsonl"
        evals = Path(tmp) / "eval.jsonl"
        subprocess.run(
            [sys.executable, str(ROOT / "scripts" / "make_toy_dataset.py"),
             "--per-class", "400", "--seed", "3", "--out", str(train)],
            check=True,
        )
        subprocess.run(
            [sys.executable, str(ROOT / "scripts" / "make_toy_dataset.py"),
             "--per-class", "80", "--seed", "4", "--prefix", "ev", "--out", str(evals)],
            check=True,
        )
        runs = []
        for selector in ("explanation_diversity", "content_diversity", "random"):
            run_dir = out / selector
            runs.append(run_dir)
            run([
                "simulate", "--setting", "1", "--selector", selector,
                "--trials", args.trials, "--seed", args.seed, "--jobs", args.jobs,
                "--pool-per-category", "300", "--eval-per-category", "50",
                "--content-aware",
                "--train", train, "--eval", evals, "--out", run_dir,
            ])
        run(["report", "--runs", *runs, "--out", out / "report"])
    print(f"summary: {out / 'report' / 'summary.csv'}")


if __name__ == "__main__":
    main()
