"""Operator command line: ingest, simulate, report, serve, select.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every run writes a manifest (command, config snapshot, version, seed)
before any work starts, sufficient to replay the run.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import aggregate_curves, compare_selectors
from .corpus import (
    ColumnMapError,
    DataError,
    DataPool,
    LabeledRecord,
    ingest_csv,
    read_records,
    write_records,
)
from .embedding import EmbedderConfig, HashedTfEmbedder, make_embedder
from .engine import (
    ALConfig,
    EngineError,
    SimulatedBackendFactory,
    preliminary_setting,
    read_run_curves,
    run_preliminary,
    run_simulation,
    setting_1,
    setting_2,
    transfer_setting,
    write_run_directory,
)
from .modeling import SimulatedBackendConfig
from .selector import Quota, SelectionError, Strategy, score_candidates, select_equal_interval

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(Exception):
    pass


def parse_kv_config(path: str | Path) -> dict[str, str]:
    """Flat key=value config file; '#' starts a comment; blank lines ignored."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def write_manifest(out_dir: Path, command: str, config: dict, master_seed: int | None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "version": __version__,
        "master_seed": master_seed,
        "output_dir": str(out_dir),
        "created_at": time.time(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _parse_column_map(spec: str | None) -> dict | None:
    if not spec:
        return None
    mapping = {}
    for part in spec.split(","):
        if "=" not in part:
            raise UsageError(f"--map entries must be field=column, got {part!r}")
        field, column = part.split("=", 1)
        mapping[field.strip()] = column.strip()
    return mapping


def cmd_ingest(args: argparse.Namespace) -> int:
    if args.format != "csv":
        raise UsageError(f"unknown --format {args.format!r}; only 'csv' is supported")
    dataset = ingest_csv(
        args.input,
        column_map=_parse_column_map(args.map),
        explanations_required=not args.allow_missing_explanations,
    )
    count = write_records(dataset, args.output)
    print(f"ingested {count} records -> {args.output}")
    return 0


def _sim_factory(args: argparse.Namespace) -> SimulatedBackendFactory:
    return SimulatedBackendFactory(
        SimulatedBackendConfig(
            noise_rate=args.sim_noise,
            accuracy_floor=args.sim_floor,
            accuracy_ceiling=args.sim_ceiling,
            scale=args.sim_scale,
            content_aware=args.content_aware,
        )
    )


def _simulate_config(args: argparse.Namespace) -> ALConfig:
    presets = {
        "1": setting_1,
        "2": setting_2,
        "transfer": transfer_setting,
        "preliminary": preliminary_setting,
    }
    if args.setting not in presets:
        raise UsageError(f"unknown --setting {args.setting!r}")
    config = presets[args.setting]()
    overrides: dict = {}
    if args.setting != "preliminary" and args.selector:
        seed = args.seed if args.selector == "random" else None
        overrides["strategy"] = Strategy(args.selector, seed=seed)
    if args.trials is not None:
        if args.trials < 1:
            raise UsageError("--trials must be >= 1")
        overrides["trial_count"] = args.trials
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.x is not None:
        overrides["quota"] = Quota(args.x, per_category=True)
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.pool_per_category is not None:
        overrides["pool_per_category"] = args.pool_per_category
    if args.eval_per_category is not None:
        overrides["eval_per_category"] = args.eval_per_category
    if args.frozen_explainer is not None:
        overrides["frozen_explainer_ref"] = args.frozen_explainer
    try:
        return replace(config, **overrides)
    except EngineError as exc:
        raise UsageError(str(exc)) from exc


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _simulate_config(args)
    out_dir = Path(args.out)
    write_manifest(out_dir, "simulate", config.to_dict(), config.master_seed)
    train_dataset = read_records(args.train)
    eval_dataset = read_records(args.eval)
    factory = _sim_factory(args)
    if args.setting == "preliminary":
        k_values = [int(v) for v in args.k_values.split(",")] if args.k_values else None
        results = run_preliminary(config, train_dataset, eval_dataset, factory, k_values=k_values)
        lines = ["k_per_category,total,mean,std,accuracies"]
        for r in results:
            accs = ";".join(f"{a!r}" for a in r.accuracies)
            lines.append(f"{r.k_per_category},{r.total_examples},{r.mean!r},{r.std!r},{accs}")
        (out_dir / "preliminary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"preliminary sweep over {len(results)} sizes -> {out_dir / 'preliminary.csv'}")
        return 0
    curves = run_simulation(config, train_dataset, eval_dataset, factory, jobs=args.jobs)
    write_run_directory(out_dir, config, curves)
    summary = aggregate_curves(curves)
    final = summary.final()
    print(
        f"{len(curves)} trials x {config.iterations} iterations -> {out_dir}; "
        f"final accuracy {final.mean:.4f} +/- {final.std:.4f}"
    )
    return 0


def _setting_key(config: ALConfig) -> tuple:
    return (config.quota.count, config.quota.per_category, config.iterations, config.mode)


def cmd_report(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    runs = []
    for run_path in args.runs:
        config, curves = read_run_curves(run_path)
        label = config.strategy.kind if config.strategy else Path(run_path).name
        runs.append((Path(run_path).name, label, config, curves))
    keys = {_setting_key(config) for _, _, config, _ in runs}
    if len(keys) > 1:
        raise UsageError(f"runs mix incompatible settings: {sorted(keys)}")
    write_manifest(out_dir, "report", {"runs": [str(r) for r in args.runs]}, None)

    summaries = [(name, label, aggregate_curves(curves)) for name, label, _, curves in runs]
    iterations = summaries[0][2].iterations
    header = ["iteration"]
    for name, label, _ in summaries:
        header += [f"mean_{label}_{name}", f"std_{label}_{name}"]
    rows = [",".join(header)]
    for t in range(iterations):
        row = [str(t + 1)]
        for _, _, summary in summaries:
            point = summary.per_iteration[t]
            row += [repr(point.mean), repr(point.std)]
        rows.append(",".join(row))
    (out_dir / "summary.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    plot_rows = ["run,label,iteration,mean,std,trials"]
    for name, label, summary in summaries:
        for point in summary.per_iteration:
            plot_rows.append(
                f"{name},{label},{point.iteration},{point.mean!r},{point.std!r},{point.trials}"
            )
    (out_dir / "plot_data.csv").write_text("\n".join(plot_rows) + "\n", encoding="utf-8")

    if len(runs) >= 2:
        chi_lines = []
        for i in range(len(runs)):
            for j in range(i + 1, len(runs)):
                name_a, _, _, curves_a = runs[i]
                name_b, _, _, curves_b = runs[j]
                comparison = compare_selectors(curves_a, curves_b, threshold=args.threshold)
                dom_rows = ["iteration,mean_a,mean_b,leader,margin"]
                for row in comparison.rows:
                    dom_rows.append(
                        f"{row.iteration},{row.mean_a!r},{row.mean_b!r},{row.leader},{row.margin!r}"
                    )
                (out_dir / f"dominance_{name_a}_vs_{name_b}.csv").write_text(
                    "\n".join(dom_rows) + "\n", encoding="utf-8"
                )
                entry = {
                    "run_a": name_a,
                    "run_b": name_b,
                    "threshold": args.threshold,
                    "chi2": comparison.chi_square.chi2 if comparison.chi_square else None,
                    "p_value": comparison.chi_square.p_value if comparison.chi_square else None,
                    "table": (
                        [comparison.success_table.a, comparison.success_table.b,
                         comparison.success_table.c, comparison.success_table.d]
                        if comparison.success_table
                        else None
                    ),
                }
                chi_lines.append(json.dumps(entry))
        (out_dir / "chi_square.jsonl").write_text("\n".join(chi_lines) + "\n", encoding="utf-8")
    print(f"report for {len(runs)} run(s) -> {out_dir}")
    return 0


def cmd_select(args: argparse.Namespace) -> int:
    dataset = read_records(args.pool)
    labeled: list[LabeledRecord] = []
    if args.labeled:
        for lineno, line in enumerate(Path(args.labeled).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            labeled.append(
                LabeledRecord(
                    example_id=str(obj["example_id"]),
                    label=obj["label"],
                    explanation=obj.get("explanation", ""),
                    source=obj.get("source", "human"),
                    iteration=obj.get("iteration", 1),
                )
            )
    labeled_ids = {r.example_id for r in labeled}
    pool = DataPool(
        unlabeled=[eid for eid in dataset.ids() if eid not in labeled_ids],
        labeled=labeled,
        dataset_ref=dataset.name,
    )
    if args.x > len(pool.unlabeled):
        raise UsageError(f"--x {args.x} exceeds pool size {len(pool.unlabeled)}")
    strategy = Strategy(args.strategy, seed=args.seed if args.strategy == "random" else None)
    iteration = 0 if not labeled else 1

    if strategy.kind == "random":
        from .selector import select as run_select

        chosen = run_select(pool, dataset, strategy, Quota(args.x), iteration)
        ranked = [(eid, "") for eid in pool.unlabeled]
        selected = set(chosen)
    else:
        from .selector import _reference_records

        _, references = _reference_records(pool, dataset, strategy, iteration, args.explanation_source, " ")
        embedder = HashedTfEmbedder(memoize=True)
        scored = score_candidates(
            [dataset[eid] for eid in pool.unlabeled],
            references,
            embedder,
            exclude_self=(iteration == 0),
        )
        selected = set(select_equal_interval(scored, args.x))
        ranked = [(c.example_id, repr(c.score)) for c in scored]

    lines = ["example_id,score,rank,selected"]
    for rank, (eid, score) in enumerate(ranked):
        lines.append(f"{eid},{score},{rank},{int(eid in selected)}")
    output = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(output, encoding="utf-8")
        print(f"ranked {len(ranked)} candidates -> {args.out}")
    else:
        sys.stdout.write(output)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .api import build_app
    from .modeling import HttpModelBackend
    from .service import AnnotationService

    datasets = {}
    for entry in args.dataset or []:
        if "=" not in entry:
            raise UsageError(f"--dataset entries must be NAME=PATH, got {entry!r}")
        name, path = entry.split("=", 1)
        if not Path(path).exists():
            raise UsageError(f"dataset file not found: {path}")
        datasets[name] = path

    embedder_factory = None
    if args.embedder not in (None, "builtin"):
        # Instantiate once up front so a bad URL fails at startup.
        config = EmbedderConfig(backend="remote", remote_endpoint=args.embedder)
        make_embedder(config)
        embedder_factory = lambda: make_embedder(config, memoize=True)  # noqa: E731

    backend_factory = None
    if args.model_endpoint:
        endpoint = args.model_endpoint

        def backend_factory(examples_by_id, seed, _endpoint=endpoint):  # noqa: F811
            del examples_by_id, seed
            return (
                HttpModelBackend(_endpoint, "explainer"),
                HttpModelBackend(_endpoint, "predictor"),
            )

    service = AnnotationService(
        storage=args.storage,
        datasets=datasets,
        backend_factory=backend_factory,
        embedder_factory=embedder_factory,
        async_training=True,
    )
    recovered = [s for s in service.sessions.values()]
    print(f"recovered {len(recovered)} session(s) from {args.storage}")
    app = build_app(service, ui_dir=args.ui_dir)
    print(f"listening on {args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="expal", description=__doc__)
    parser.add_argument("--version", action="version", version=f"expal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="convert a CSV dataset to the canonical record stream")
    p_ingest.add_argument("--input", required=True)
    p_ingest.add_argument("--format", default="csv")
    p_ingest.add_argument("--map", help="field=column[,field=column...] (defaults to e-SNLI columns)")
    p_ingest.add_argument("--output", required=True)
    p_ingest.add_argument("--allow-missing-explanations", action="store_true")
    p_ingest.set_defaults(func=cmd_ingest)

    p_sim = sub.add_parser("simulate", help="run AL simulation trials")
    p_sim.add_argument("--config", help="key=value config file; flags override")
    p_sim.add_argument("--setting", default="1", choices=["1", "2", "preliminary", "transfer"])
    p_sim.add_argument("--selector", choices=["random", "content_diversity", "explanation_diversity"])
    p_sim.add_argument("--trials", type=int)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--x", type=int, help="selections per category per iteration")
    p_sim.add_argument("--iterations", type=int)
    p_sim.add_argument("--pool-per-category", type=int)
    p_sim.add_argument("--eval-per-category", type=int)
    p_sim.add_argument("--frozen-explainer", help="frozen explainer reference (transfer mode)")
    p_sim.add_argument("--k-values", help="comma list of per-category sizes (preliminary mode)")
    p_sim.add_argument("--train", required=True, help="canonical record stream (train split)")
    p_sim.add_argument("--eval", required=True, help="canonical record stream (eval split)")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--jobs", type=int, default=1)
    p_sim.add_argument("--sim-noise", type=float, default=0.0)
    p_sim.add_argument("--sim-floor", type=float, default=0.45)
    p_sim.add_argument("--sim-ceiling", type=float, default=0.87)
    p_sim.add_argument("--sim-scale", type=float, default=120.0)
    p_sim.add_argument("--content-aware", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="aggregate run directories into curve summaries")
    p_rep.add_argument("--runs", nargs="+", required=True)
    p_rep.add_argument("--out", required=True)
    p_rep.add_argument("--threshold", type=float, default=0.5)
    p_rep.set_defaults(func=cmd_report)

    p_sel = sub.add_parser("select", help="one-shot selection debug dump (ranked CSV)")
    p_sel.add_argument("--pool", required=True, help="canonical record stream")
    p_sel.add_argument("--labeled", help="JSONL of labeled records (example_id, label, explanation)")
    p_sel.add_argument("--strategy", required=True,
                       choices=["random", "content_diversity", "explanation_diversity"])
    p_sel.add_argument("--x", type=int, required=True)
    p_sel.add_argument("--seed", type=int, default=0)
    p_sel.add_argument("--explanation-source", default="human", choices=["human", "generated"])
    p_sel.add_argument("--out")
    p_sel.set_defaults(func=cmd_select)

    p_srv = sub.add_parser("serve", help="run the annotation service")
    p_srv.add_argument("--storage", required=True)
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8000)
    p_srv.add_argument("--dataset", action="append", help="NAME=PATH (repeatable)")
    p_srv.add_argument("--model-endpoint", help="HTTP model service URL (default: simulated backends)")
    p_srv.add_argument("--embedder", default="builtin", help="'builtin' or an embedding service URL")
    p_srv.add_argument("--ui-dir", help="serve a static frontend from this directory")
    p_srv.set_defaults(func=cmd_serve)
    return parser


def _apply_config_file(argv: list[str], parser: argparse.ArgumentParser) -> list[str]:
    """Inject config-file values as defaults: flags on the command line win."""
    if "--config" not in argv:
        return argv
    index = argv.index("--config")
    if index + 1 >= len(argv):
        return argv
    values = parse_kv_config(argv[index + 1])
    injected = []
    for key, value in values.items():
        flag = "--" + key.replace("_", "-")
        if flag in argv:
            continue
        if value.lower() in ("true", "yes", "on"):
            injected.append(flag)
        else:
            injected.extend([flag, value])
    return argv + injected


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and argv[0] == "simulate":
            argv = _apply_config_file(argv, parser)
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ColumnMapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (DataError, SelectionError, EngineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
