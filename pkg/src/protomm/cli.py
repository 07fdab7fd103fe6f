"""Command-line entry point.

Subcommands: synth (generate a world), run (adaptive streaming
classification), zeroshot (text-only baseline), diagnose (particle
quality snapshot), bench (scenario harness). Exit codes: 0 success,
1 fatal error, 2 when a run finished but skipped samples.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .bench import load_scenario, run_scenario
from .diagnostics import format_metrics, snapshot_metrics
from .engine import EngineConfig, run_stream, zero_shot_stream
from .errors import ProtommError
from .formats import (
    read_bundle,
    read_reference,
    read_stream,
    write_bundle,
    write_plan,
    write_reference,
    write_results,
    write_stream,
)
from .sinkhorn import SinkhornConfig
from .synth import SynthConfig, describe_world, generate_world

_THREADS_ENV = "PROTOMM_THREADS"


def _env_threads() -> int:
    raw = os.environ.get(_THREADS_ENV)
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        print(f"warning: ignoring non-integer {_THREADS_ENV}={raw!r}", file=sys.stderr)
        return 1


def _engine_config(args) -> EngineConfig:
    return EngineConfig(
        epsilon=args.epsilon,
        tau=args.tau,
        top_s=args.top_s,
        class_temperature=args.class_temp,
        prediction_temperature=args.pred_temp,
        sinkhorn=SinkhornConfig(
            epsilon=args.epsilon, max_iterations=args.max_iter, tolerance=args.tol
        ),
        update_all_classes=args.update_all_classes,
        threads=_env_threads(),
    )


def _run_manifest(args, command: str, config: EngineConfig | None) -> dict:
    manifest = {
        "tool": "protomm",
        "version": __version__,
        "command": command,
        "bundle": str(args.bundle),
        "stream": str(args.stream),
    }
    if config is not None:
        manifest["config"] = {
            "epsilon": config.epsilon,
            "tau": config.tau,
            "top_s": config.top_s,
            "class_temperature": config.class_temperature,
            "prediction_temperature": config.prediction_temperature,
            "max_iterations": config.sinkhorn.max_iterations,
            "tolerance": config.sinkhorn.tolerance,
            "update_all_classes": config.update_all_classes,
            "threads": config.threads,
        }
    return manifest


def cmd_run(args) -> int:
    config = _engine_config(args)
    store, class_names = read_bundle(args.bundle)
    data = read_stream(args.stream)

    plan_hook = None
    if args.dump_plans:
        plan_dir = Path(args.dump_plans)
        plan_dir.mkdir(parents=True, exist_ok=True)
        point_labels = [f"text_{i}" for i in range(store.m)] + [
            f"cache_{i}" for i in range(store.s)
        ]

        def plan_hook(record, solutions):
            write_plan(
                plan_dir / f"plan_{record.sample_id:08d}.tsv",
                solutions[record.predicted_class].plan.values,
                point_labels,
            )

    predictions, final_store, summary = run_stream(
        data.records, store, config, plan_hook=plan_hook
    )
    write_results(args.out, predictions, summary, _run_manifest(args, "run", config))
    if args.checkpoint_out:
        write_bundle(args.checkpoint_out, final_store, class_names, include_cache=True)
    return 2 if summary.skipped else 0


def cmd_zeroshot(args) -> int:
    store, _ = read_bundle(args.bundle)
    data = read_stream(args.stream)
    text_means = tuple(p.text_mean for p in store.prototypes)
    predictions, summary = zero_shot_stream(data.records, text_means)
    write_results(args.out, predictions, summary, _run_manifest(args, "zeroshot", None))
    return 2 if summary.skipped else 0


def cmd_synth(args) -> int:
    config = SynthConfig(
        seed=args.seed,
        dim=args.dim,
        classes=args.classes,
        descriptions=args.descriptions,
        augmentations=args.augmentations,
        particles=args.particles,
        samples=args.samples,
        text_noise=args.text_noise,
        augment_noise=args.augment_noise,
        ambiguity=args.ambiguity,
    )
    world = generate_world(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle_path = out / "bundle.json"
    stream_path = out / "stream.bin"
    write_bundle(bundle_path, world.store, world.class_names)
    write_stream(stream_path, world.stream)
    write_reference(out / "reference.bin", world.reference)
    print(describe_world(bundle_path, stream_path), end="")
    return 0


def cmd_diagnose(args) -> int:
    store, _ = read_bundle(args.checkpoint)
    reference = read_reference(args.reference)
    table = format_metrics(snapshot_metrics(store, reference))
    print(table, end="")
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    return 0


def cmd_bench(args) -> int:
    report = run_scenario(load_scenario(args.spec))
    print(report.text, end="")
    if args.out:
        Path(args.out).write_text(report.text, encoding="utf-8")
    return 0 if report.passed else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protomm",
        description="Streaming test-time adaptation with multimodal prototypes "
        "and entropic optimal transport.",
    )
    parser.add_argument("--version", action="version", version=f"protomm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="classify a stream, adapting the particle cache")
    run_p.add_argument("--bundle", required=True, help="prototype bundle manifest (JSON)")
    run_p.add_argument("--stream", required=True, help="embedding stream file")
    run_p.add_argument("--out", required=True, help="results file to write")
    run_p.add_argument("--epsilon", type=float, default=0.1, help="entropic coefficient (default 0.1)")
    run_p.add_argument("--tau", type=float, default=0.8, help="confidence gate in [0,1] (default 0.8)")
    run_p.add_argument("--top-s", type=int, default=25, help="candidates per cache update (default 25)")
    run_p.add_argument(
        "--class-temp", type=float, default=0.01,
        help="temperature of the within-class similarity softmax (default 0.01)",
    )
    run_p.add_argument(
        "--pred-temp", type=float, default=1.0,
        help="temperature of the softmax over negated transport costs (default 1)",
    )
    run_p.add_argument("--max-iter", type=int, default=100, help="transport iteration cap (default 100)")
    run_p.add_argument("--tol", type=float, default=1e-9, help="marginal tolerance (default 1e-9)")
    run_p.add_argument(
        "--update-all-classes", action="store_true",
        help="apply each gated update to every class, not only the predicted one",
    )
    run_p.add_argument("--checkpoint-out", help="write the final store as a cached bundle")
    run_p.add_argument("--dump-plans", help="directory for per-sample predicted-class plan dumps")
    run_p.set_defaults(func=cmd_run)

    zs_p = sub.add_parser("zeroshot", help="text-only baseline over the original views")
    zs_p.add_argument("--bundle", required=True, help="prototype bundle manifest (JSON)")
    zs_p.add_argument("--stream", required=True, help="embedding stream file")
    zs_p.add_argument("--out", required=True, help="results file to write")
    zs_p.set_defaults(func=cmd_zeroshot)

    synth_p = sub.add_parser("synth", help="generate a synthetic world (bundle, stream, reference)")
    synth_p.add_argument("--out-dir", required=True, help="directory for the generated files")
    synth_p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    synth_p.add_argument("--dim", type=int, default=64, help="embedding dimension (default 64)")
    synth_p.add_argument("--classes", type=int, default=10, help="number of classes (default 10)")
    synth_p.add_argument(
        "--descriptions", type=int, default=50, help="text descriptions per class (default 50)"
    )
    synth_p.add_argument(
        "--augmentations", type=int, default=50, help="augmentations per sample (default 50)"
    )
    synth_p.add_argument(
        "--particles", type=int, default=25, help="visual particles per class (default 25)"
    )
    synth_p.add_argument("--samples", type=int, default=500, help="stream length (default 500)")
    synth_p.add_argument(
        "--text-noise", type=float, default=0.05, help="description perturbation sigma (default 0.05)"
    )
    synth_p.add_argument(
        "--augment-noise", type=float, default=0.15, help="augmentation perturbation sigma (default 0.15)"
    )
    synth_p.add_argument(
        "--ambiguity", type=float, default=0.85,
        help="shared text direction between paired classes, 0..1 (default 0.85)",
    )
    synth_p.set_defaults(func=cmd_synth)

    diag_p = sub.add_parser("diagnose", help="particle quality metrics for a checkpointed store")
    diag_p.add_argument("--checkpoint", required=True, help="bundle manifest with a cached store")
    diag_p.add_argument("--reference", required=True, help="held-out reference file")
    diag_p.add_argument("--out", help="also write the table to this path")
    diag_p.set_defaults(func=cmd_diagnose)

    bench_p = sub.add_parser("bench", help="run a scenario spec and evaluate its assertions")
    bench_p.add_argument("spec", help="scenario JSON file")
    bench_p.add_argument("--out", help="also write the report to this path")
    bench_p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ProtommError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
