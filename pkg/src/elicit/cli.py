"""``elicit`` command line.

Exit codes: 0 success, 1 stage or run failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import pipeline
from .config import RunConfig, load_config
from .errors import ConfigError, ElicitError, StageFailed
from .evaluation import (
    LabeledNeedDataset,
    PricingModel,
    benchmark_json,
    format_usd,
    matrices_csv,
    reconstructed_predictions,
    replay_responder,
    run_latent_benchmark,
)
from .gateway import HttpProvider
from .mock import MockProvider
from .models import ClassificationMode
from .needs import LatentCriteria

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

STAGE_COMMANDS = tuple(pipeline.COMMAND_STAGE)


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--out", type=Path, help="run directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--provider", choices=["mock", "http"])
    p.add_argument("--mode", choices=[m.value for m in ClassificationMode])
    p.add_argument("--strategy", choices=["serial", "parallel", "parallel_filtered"])
    p.add_argument("--steering", type=Path, metavar="FILE", help="steering instruction text")
    p.add_argument("--manual-agents", type=Path, metavar="FILE", help="JSON list of {name, description}")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elicit", description="Simulated-user requirements elicitation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _config_args(sub.add_parser("run", help="run every stage"))

    p = sub.add_parser("resume", help="continue a run from its first pending stage")
    p.add_argument("run_dir", type=Path)

    for name in STAGE_COMMANDS:
        p = sub.add_parser(name, help=f"run the {pipeline.COMMAND_STAGE[name]} stage")
        _config_args(p)
        p.add_argument("--force", action="store_true", help="rerun even if done; invalidates later stages")

    p = sub.add_parser("benchmark", help="score classification modes on a labelled need set")
    p.add_argument("--dataset", type=Path, help="JSON list of {text, latent}; default is the bundled set")
    p.add_argument("--criteria", type=Path, help="criteria text file; default is the bundled criteria")
    p.add_argument("--mode", action="append", choices=[m.value for m in ClassificationMode],
                   help="repeatable; default runs all three")
    p.add_argument("--provider", choices=["mock", "http"], default="mock")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replay", action="store_true",
                   help="mock replays the reconstructed published predictions")
    p.add_argument("--config", type=Path)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", type=Path, help="directory for benchmark.json and matrices.csv")

    p = sub.add_parser("cost", help="estimate spend from a run's call ledger")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--input-price", type=str, help="USD per 1M input tokens")
    p.add_argument("--output-price", type=str, help="USD per 1M output tokens")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.overrides)
    if args.mode:
        overrides.append(f'analysis.mode="{args.mode}"')
    if args.strategy:
        overrides.append(f'generation.strategy="{args.strategy}"')
    if args.steering:
        overrides.append(f"generation.steering_file={json.dumps(str(args.steering))}")
    if args.manual_agents:
        overrides.append('generation.strategy="manual"')
        overrides.append(f"generation.manual_agents_file={json.dumps(str(args.manual_agents))}")
    return load_config(
        args.config,
        overrides,
        seed=args.seed,
        provider=args.provider,
        output_dir=str(args.out) if args.out else None,
    )


def _cmd_run(args: argparse.Namespace) -> int:
    run_dir = pipeline.run_pipeline(config_from_args(args))
    print(run_dir)
    return EXIT_OK


def _cmd_resume(args: argparse.Namespace) -> int:
    print(pipeline.resume(args.run_dir))
    return EXIT_OK


def _cmd_stage(args: argparse.Namespace) -> int:
    stage = pipeline.COMMAND_STAGE[args.command]
    run_dir = args.out
    if run_dir is not None and (run_dir / pipeline.MANIFEST).exists():
        ran = pipeline.run_stage(stage, run_dir=run_dir, force=args.force)
    else:
        config = config_from_args(args)
        ran = pipeline.run_stage(stage, run_dir=config.output_dir, config=config, force=args.force)
        run_dir = config.output_dir
    print(f"{stage}: {'done' if ran else 'already done (use --force to rerun)'}")
    return EXIT_OK


def _cmd_benchmark(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.overrides, seed=args.seed, provider=args.provider)
    ds = LabeledNeedDataset.load(args.dataset) if args.dataset else LabeledNeedDataset.bundled()
    criteria = (
        LatentCriteria(text=args.criteria.read_text(encoding="utf-8")) if args.criteria else LatentCriteria.default()
    )
    modes = [ClassificationMode(m) for m in (args.mode or [m.value for m in ClassificationMode])]
    if args.replay:
        if config.provider != "mock":
            raise ConfigError("--replay needs the mock provider")
        if args.dataset:
            raise ConfigError("--replay only applies to the bundled dataset")
        provider = MockProvider(config.seed, replay_responder(ds, reconstructed_predictions()))
    elif config.provider == "mock":
        provider = MockProvider(config.seed)
    else:
        provider = HttpProvider(config.llm)
    gw = pipeline.make_gateway(config, provider)
    results = run_latent_benchmark(gw, ds, modes, criteria)
    csv_text = matrices_csv(results)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "benchmark.json").write_text(benchmark_json(results), encoding="utf-8")
        (args.out / "matrices.csv").write_text(csv_text, encoding="utf-8")
    sys.stdout.write(csv_text)
    return EXIT_FAILED if any(r.error for r in results.values()) else EXIT_OK


def _cmd_cost(args: argparse.Namespace) -> int:
    pricing = None
    if args.input_price is not None or args.output_price is not None:
        base = PricingModel()
        pricing = PricingModel(
            input_price_per_1m=args.input_price or base.input_price_per_1m,
            output_price_per_1m=args.output_price or base.output_price_per_1m,
        )
    summary = pipeline.ledger_cost(args.run_dir, pricing)
    print(f"calls: {summary.calls}")
    print(f"chat tokens: {summary.chat_usage.input_tokens} in, {summary.chat_usage.output_tokens} out")
    print(f"embedding tokens: {summary.embed_usage.input_tokens} (not priced)")
    print(f"estimated cost: ${format_usd(summary.cost)}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"run": _cmd_run, "resume": _cmd_resume, "benchmark": _cmd_benchmark, "cost": _cmd_cost}.get(
        args.command, _cmd_stage
    )
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ElicitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
