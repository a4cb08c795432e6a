"""Command-line entry point: ``bbrl-introspect <command> [options]``.

Commands mirror the pipeline steps.  Each writes into ``--out`` and refuses to
replace files that already exist, so reruns go to a fresh directory.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import analysis, pipeline
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
    stack_blocks,
    stack_from_blocks,
    vae_blocks,
    vae_from_blocks,
)
from .config import ConfigError, RunConfig
from .introspection import DatasetFormatError, WiringVariant, load_dataset, save_dataset
from .toy_env import Behaviour

log = logging.getLogger("introspective_bbrl")


class CommandError(RuntimeError):
    pass


def _outputs(out: Path, *names: str) -> list[Path]:
    paths = [out / n for n in names]
    clash = [str(p) for p in paths if p.exists()]
    if clash:
        raise CommandError(f"refusing to overwrite {', '.join(clash)}")
    out.mkdir(parents=True, exist_ok=True)
    return paths


def _load_stack(path: str):
    ckpt = load_checkpoint(path)
    fe, rn = stack_from_blocks(ckpt.blocks)
    if len(rn.completed_stages) != len(Behaviour):
        raise CommandError(f"{path} holds an unfinished stack (stages: "
                           f"{[b.label for b in rn.completed_stages]})")
    return fe, rn


def cmd_train_stages(config: RunConfig, args) -> int:
    ckpt_path, loss_path = _outputs(Path(config.out_dir), "stack.ckpt", "stage_losses.csv")
    fe, rn, losses = pipeline.train_stack(config)
    save_checkpoint(stack_blocks(fe, rn), ckpt_path, config.to_text(include_output=False))
    loss_path.write_text(pipeline.stage_losses_csv(losses), encoding="utf-8")
    print(f"wrote {ckpt_path} and {loss_path}")
    return 0


def cmd_collect(config: RunConfig, args) -> int:
    fe, _ = _load_stack(args.checkpoint)
    (path,) = _outputs(Path(config.out_dir), "activations.jsonl")
    dataset = pipeline.collect(config, fe, fe_checkpoint=str(args.checkpoint))
    save_dataset(dataset, path)
    print(f"wrote {len(dataset)} records to {path}")
    return 0


def cmd_train_vae(config: RunConfig, args) -> int:
    dataset = load_dataset(args.dataset, expected_dim=config.vae_input_dim)
    ckpt_path, loss_path = _outputs(Path(config.out_dir), "vae.ckpt", "vae_loss.csv")
    result = pipeline.fit_vae(config, dataset)
    save_checkpoint(vae_blocks(result.model), ckpt_path, config.to_text(include_output=False))
    loss_path.write_text(pipeline.vae_loss_csv(result), encoding="utf-8")
    print(f"wrote {ckpt_path}; final validation loss {result.validation_loss[-1]:.5f}")
    return 0


def cmd_train_ac(config: RunConfig, args) -> int:
    if config.variant.uses_latent and not args.vae:
        raise CommandError(f"variant {config.variant.value!r} needs --vae CHECKPOINT")
    fe, rn = _load_stack(args.checkpoint)
    vae = vae_from_blocks(load_checkpoint(args.vae).blocks) if args.vae else None
    out = Path(config.out_dir)
    _outputs(out, "training_log.csv", "success_curve.csv", "state_values.csv", "ac.ckpt")
    ac, training_log = pipeline.train_ac(config, fe, rn, vae)
    pipeline.write_run(out, config, ac, training_log)
    report = analysis.convergence_report(training_log)
    print(f"{config.variant.value} seed {config.seed}: final success {report.final_success:.1f}%, "
          f"episodes to 80%: {report.episodes_to_threshold}")
    return 0


def cmd_experiment(config: RunConfig, args) -> int:
    variants = [WiringVariant.parse(v) for v in args.variants.split(",")] if args.variants else None
    result = pipeline.run_suite(args.suite, config, args.seeds, variants)
    if result.table_path is not None:
        print(result.table_path.read_text(encoding="utf-8"), end="")
    print(f"outputs in {result.out_dir}")
    return 1 if result.failures else 0


def cmd_report(config: RunConfig, args) -> int:
    paths = []
    for p in map(Path, args.paths):
        paths.extend(sorted(p.rglob("training_log.csv")) if p.is_dir() else [p])
    if not paths:
        raise CommandError("no training_log.csv files found")
    table = pipeline.report_from_logs(paths)
    if args.table:
        target = Path(args.table)
        if target.exists():
            raise CommandError(f"refusing to overwrite {target}")
        target.write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def _seed_list(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part.strip():
            seeds.append(int(part))
    return seeds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--variant", help="wiring variant, e.g. baseline or means_logvar")
    common.add_argument("--noise", type=float, help="observation noise level in [0, 1]")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="bbrl-introspect",
                                     description="Introspective behaviour-based RL on a toy pick-and-place task.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-stages", parents=[common], help="clone the three behaviours in order")
    p.set_defaults(func=cmd_train_stages)

    p = sub.add_parser("collect", parents=[common], help="record FE activations along expert rollouts")
    p.add_argument("--checkpoint", required=True, help="stack checkpoint from train-stages")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train-vae", parents=[common], help="fit the VAE on an activation dataset")
    p.add_argument("--dataset", required=True, help="JSONL dataset from collect")
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("train-ac", parents=[common], help="train the behaviour-choosing actor-critic")
    p.add_argument("--checkpoint", required=True, help="stack checkpoint from train-stages")
    p.add_argument("--vae", help="VAE checkpoint (needed by every variant except baseline)")
    p.set_defaults(func=cmd_train_ac)

    p = sub.add_parser("experiment", parents=[common], help="run a whole experiment suite")
    p.add_argument("suite", choices=pipeline.SUITES)
    p.add_argument("--seeds", type=_seed_list, help="comma list or ranges, e.g. 1-5")
    p.add_argument("--variants", help="comma list restricting the variants")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", parents=[common], help="comparison table from training logs")
    p.add_argument("paths", nargs="+", help="training_log.csv files or directories to search")
    p.add_argument("--table", help="also write the table to this CSV file")
    p.set_defaults(func=cmd_report)
    return parser


def load_config(args) -> RunConfig:
    config = RunConfig.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.variant is not None:
        changes["variant"] = WiringVariant.parse(args.variant)
    if args.noise is not None:
        changes["noise_level"] = args.noise
    if args.out is not None:
        changes["out_dir"] = args.out
    return config.replace(**changes) if changes else config


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(config, args)
    except DatasetFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CommandError, CheckpointError, pipeline.OutputExistsError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
