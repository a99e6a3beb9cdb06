"""Command line: ``train``, ``eval`` and ``plot``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import TrainConfig
from .errors import CheckpointError, ConfigurationError, DivergenceError

# flag name -> config field; only flags actually given override the config file
_TRAIN_FLAGS = {
    "env": "env",
    "steps": "total_steps",
    "seed": "seed",
    "batch_size": "batch_size",
    "intrinsic_weight": "intrinsic_weight",
    "intrinsic_decay": "intrinsic_decay",
    "ema_tau": "ema_tau",
    "momentum_freq": "momentum_freq",
    "similarity": "similarity",
    "warmup_steps": "warmup_steps",
    "eval_interval": "eval_interval",
    "eval_episodes": "eval_episodes",
    "checkpoint_interval": "checkpoint_interval",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccfdm", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent")
    t.add_argument("--config", help="key=value config file; flags override it")
    t.add_argument("--env", choices=["pendulum", "pointmass"])
    t.add_argument("--steps", type=int, help="environment steps (action repeat included)")
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--intrinsic-weight", type=float)
    t.add_argument("--intrinsic-decay", type=float)
    t.add_argument("--ema-tau", type=float)
    t.add_argument("--momentum-freq", type=int)
    t.add_argument("--similarity", choices=["dot", "bilinear"])
    t.add_argument("--warmup-steps", type=int)
    t.add_argument("--eval-interval", type=int)
    t.add_argument("--eval-episodes", type=int)
    t.add_argument("--checkpoint-interval", type=int)
    t.add_argument("--no-contrastive", action="store_true")
    t.add_argument("--no-curiosity", action="store_true")
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--pixel-sac", action="store_true", help="plain pixel SAC reference instead of CCFDM")
    t.add_argument("--no-wall-time", action="store_true", help="log wall_time_s as 0 for byte-identical metrics")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--resume", help="checkpoint to continue from")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)

    pl = sub.add_parser("plot", help="plot evaluation returns from a metrics file")
    pl.add_argument("--metrics", required=True)
    pl.add_argument("--out", required=True)
    return p


def config_from_args(args) -> TrainConfig:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    changes = {field: getattr(args, flag) for flag, field in _TRAIN_FLAGS.items() if getattr(args, flag) is not None}
    for flag in ("no_contrastive", "no_curiosity", "no_augment"):
        if getattr(args, flag):
            changes[flag] = True
    if args.no_wall_time:
        changes["log_wall_time"] = False
    return config.replace(**changes).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "train":
            from .harness import train

            config = config_from_args(args)
            trainer = train(config, out_dir=args.out, resume=args.resume, baseline=args.pixel_sac)
            print(f"finished at env step {trainer.env_step}: {trainer.episodes} episodes, {trainer.updates} updates")
        elif args.command == "eval":
            from .harness import evaluate, snapshot_from_checkpoint

            mean, std = evaluate(snapshot_from_checkpoint(args.checkpoint), args.episodes, args.seed)
            print(f"return {mean:.3f} +- {std:.3f} over {args.episodes} episodes")
        elif args.command == "plot":
            from .curves import export_curves

            series = export_curves(args.metrics, args.out)
            print(f"wrote {args.out} ({len(series)} evaluation points)")
    except (ConfigurationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    return 0
