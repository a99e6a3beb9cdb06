"""Learning experiments: pendulum (CCFDM vs plain pixel SAC) and point mass (CCFDM vs no curiosity).

Runs are interleaved by seed so that every comparison gets a first data point
early. Each finished run is written to the results JSON immediately; an
interrupted run resumes from its latest checkpoint when the script is restarted.

    python3 scripts/run_learning.py --out results/learning
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

from ccfdm.config import TrainConfig
from ccfdm.harness import PixelSACTrainer, Trainer, load_trainer, random_policy_baseline

# (experiment, variant) -> (env, trainer class, config overrides)
VARIANTS = {
    ("pendulum", "ccfdm"): ("pendulum", Trainer, {}),
    ("pendulum", "pixel_sac"): ("pendulum", PixelSACTrainer, {}),
    ("pointmass", "ccfdm"): ("pointmass", Trainer, {}),
    ("pointmass", "no_curiosity"): ("pointmass", Trainer, {"no_curiosity": True}),
}


def load_results(path: Path) -> dict:
    if path.exists():
        return json.loads(path.read_text())
    return {"baselines": {}, "runs": {}}


def save_results(path: Path, results: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(results, indent=2, sort_keys=True))
    tmp.replace(path)


def eval_rows(trainer) -> list[tuple[int, float]]:
    out = []
    for line in trainer.rows:
        cols = line.rstrip("\n").split(",")
        if cols[2]:
            out.append((int(cols[0]), float(cols[2])))
    return out


def run_one(env, cls, overrides, seed, steps, run_dir: Path, checkpoint_every: int):
    config = TrainConfig(env=env, total_steps=steps, seed=seed, checkpoint_interval=checkpoint_every, **overrides)
    ckpt = run_dir / "checkpoint.ckpt"
    start = time.time()
    if ckpt.exists():
        logging.info("resuming %s from %s", run_dir, ckpt)
        trainer = load_trainer(ckpt, out_dir=run_dir)
    else:
        trainer = cls(config, out_dir=run_dir)
    trainer.run()
    evals = eval_rows(trainer)
    return {
        "env": env,
        "algo": trainer.algo,
        "seed": seed,
        "total_steps": steps,
        "final_eval_return": evals[-1][1] if evals else None,
        "evals": evals,
        "updates": trainer.updates,
        "session_wall_s": time.time() - start,
    }


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default="results/learning")
    p.add_argument("--steps", type=int, default=40_000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--experiments", nargs="+", default=["pendulum", "pointmass"])
    p.add_argument("--baseline-episodes", type=int, default=50)
    p.add_argument("--checkpoint-every", type=int, default=2000)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "results.json"
    results = load_results(results_path)

    for exp in args.experiments:
        if exp not in results["baselines"]:
            mean, std = random_policy_baseline(TrainConfig(env=exp), args.baseline_episodes, seed=10_000)
            results["baselines"][exp] = {"mean": mean, "std": std, "episodes": args.baseline_episodes}
            save_results(results_path, results)
            logging.info("%s random-policy baseline %.2f +- %.2f", exp, mean, std)

    for seed in args.seeds:
        for (exp, variant), (env, cls, overrides) in VARIANTS.items():
            if exp not in args.experiments:
                continue
            key = f"{exp}/{variant}/seed{seed}"
            if key in results["runs"]:
                continue
            logging.info("starting %s", key)
            record = run_one(env, cls, overrides, seed, args.steps, out / exp / f"{variant}_seed{seed}", args.checkpoint_every)
            results = load_results(results_path)
            results["runs"][key] = record
            save_results(results_path, results)
            logging.info("finished %s: final eval %.2f", key, record["final_eval_return"] or float("nan"))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
