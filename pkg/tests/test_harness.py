import csv
import math

import numpy as np
import pytest

from ccfdm import TrainConfig
from ccfdm.checkpoint import load as load_records
from ccfdm.errors import DivergenceError
from ccfdm.harness import (
    METRICS_HEADER,
    PixelSACTrainer,
    Trainer,
    evaluate,
    load_trainer,
    make_streams,
    random_policy_baseline,
    snapshot_from_checkpoint,
)

from oracles import tiny_config


@pytest.fixture(scope="module")
def base_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("base")
    t = Trainer(tiny_config(), out_dir=out, record_update_inputs=True)
    t.run()
    return t, out


def test_zero_steps_header_only(tmp_path):
    t = Trainer(tiny_config(total_steps=0), out_dir=tmp_path)
    t.run()
    assert (tmp_path / "metrics.csv").read_text() == METRICS_HEADER
    assert t.updates == 0 and (tmp_path / "final.ckpt").exists()


def test_counts(base_run):
    t, out = base_run
    c = t.config
    agent_steps = c.total_steps // c.action_repeat
    assert t.updates == agent_steps - c.warmup_steps // c.action_repeat
    assert t.momentum_syncs == t.updates // c.momentum_freq
    assert t.agent.target_updates == t.updates // c.target_update_freq
    assert t.episodes == c.total_steps // (c.episode_length * c.action_repeat)
    assert t.evaluations == c.total_steps // c.eval_interval
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert len(rows) == t.episodes + t.evaluations
    steps = [int(r["env_step"]) for r in rows]
    assert steps == sorted(steps)


def test_metrics_columns(base_run):
    _, out = base_run
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    episodes = [r for r in rows if r["episode_return"]]
    evals = [r for r in rows if r["eval_return_mean"]]
    assert episodes and evals
    assert all(not r["episode_return"] for r in evals)
    trained = [r for r in episodes if r["critic_loss"]]
    assert trained and all(math.isfinite(float(r["contrastive_loss"])) for r in trained)
    assert all(float(r["alpha"]) > 0 for r in rows)
    assert (out / "config.txt").read_text() == tiny_config().to_text()


def test_deterministic(base_run, tmp_path):
    t, out = base_run
    again = Trainer(tiny_config(), out_dir=tmp_path, record_update_inputs=True)
    again.run()
    assert (tmp_path / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()
    assert again.update_digest == t.update_digest


def test_different_seed_differs(base_run):
    other = Trainer(tiny_config(seed=1))
    other.run()
    assert other.metrics_text() != base_run[0].metrics_text()


def test_resume_from_midpoint(base_run, tmp_path):
    t, out = base_run
    half = Trainer(tiny_config(total_steps=120), out_dir=tmp_path / "half", record_update_inputs=True)
    half.run()
    resumed = load_trainer(tmp_path / "half" / "final.ckpt", out_dir=tmp_path / "rest", total_steps=240, record_update_inputs=True)
    resumed.run()
    assert (tmp_path / "rest" / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()
    assert resumed.update_digest == t.update_digest
    final_a, final_b = load_records(out / "final.ckpt"), load_records(tmp_path / "rest" / "final.ckpt")
    for k, v in final_a.items():
        if k.startswith("param/"):
            assert v.tobytes() == final_b[k].tobytes(), k


def test_resume_from_periodic_checkpoint(base_run, tmp_path):
    t, out = base_run
    # stop mid-episode (not on an episode boundary) so the in-flight observation is exercised
    part = Trainer(tiny_config(total_steps=100, checkpoint_interval=100), out_dir=tmp_path / "a")
    part.run()
    resumed = load_trainer(tmp_path / "a" / "checkpoint.ckpt", total_steps=240)
    resumed.run()
    assert resumed.metrics_text() == t.metrics_text()


def test_reduction_contract():
    flags = dict(no_contrastive=True, no_curiosity=True, no_augment=True)
    reduced = Trainer(tiny_config(**flags), record_update_inputs=True)
    plain = PixelSACTrainer(tiny_config(**flags), record_update_inputs=True)
    reduced.run()
    plain.run()
    assert reduced.update_digest == plain.update_digest
    assert reduced.metrics_text() == plain.metrics_text()


def test_zero_intrinsic_weight_matches_no_curiosity():
    c0 = Trainer(tiny_config(intrinsic_weight=0.0), record_update_inputs=True)
    nc = Trainer(tiny_config(no_curiosity=True), record_update_inputs=True)
    c0.run()
    nc.run()
    assert c0.update_digest == nc.update_digest


def test_curiosity_changes_inputs(base_run):
    nc = Trainer(tiny_config(no_curiosity=True), record_update_inputs=True)
    nc.run()
    assert nc.update_digest != base_run[0].update_digest


def test_evaluation_does_not_touch_training_streams():
    t = Trainer(tiny_config())
    for _ in range(23):
        t.step()
    before = {k: g.bit_generator.state for k, g in t.rngs.items() if k != "eval"}
    obs_before = t._obs.copy()
    t.evaluate_now()
    assert before == {k: g.bit_generator.state for k, g in t.rngs.items() if k != "eval"}
    np.testing.assert_array_equal(obs_before, t._obs)


def test_single_episode_eval_has_zero_std():
    t = Trainer(tiny_config())
    mean, std = evaluate(t.snapshot(), 1, seed=3)
    assert std == 0.0 and 0.0 <= mean <= 20
    assert evaluate(t.snapshot(), 3, seed=3) == evaluate(t.snapshot(), 3, seed=3)


def test_streams_independent_and_reproducible():
    a, b = make_streams(0), make_streams(0)
    draws = {k: g.integers(2**62) for k, g in a.items()}
    assert draws == {k: g.integers(2**62) for k, g in b.items()}
    assert len(set(draws.values())) == len(draws)


def test_random_weight_agent_scores_low():
    cfg = TrainConfig()
    mean, _ = evaluate(Trainer(cfg.replace(total_steps=0)).snapshot(), 3, seed=0)
    assert mean < 60.0


def test_random_policy_baseline_reproducible():
    cfg = tiny_config()
    assert random_policy_baseline(cfg, 3, 0) == random_policy_baseline(cfg, 3, 0)


def test_snapshot_from_checkpoint(base_run):
    t, out = base_run
    snap = snapshot_from_checkpoint(out / "final.ckpt")
    assert evaluate(snap, 2, 5) == evaluate(t.snapshot(), 2, 5)


def test_divergence_saves_checkpoint(tmp_path):
    t = Trainer(tiny_config(), out_dir=tmp_path)
    for name, p in t.agent.critic.params.items():
        p.data[...] = np.nan
    with pytest.raises(DivergenceError):
        t.run()
    assert (tmp_path / "diverged.ckpt").exists()
    assert t.env_step == t.config.warmup_steps + t.config.action_repeat


def test_wall_time_logged_when_enabled(tmp_path):
    t = Trainer(tiny_config(total_steps=80, log_wall_time=True), out_dir=tmp_path)
    t.run()
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert float(rows[-1]["wall_time_s"]) > 0
