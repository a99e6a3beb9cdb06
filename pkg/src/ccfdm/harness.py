"""Training loop for CCFDM (and the plain pixel-SAC baseline), evaluation, metrics and checkpoints.

Step accounting follows the DMC convention: ``env_step`` counts physics steps,
so every agent action advances it by ``action_repeat``. After warm-up there is
exactly one gradient update per agent action.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import AdamState, ParameterSet, adam_step, no_grad
from .config import TrainConfig
from .contrastive import SimilarityKind, info_nce_loss
from .curiosity import CuriosityState, intrinsic_reward, prediction_error, update_maxima
from .encoders import CCFDMNetworks, PixelEncoder
from .envs import make_env
from .errors import CheckpointError, DivergenceError
from .replay import ReplayBuffer, center_crop, random_crop_batch
from .sac import Actor, SACAgent

log = logging.getLogger(__name__)

METRIC_FIELDS = (
    "env_step",
    "episode_return",
    "eval_return_mean",
    "eval_return_std",
    "contrastive_loss",
    "critic_loss",
    "actor_loss",
    "alpha",
    "mean_intrinsic_reward",
    "re_max",
    "ri_max",
    "wall_time_s",
)
METRICS_HEADER = ",".join(METRIC_FIELDS) + "\n"

# append-only: a stream's seed depends on its position
STREAMS = (
    "env",
    "crop_query",
    "crop_key",
    "actor",
    "replay",
    "eval",
    "init_encoder",
    "init_model",
    "init_actor",
    "init_critic",
)


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators derived from one master seed."""
    return {
        name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,))) for i, name in enumerate(STREAMS)
    }


def make_env_from_config(config: TrainConfig):
    kw = dict(
        image_size=config.image_size,
        frame_stack=config.frame_stack,
        action_repeat=config.action_repeat,
        episode_length=config.episode_length,
    )
    if config.env == "pendulum":
        kw["damping"] = config.pendulum_damping
    return make_env(config.env, **kw)


def _np_dtype(config: TrainConfig):
    return np.float32 if config.dtype == "float32" else np.float64


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def _mean(xs):
    return float(np.mean(xs)) if xs else None


@dataclass
class AgentSnapshot:
    """Encoder + actor, enough to act deterministically."""

    encoder: PixelEncoder
    actor: Actor
    config: TrainConfig

    def act(self, obs: np.ndarray) -> np.ndarray:
        x = center_crop(obs[None], self.config.crop_size, _np_dtype(self.config))
        with no_grad():
            mu, _ = self.actor.distribution(self.encoder(x))
        return np.tanh(mu.data[0])


def evaluate(snapshot: AgentSnapshot, n_episodes: int, seed: int) -> tuple[float, float]:
    """Mean and (population) std of returns over fresh deterministic-policy episodes."""
    seeds = np.random.SeedSequence(seed).generate_state(n_episodes)
    returns = []
    for s in seeds:
        env = make_env_from_config(snapshot.config)
        obs = env.reset(int(s))
        total, done = 0.0, False
        while not done:
            obs, r, done = env.step(snapshot.act(obs))
            total += r
        returns.append(total)
    return float(np.mean(returns)), float(np.std(returns))


def random_policy_baseline(config: TrainConfig, n_episodes: int, seed: int) -> tuple[float, float]:
    """Returns of uniformly random actions, measured with the same episode protocol as ``evaluate``."""
    seeds = np.random.SeedSequence(seed).generate_state(n_episodes)
    rng = np.random.default_rng(seed)
    returns = []
    for s in seeds:
        env = make_env_from_config(config)
        env.reset(int(s))
        total, done = 0.0, False
        while not done:
            _, r, done = env.step(rng.uniform(-1.0, 1.0, size=env.action_dim))
            total += r
        returns.append(total)
    return float(np.mean(returns)), float(np.std(returns))


class Trainer:
    algo = "ccfdm"

    def __init__(self, config: TrainConfig, out_dir=None, record_update_inputs: bool = False):
        self.config = config.validate()
        self.dtype = _np_dtype(config)
        self.rngs = make_streams(config.seed)
        self.env = make_env_from_config(config)
        self.action_dim = self.env.action_dim
        self.obs_shape = (3 * config.frame_stack, config.crop_size, config.crop_size)
        self.curiosity = CuriosityState(config.intrinsic_weight, config.intrinsic_decay)
        self._build_models()
        n_transitions = max(1, math.ceil(config.total_steps / config.action_repeat))
        self.replay = ReplayBuffer(self.env.obs_shape, self.action_dim, min(config.replay_capacity, n_transitions))
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.record_update_inputs = record_update_inputs
        self.update_digest = b""
        self.env_step = 0
        self.episodes = 0
        self.evaluations = 0
        self.updates = 0
        self.rows: list[str] = []
        self.last_row: dict | None = None
        self._obs = None
        self._reset_episode_stats()
        self._wall_offset = 0.0
        self._wall_start = None

    # ------------------------------------------------------------------ models

    def _build_models(self) -> None:
        c, r = self.config, self.rngs
        self.nets = CCFDMNetworks(
            self.obs_shape,
            self.action_dim,
            latent_dim=c.latent_dim,
            action_feature_dim=c.action_feature_dim,
            hidden_dim=c.model_hidden_dim,
            num_filters=c.num_filters,
            encoder_rng=r["init_encoder"],
            model_rng=r["init_model"],
            dtype=self.dtype,
        )
        self.encoder = self.nets.query_encoder
        self.similarity = SimilarityKind(c.similarity, c.latent_dim, self.dtype)
        self.agent = self._make_agent()
        self.encoder_opt = AdamState.for_params(self.encoder.params, lr=c.lr_encoder)
        self.ae_opt = AdamState.for_params(self.nets.action_embedding.params, lr=c.lr_contrastive)
        self.fdm_opt = AdamState.for_params(self.nets.fdm.params, lr=c.lr_contrastive)
        self.sim_opt = AdamState.for_params(self.similarity.params, lr=c.lr_contrastive)

    def _make_agent(self) -> SACAgent:
        c = self.config
        return SACAgent(
            c.latent_dim,
            self.action_dim,
            hidden_dim=c.hidden_dim,
            discount=c.discount,
            critic_tau=c.critic_tau,
            init_alpha=c.init_alpha,
            actor_lr=c.lr_actor,
            critic_lr=c.lr_critic,
            alpha_lr=c.lr_alpha,
            actor_rng=self.rngs["init_actor"],
            critic_rng=self.rngs["init_critic"],
            dtype=self.dtype,
        )

    def param_sets(self) -> dict[str, ParameterSet]:
        sets = {
            "encoder": self.encoder.params,
            "key_encoder": self.nets.key_encoder.params,
            "action_embedding": self.nets.action_embedding.params,
            "fdm": self.nets.fdm.params,
            "similarity": self.similarity.params,
        }
        sets.update(self.agent.param_sets())
        return sets

    def optimizers(self) -> dict[str, AdamState]:
        opts = {"encoder": self.encoder_opt, "action_embedding": self.ae_opt, "fdm": self.fdm_opt, "similarity": self.sim_opt}
        opts.update(self.agent.optimizers())
        return opts

    @property
    def momentum_syncs(self) -> int:
        return self.nets.momentum_syncs

    def snapshot(self) -> AgentSnapshot:
        return AgentSnapshot(self.encoder.clone(), self.agent.actor.clone(), self.config)

    # ------------------------------------------------------------------ acting

    def act(self, obs: np.ndarray, deterministic: bool = False) -> np.ndarray:
        x = center_crop(obs[None], self.config.crop_size, self.dtype)
        with no_grad():
            z = self.encoder(x)
        action, _ = self.agent.sample_action(z, self.rngs["actor"], deterministic=deterministic)
        return action[0]

    # ------------------------------------------------------------------ updates

    def _crops(self, batch):
        c = self.config
        if c.no_augment:
            return center_crop(batch.obs, c.crop_size, self.dtype), center_crop(batch.next_obs, c.crop_size, self.dtype)
        obs_q = random_crop_batch(batch.obs, c.crop_size, self.rngs["crop_query"], self.dtype)
        obs_k = random_crop_batch(batch.next_obs, c.crop_size, self.rngs["crop_key"], self.dtype)
        return obs_q, obs_k

    def _record_inputs(self, *arrays) -> None:
        if not self.record_update_inputs:
            return
        h = hashlib.sha256(self.update_digest)
        for a in arrays:
            h.update(np.ascontiguousarray(a).tobytes())
        self.update_digest = h.digest()

    def update(self) -> dict:
        """One combined step: contrastive (QE, AE, FDM, W) + curiosity + SAC critic, then actor/targets/momentum."""
        c = self.config
        batch = self.replay.sample(c.batch_size, self.rngs["replay"])
        obs_q, obs_k = self._crops(batch)
        q = self.nets.encode_query(obs_q)
        k = self.nets.encode_key(obs_k)

        q_pred = None
        if not c.no_contrastive:
            q_pred = self.nets.predict_next(q, batch.actions)
        elif not c.no_curiosity:
            with no_grad():
                q_pred = self.nets.predict_next(q.detach(), batch.actions)

        r_i = np.zeros(len(batch), dtype=self.dtype)
        if not c.no_curiosity:
            err = prediction_error(q_pred, k)
            update_maxima(self.curiosity, batch.rewards, err)
            self.curiosity.t = self.env_step
            r_i = intrinsic_reward(err, self.curiosity).astype(self.dtype)
        rewards = batch.rewards.astype(self.dtype) + r_i

        target = self.agent.target_values(k, rewards, batch.dones, self.rngs["actor"])
        self._record_inputs(obs_q, batch.actions, rewards, batch.dones, k.data)
        critic_loss = self.agent.critic_loss(q, batch.actions, target)
        loss = critic_loss
        contrastive = None
        if not c.no_contrastive:
            contrastive = info_nce_loss(q_pred, k, self.similarity)
            loss = ad.add(loss, contrastive)
        if not np.isfinite(loss.data):
            raise DivergenceError(f"non-finite loss at env step {self.env_step}")
        ad.backward(loss)
        adam_step(self.encoder.params, self.encoder_opt)
        adam_step(self.agent.critic.params, self.agent.critic_opt)
        if contrastive is not None:
            adam_step(self.nets.action_embedding.params, self.ae_opt)
            adam_step(self.nets.fdm.params, self.fdm_opt)
            adam_step(self.similarity.params, self.sim_opt)
        else:
            for ps in (self.nets.action_embedding.params, self.nets.fdm.params, self.similarity.params):
                ps.zero_grad()

        self.updates += 1
        actor_loss = None
        if self.updates % c.actor_update_freq == 0:
            actor_loss, _ = self.agent.update_actor_and_alpha(q.detach(), self.rngs["actor"])
        if self.updates % c.target_update_freq == 0:
            self.agent.update_targets()
        if self.updates % c.momentum_freq == 0:
            self.nets.momentum_sync(c.ema_tau)

        stats = {
            "critic_loss": float(critic_loss.data),
            "contrastive_loss": None if contrastive is None else float(contrastive.data),
            "actor_loss": actor_loss,
            "mean_intrinsic_reward": float(np.mean(r_i)),
        }
        self._accumulate(stats)
        return stats

    # ------------------------------------------------------------------ loop

    def _reset_episode_stats(self) -> None:
        self._ep = {"return": 0.0, "critic_loss": [], "contrastive_loss": [], "actor_loss": [], "mean_intrinsic_reward": []}

    def _accumulate(self, stats: dict) -> None:
        for k, v in stats.items():
            if v is not None:
                self._ep[k].append(v)

    def _wall(self) -> float:
        if not self.config.log_wall_time:
            return 0.0
        return self._wall_offset + (time.perf_counter() - self._wall_start if self._wall_start else 0.0)

    def _append_row(self, row: dict) -> None:
        line = ",".join(_fmt(row.get(f)) for f in METRIC_FIELDS) + "\n"
        self.rows.append(line)
        self.last_row = row
        if self.out_dir is not None:
            with open(self.out_dir / "metrics.csv", "a", encoding="utf-8") as fh:
                fh.write(line)

    def _log_episode(self) -> None:
        ep = self._ep
        self.episodes += 1
        self._append_row(
            {
                "env_step": self.env_step,
                "episode_return": ep["return"],
                "contrastive_loss": _mean(ep["contrastive_loss"]),
                "critic_loss": _mean(ep["critic_loss"]),
                "actor_loss": _mean(ep["actor_loss"]),
                "alpha": self.agent.alpha,
                "mean_intrinsic_reward": _mean(ep["mean_intrinsic_reward"]),
                "re_max": self.curiosity.re_max,
                "ri_max": self.curiosity.ri_max,
                "wall_time_s": self._wall(),
            }
        )
        log.info("step %d episode %d return %.2f", self.env_step, self.episodes, ep["return"])
        self._reset_episode_stats()

    def evaluate_now(self) -> tuple[float, float]:
        seed = int(self.rngs["eval"].integers(2**31))
        snap = AgentSnapshot(self.encoder, self.agent.actor, self.config)
        mean, std = evaluate(snap, self.config.eval_episodes, seed)
        self.evaluations += 1
        self._append_row(
            {
                "env_step": self.env_step,
                "eval_return_mean": mean,
                "eval_return_std": std,
                "alpha": self.agent.alpha,
                "re_max": self.curiosity.re_max,
                "ri_max": self.curiosity.ri_max,
                "wall_time_s": self._wall(),
            }
        )
        log.info("step %d eval %.2f +- %.2f", self.env_step, mean, std)
        return mean, std

    def step(self) -> None:
        """One agent action (``action_repeat`` env steps), plus its update once warm-up is over."""
        c = self.config
        if self._obs is None:
            self._obs = self.env.reset(int(self.rngs["env"].integers(2**31)))
        if self.env_step < c.warmup_steps:
            action = self.rngs["actor"].uniform(-1.0, 1.0, size=self.action_dim)
        else:
            action = self.act(self._obs)
        next_obs, reward, done = self.env.step(action)
        prev = self.env_step
        self.env_step += c.action_repeat
        # episodes end only on the time limit, so the critic keeps bootstrapping
        self.replay.add(self._obs, action, reward, next_obs, False)
        self._ep["return"] += reward
        if self.env_step > c.warmup_steps:
            self.update()
        self._obs = next_obs
        if done:
            self._log_episode()
            self._obs = None
        if self.env_step // c.eval_interval > prev // c.eval_interval:
            self.evaluate_now()
        if c.checkpoint_interval and self.env_step // c.checkpoint_interval > prev // c.checkpoint_interval:
            if self.out_dir is not None:
                self.save_checkpoint(self.out_dir / "checkpoint.ckpt")

    def _prepare_out_dir(self) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "config.txt").write_text(self.config.to_text(), encoding="utf-8")
        with open(self.out_dir / "metrics.csv", "w", encoding="utf-8") as fh:
            fh.write(METRICS_HEADER)
            fh.writelines(self.rows)

    def run(self) -> dict | None:
        """Train until ``config.total_steps``; returns the last metrics row."""
        self._prepare_out_dir()
        self._wall_start = time.perf_counter()
        try:
            while self.env_step < self.config.total_steps:
                self.step()
        except DivergenceError:
            if self.out_dir is not None:
                self.save_checkpoint(self.out_dir / "diverged.ckpt")
            log.error("training diverged at env step %d", self.env_step)
            raise
        if self.out_dir is not None:
            self.save_checkpoint(self.out_dir / "final.ckpt")
        return self.last_row

    def metrics_text(self) -> str:
        return METRICS_HEADER + "".join(self.rows)

    # ------------------------------------------------------------------ checkpoints

    def state_records(self) -> dict:
        rec: dict = {}
        for set_name, ps in self.param_sets().items():
            for k, arr in ps.arrays().items():
                rec[f"param/{set_name}/{k}"] = arr
        for opt_name, st in self.optimizers().items():
            for k in st.m:
                rec[f"adam/{opt_name}/m/{k}"] = st.m[k]
                rec[f"adam/{opt_name}/v/{k}"] = st.v[k]
        for k, arr in self.replay.state_arrays().items():
            rec[f"replay/{k}"] = arr
        env_state = self.env.get_state()
        if env_state["frames"] is not None:
            rec["env/frames"] = env_state["frames"]
        if self._obs is not None:
            rec["env/current_obs"] = self._obs
        rec["meta"] = {
            "algo": self.algo,
            "config": self.config.to_text(),
            "env_step": self.env_step,
            "episodes": self.episodes,
            "evaluations": self.evaluations,
            "updates": self.updates,
            "momentum_syncs": self.momentum_syncs,
            "target_updates": self.agent.target_updates,
            "adam": {n: {"step": st.step, "lr": st.lr} for n, st in self.optimizers().items()},
            "curiosity": self.curiosity.as_dict(),
            "rng": {n: g.bit_generator.state for n, g in self.rngs.items()},
            "replay": {"cursor": self.replay.cursor, "count": self.replay.count},
            "env": {k: env_state[k] for k in ("physics", "steps", "clamp_count")},
            "has_obs": self._obs is not None,
            "episode": self._ep,
            "rows": self.rows,
            "last_row": self.last_row,
            "wall_time_s": self._wall(),
            "update_digest": self.update_digest.hex(),
        }
        return rec

    def save_checkpoint(self, path) -> None:
        checkpoint.save(path, self.state_records())

    def load_state(self, rec: dict) -> None:
        meta = rec["meta"]
        if meta["algo"] != self.algo:
            raise CheckpointError(f"checkpoint is for {meta['algo']!r}, not {self.algo!r}")
        try:
            for set_name, ps in self.param_sets().items():
                ps.load_arrays({k: rec[f"param/{set_name}/{k}"] for k in ps.names()})
            for opt_name, st in self.optimizers().items():
                for k in st.m:
                    st.m[k][...] = rec[f"adam/{opt_name}/m/{k}"]
                    st.v[k][...] = rec[f"adam/{opt_name}/v/{k}"]
                st.step = meta["adam"][opt_name]["step"]
            self.replay.load_state(
                {k: rec[f"replay/{k}"] for k in ("obs", "next_obs", "actions", "rewards", "dones")},
                meta["replay"]["cursor"],
                meta["replay"]["count"],
            )
        except KeyError as exc:
            raise CheckpointError(f"checkpoint is missing record {exc}") from None
        for k, v in meta["curiosity"].items():
            setattr(self.curiosity, k, v)
        for n, state in meta["rng"].items():
            self.rngs[n].bit_generator.state = state
        env_state = dict(meta["env"], frames=rec.get("env/frames"))
        self.env.set_state(env_state)
        self._obs = rec["env/current_obs"].copy() if meta["has_obs"] else None
        self.env_step = meta["env_step"]
        self.episodes = meta["episodes"]
        self.evaluations = meta["evaluations"]
        self.updates = meta["updates"]
        self._set_sync_counters(meta)
        self._ep = meta["episode"]
        self.rows = list(meta["rows"])
        self.last_row = meta["last_row"]
        self._wall_offset = meta["wall_time_s"]
        self.update_digest = bytes.fromhex(meta["update_digest"])

    def _set_sync_counters(self, meta: dict) -> None:
        self.nets.momentum_syncs = meta["momentum_syncs"]
        self.agent.target_updates = meta["target_updates"]


class PixelSACTrainer(Trainer):
    """Plain pixel SAC: encoder trained by the critic, EMA target encoder, no contrastive or curiosity code."""

    algo = "pixel_sac"

    def _build_models(self) -> None:
        c = self.config
        self.encoder = PixelEncoder(
            self.obs_shape, c.latent_dim, c.num_filters, rng=self.rngs["init_encoder"], dtype=self.dtype
        )
        self.target_encoder = self.encoder.clone()
        self.agent = self._make_agent()
        self.encoder_opt = AdamState.for_params(self.encoder.params, lr=c.lr_encoder)
        self.target_encoder_updates = 0

    def param_sets(self) -> dict[str, ParameterSet]:
        sets = {"encoder": self.encoder.params, "key_encoder": self.target_encoder.params}
        sets.update(self.agent.param_sets())
        return sets

    def optimizers(self) -> dict[str, AdamState]:
        opts = {"encoder": self.encoder_opt}
        opts.update(self.agent.optimizers())
        return opts

    @property
    def momentum_syncs(self) -> int:
        return self.target_encoder_updates

    def _set_sync_counters(self, meta: dict) -> None:
        self.target_encoder_updates = meta["momentum_syncs"]
        self.agent.target_updates = meta["target_updates"]

    def update(self) -> dict:
        c = self.config
        batch = self.replay.sample(c.batch_size, self.rngs["replay"])
        obs = center_crop(batch.obs, c.crop_size, self.dtype)
        next_obs = center_crop(batch.next_obs, c.crop_size, self.dtype)
        z = self.encoder(obs)
        with no_grad():
            z_next = self.target_encoder(next_obs)
        rewards = batch.rewards.astype(self.dtype) + np.zeros(len(batch), dtype=self.dtype)
        target = self.agent.target_values(z_next, rewards, batch.dones, self.rngs["actor"])
        self._record_inputs(obs, batch.actions, rewards, batch.dones, z_next.data)
        critic_loss = self.agent.critic_loss(z, batch.actions, target)
        if not np.isfinite(critic_loss.data):
            raise DivergenceError(f"non-finite loss at env step {self.env_step}")
        ad.backward(critic_loss)
        adam_step(self.encoder.params, self.encoder_opt)
        adam_step(self.agent.critic.params, self.agent.critic_opt)
        self.updates += 1
        actor_loss = None
        if self.updates % c.actor_update_freq == 0:
            actor_loss, _ = self.agent.update_actor_and_alpha(z.detach(), self.rngs["actor"])
        if self.updates % c.target_update_freq == 0:
            self.agent.update_targets()
            ad.ema_blend(self.target_encoder.params, self.encoder.params, c.ema_tau)
            self.target_encoder_updates += 1
        stats = {"critic_loss": float(critic_loss.data), "actor_loss": actor_loss, "mean_intrinsic_reward": 0.0}
        self._accumulate(stats)
        return stats


TRAINERS = {Trainer.algo: Trainer, PixelSACTrainer.algo: PixelSACTrainer}


def load_trainer(path, out_dir=None, total_steps: int | None = None, **kw) -> Trainer:
    """Rebuild a trainer from a checkpoint; ``total_steps`` may extend the run."""
    rec = checkpoint.load(path)
    meta = rec.get("meta")
    if not isinstance(meta, dict) or "algo" not in meta:
        raise CheckpointError(f"{path}: missing metadata section")
    config = TrainConfig.from_text(meta["config"])
    if total_steps is not None:
        config = config.replace(total_steps=total_steps)
    cls = TRAINERS.get(meta["algo"])
    if cls is None:
        raise CheckpointError(f"{path}: unknown algorithm {meta['algo']!r}")
    trainer = cls(config, out_dir=out_dir, **kw)
    trainer.load_state(rec)
    return trainer


def snapshot_from_checkpoint(path) -> AgentSnapshot:
    rec = checkpoint.load(path)
    config = TrainConfig.from_text(rec["meta"]["config"])
    dtype = _np_dtype(config)
    env = make_env_from_config(config)
    obs_shape = (3 * config.frame_stack, config.crop_size, config.crop_size)
    encoder = PixelEncoder(obs_shape, config.latent_dim, config.num_filters, rng=np.random.default_rng(0), dtype=dtype)
    actor = Actor(config.latent_dim, env.action_dim, config.hidden_dim, np.random.default_rng(0), dtype)
    try:
        encoder.params.load_arrays({k: rec[f"param/encoder/{k}"] for k in encoder.params.names()})
        actor.params.load_arrays({k: rec[f"param/actor/{k}"] for k in actor.params.names()})
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing record {exc}") from None
    return AgentSnapshot(encoder, actor, config)


def train(config: TrainConfig, out_dir=None, resume=None, baseline: bool = False) -> Trainer:
    """Run (or resume) a training job and return the finished trainer."""
    if resume is not None:
        trainer = load_trainer(resume, out_dir=out_dir, total_steps=config.total_steps)
    else:
        trainer = (PixelSACTrainer if baseline else Trainer)(config, out_dir=out_dir)
    trainer.run()
    return trainer
