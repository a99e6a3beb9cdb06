"""Soft Actor-Critic on encoder latents: squashed-Gaussian actor, twin critics, auto-tuned alpha."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, ParameterSet, Tensor, adam_step, no_grad
from .encoders import MLP
from .errors import DivergenceError

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class Actor:
    def __init__(self, latent_dim: int, action_dim: int, hidden_dim: int = 256, rng=None, dtype=np.float64, net=None):
        self.action_dim = action_dim
        self.net = net or MLP([latent_dim, hidden_dim, hidden_dim, 2 * action_dim], rng, dtype)

    @property
    def params(self) -> ParameterSet:
        return self.net.params

    def distribution(self, z) -> tuple[Tensor, Tensor]:
        """Mean and log-std, the latter squashed smoothly into [LOG_STD_MIN, LOG_STD_MAX]."""
        out = self.net(z)
        a = self.action_dim
        mu = out[..., :a]
        raw = ad.tanh(out[..., a:])
        log_std = ad.add(ad.mul(ad.add(raw, 1.0), 0.5 * (LOG_STD_MAX - LOG_STD_MIN)), LOG_STD_MIN)
        return mu, log_std

    def sample(self, z, noise: np.ndarray) -> tuple[Tensor, Tensor]:
        """Reparameterised tanh-Gaussian sample and its log-probability (summed over action dims)."""
        mu, log_std = self.distribution(z)
        eps = Tensor(np.asarray(noise, dtype=mu.dtype))
        u = ad.add(mu, ad.mul(ad.exp(log_std), eps))
        action = ad.tanh(u)
        gauss = ad.sub(ad.mul(ad.square(eps), -0.5), log_std)
        # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u))
        log_det = ad.mul(ad.sub(ad.sub(math.log(2.0), u), ad.softplus(ad.mul(u, -2.0))), 2.0)
        log_prob = ad.add(ad.tsum(ad.sub(gauss, log_det), axis=-1), -self.action_dim * _HALF_LOG_2PI)
        return action, log_prob

    def clone(self) -> "Actor":
        return Actor(0, self.action_dim, net=self.net.clone())


class CriticPair:
    """Two independent Q networks over concat(latent, action)."""

    def __init__(self, latent_dim: int, action_dim: int, hidden_dim: int = 256, rng=None, dtype=np.float64, nets=None):
        if nets is None:
            nets = [MLP([latent_dim + action_dim, hidden_dim, hidden_dim, 1], rng, dtype) for _ in range(2)]
        self.q1, self.q2 = nets
        # one flat ParameterSet sharing the leaf tensors of both heads
        self.params = ParameterSet(self.q1.params.dtype)
        for tag, net in (("q1", self.q1), ("q2", self.q2)):
            for name, t in net.params.items():
                self.params.share(f"{tag}.{name}", t)

    def __call__(self, z, action) -> tuple[Tensor, Tensor]:
        if not isinstance(action, Tensor):
            action = Tensor(np.asarray(action, dtype=self.params.dtype))
        x = ad.concat([z, action], axis=-1)
        return ad.reshape(self.q1(x), (-1,)), ad.reshape(self.q2(x), (-1,))

    def clone(self) -> "CriticPair":
        return CriticPair(0, 0, nets=[self.q1.clone(), self.q2.clone()])


def bellman_target(rewards, dones, next_value, discount: float) -> np.ndarray:
    """y = r + discount * (1 - d) * T."""
    rewards = np.asarray(rewards)
    y = rewards + discount * (1.0 - np.asarray(dones, dtype=rewards.dtype)) * np.asarray(next_value)
    if not np.all(np.isfinite(y)):
        raise DivergenceError("non-finite Bellman target")
    return y


def critic_loss_from_values(q1: Tensor, q2: Tensor, target) -> Tensor:
    """Sum over both critics of the mean squared error to a shared, constant target."""
    y = Tensor(np.asarray(target, dtype=q1.dtype))
    return ad.add(ad.mean(ad.square(ad.sub(q1, y))), ad.mean(ad.square(ad.sub(q2, y))))


class SACAgent:
    def __init__(
        self,
        latent_dim: int,
        action_dim: int,
        hidden_dim: int = 256,
        discount: float = 0.99,
        critic_tau: float = 0.01,
        init_alpha: float = 0.1,
        actor_lr: float = 1e-3,
        critic_lr: float = 1e-3,
        alpha_lr: float = 1e-3,
        actor_rng=None,
        critic_rng=None,
        dtype=np.float64,
    ):
        self.action_dim = action_dim
        self.discount = discount
        self.critic_tau = critic_tau
        self.actor = Actor(latent_dim, action_dim, hidden_dim, actor_rng, dtype)
        self.critic = CriticPair(latent_dim, action_dim, hidden_dim, critic_rng, dtype)
        self.critic_target = self.critic.clone()
        self.log_alpha = ParameterSet(dtype)
        self.log_alpha.add("log_alpha", math.log(init_alpha))
        self.target_entropy = -float(action_dim)
        self.actor_opt = AdamState.for_params(self.actor.params, lr=actor_lr)
        self.critic_opt = AdamState.for_params(self.critic.params, lr=critic_lr)
        self.alpha_opt = AdamState.for_params(self.log_alpha, lr=alpha_lr)
        self.target_updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha["log_alpha"].data))

    def sample_action(self, z, rng=None, deterministic: bool = False):
        """Returns (action array, log_prob array or None); no gradient is recorded."""
        with no_grad():
            if deterministic:
                mu, _ = self.actor.distribution(z)
                return np.tanh(mu.data), None
            noise = rng.standard_normal(size=(*np.shape(z.data if isinstance(z, Tensor) else z)[:-1], self.action_dim))
            action, log_prob = self.actor.sample(z, noise)
            return action.data, log_prob.data

    def target_values(self, next_z, rewards, dones, rng) -> np.ndarray:
        """Bellman target with fresh next actions from the current actor, computed without a tape."""
        with no_grad():
            next_z = next_z if isinstance(next_z, Tensor) else Tensor(np.asarray(next_z))
            noise = rng.standard_normal(size=(next_z.shape[0], self.action_dim))
            a_next, logp_next = self.actor.sample(next_z, noise)
            t1, t2 = self.critic_target(next_z, a_next)
            soft_value = np.minimum(t1.data, t2.data) - self.alpha * logp_next.data
        return bellman_target(rewards, dones, soft_value, self.discount)

    def critic_loss(self, z: Tensor, actions, target) -> Tensor:
        q1, q2 = self.critic(z, actions)
        return critic_loss_from_values(q1, q2, target)

    def actor_loss(self, z, rng) -> tuple[Tensor, np.ndarray]:
        """mean(alpha * log pi - min Q); latents enter as constants."""
        z = Tensor(np.asarray(z.data if isinstance(z, Tensor) else z))
        noise = rng.standard_normal(size=(z.shape[0], self.action_dim))
        action, log_prob = self.actor.sample(z, noise)
        q1, q2 = self.critic(z, action)
        loss = ad.mean(ad.sub(ad.mul(log_prob, self.alpha), ad.minimum(q1, q2)))
        return loss, log_prob.data

    def alpha_loss(self, log_prob) -> Tensor:
        """-log_alpha * mean(log pi + target_entropy)."""
        c = float(np.mean(np.asarray(log_prob, dtype=np.float64) + self.target_entropy))
        return ad.mul(ad.tsum(self.log_alpha["log_alpha"]), -c)

    def update_actor_and_alpha(self, z, rng) -> tuple[float, float]:
        loss, log_prob = self.actor_loss(z, rng)
        ad.backward(loss)
        # actor loss also reaches the critic weights; critics learn only from the critic loss
        self.critic.params.zero_grad()
        adam_step(self.actor.params, self.actor_opt)
        a_loss = self.alpha_loss(log_prob)
        ad.backward(a_loss)
        adam_step(self.log_alpha, self.alpha_opt)
        return float(loss.data), float(a_loss.data)

    def update_targets(self) -> None:
        ad.ema_blend(self.critic_target.params, self.critic.params, self.critic_tau)
        self.target_updates += 1

    def param_sets(self) -> dict[str, ParameterSet]:
        return {
            "actor": self.actor.params,
            "critic": self.critic.params,
            "critic_target": self.critic_target.params,
            "log_alpha": self.log_alpha,
        }

    def optimizers(self) -> dict[str, AdamState]:
        return {"actor": self.actor_opt, "critic": self.critic_opt, "log_alpha": self.alpha_opt}
