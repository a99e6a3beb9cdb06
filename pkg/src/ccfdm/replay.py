"""Ring-buffer replay storage and random-crop augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, NotReadyError


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


class ReplayBuffer:
    """Fixed-capacity FIFO store of uint8 observation stacks."""

    def __init__(self, obs_shape, action_dim: int, capacity: int = 100_000):
        if capacity < 1:
            raise ConfigurationError("replay capacity must be positive")
        self.obs_shape = tuple(obs_shape)
        self.action_dim = action_dim
        self.capacity = capacity
        self.obs = np.zeros((capacity, *self.obs_shape), dtype=np.uint8)
        self.next_obs = np.zeros((capacity, *self.obs_shape), dtype=np.uint8)
        self.actions = np.zeros((capacity, action_dim), dtype=np.float32)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=np.float32)
        self.cursor = 0
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def push(self, t: Transition) -> None:
        self.add(t.obs, t.action, t.reward, t.next_obs, t.done)

    def add(self, obs, action, reward, next_obs, done) -> None:
        obs = np.asarray(obs)
        next_obs = np.asarray(next_obs)
        action = np.asarray(action, dtype=np.float32).reshape(-1)
        if obs.shape != self.obs_shape or next_obs.shape != self.obs_shape:
            raise ConfigurationError(f"observation shape {obs.shape} does not match buffer {self.obs_shape}")
        if action.shape != (self.action_dim,):
            raise ConfigurationError(f"action shape {action.shape} does not match buffer ({self.action_dim},)")
        i = self.cursor
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.dones[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng) -> np.ndarray:
        if batch_size > self.count:
            raise NotReadyError(f"requested {batch_size} transitions, buffer holds {self.count}")
        if batch_size == 0:
            return np.zeros(0, dtype=np.int64)
        return rng.integers(0, self.count, size=batch_size)

    def sample(self, batch_size: int, rng) -> Batch:
        """Uniform draw with replacement from the stored transitions."""
        idx = self.sample_indices(batch_size, rng)
        return Batch(
            obs=self.obs[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_obs=self.next_obs[idx],
            dones=self.dones[idx],
            indices=idx,
        )

    def transition(self, i: int) -> Transition:
        return Transition(self.obs[i], self.actions[i], float(self.rewards[i]), self.next_obs[i], bool(self.dones[i]))

    def state_arrays(self) -> dict[str, np.ndarray]:
        n = self.count
        return {
            "obs": self.obs[:n],
            "next_obs": self.next_obs[:n],
            "actions": self.actions[:n],
            "rewards": self.rewards[:n],
            "dones": self.dones[:n],
        }

    def load_state(self, arrays: dict[str, np.ndarray], cursor: int, count: int) -> None:
        if count > self.capacity:
            raise ConfigurationError("stored replay larger than buffer capacity")
        # a smaller, wrapped buffer is unrolled into chronological order so a grown buffer keeps appending
        unroll = count < self.capacity and cursor != count
        for name in ("obs", "next_obs", "actions", "rewards", "dones"):
            stored = arrays[name]
            getattr(self, name)[:count] = np.roll(stored, -cursor, axis=0) if unroll else stored
        self.cursor = count if unroll else cursor
        self.count = count


def _check_crop(shape, out_hw) -> tuple[int, int]:
    h, w = shape[-2:]
    oh, ow = (out_hw, out_hw) if np.isscalar(out_hw) else out_hw
    if oh > h or ow > w or oh < 1 or ow < 1:
        raise ConfigurationError(f"crop {oh}x{ow} does not fit inside {h}x{w}")
    return int(oh), int(ow)


def crop_offsets(shape, out_hw, rng, n=None):
    """Uniform (top, left) offsets over the valid range."""
    oh, ow = _check_crop(shape, out_hw)
    h, w = shape[-2:]
    tops = rng.integers(0, h - oh + 1, size=n)
    lefts = rng.integers(0, w - ow + 1, size=n)
    return tops, lefts


def random_crop(stack: np.ndarray, out_hw, rng, dtype=np.float32) -> np.ndarray:
    """Crop one (C, H, W) stack at a single random offset shared by every frame; scale to [0, 1]."""
    stack = np.asarray(stack)
    oh, ow = _check_crop(stack.shape, out_hw)
    top, left = crop_offsets(stack.shape, (oh, ow), rng)
    return stack[:, top : top + oh, left : left + ow].astype(dtype) / dtype(255.0)


def random_crop_batch(stacks: np.ndarray, out_hw, rng, dtype=np.float32) -> np.ndarray:
    """Independent random crop for every stack of an (N, C, H, W) batch."""
    stacks = np.asarray(stacks)
    oh, ow = _check_crop(stacks.shape, out_hw)
    n = stacks.shape[0]
    tops, lefts = crop_offsets(stacks.shape, (oh, ow), rng, n)
    windows = sliding_window_view(stacks, (oh, ow), axis=(2, 3))
    crops = windows[np.arange(n), :, tops, lefts]
    return crops.astype(dtype) / dtype(255.0)


def center_crop(stacks: np.ndarray, out_hw, dtype=np.float32) -> np.ndarray:
    """Deterministic central crop, used for acting, evaluation and the no-augmentation ablation."""
    stacks = np.asarray(stacks)
    oh, ow = _check_crop(stacks.shape, out_hw)
    h, w = stacks.shape[-2:]
    top, left = (h - oh) // 2, (w - ow) // 2
    return stacks[..., top : top + oh, left : left + ow].astype(dtype) / dtype(255.0)
