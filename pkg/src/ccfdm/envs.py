"""Pixel-rendered toy control tasks: pendulum swing-up (dense) and point-mass reacher (sparse).

Observations are uint8 stacks of the last ``frame_stack`` RGB frames,
shape ``(3 * frame_stack, size, size)``. Actions live in [-1, 1]^d; out-of-range
actions are clamped and counted in ``clamp_count``.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from .errors import ConfigurationError

DT = 0.05


def _pixel_grid(size: int, scale: float):
    """Pixel-centre coordinates, y pointing up; exactly antisymmetric about the image centre."""
    c = (np.arange(size) + 0.5 - size / 2.0) * scale
    return c[None, :], -c[:, None]


def _coverage(dist: np.ndarray, radius: float, px: float) -> np.ndarray:
    """Anti-aliased coverage of a shape whose boundary sits at ``radius`` (one-pixel ramp)."""
    return np.clip((radius - dist) / px + 0.5, 0.0, 1.0)


def _paint(img: np.ndarray, cov: np.ndarray, color) -> None:
    for ch in range(3):
        img[ch] += cov * (color[ch] - img[ch])


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


class PixelEnv:
    action_dim = 1
    name = "base"

    def __init__(self, image_size: int = 76, frame_stack: int = 3, action_repeat: int = 4, episode_length: int = 250):
        if image_size < 8 or frame_stack < 1 or action_repeat < 1 or episode_length < 1:
            raise ConfigurationError("invalid environment dimensions")
        self.image_size = image_size
        self.frame_stack = frame_stack
        self.action_repeat = action_repeat
        self.episode_length = episode_length
        self.steps = 0
        self.clamp_count = 0
        self._frames: deque = deque(maxlen=frame_stack)

    @property
    def obs_shape(self) -> tuple[int, int, int]:
        return (3 * self.frame_stack, self.image_size, self.image_size)

    def reset(self, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._reset_physics(rng)
        self.steps = 0
        frame = self.render()
        self._frames.clear()
        for _ in range(self.frame_stack):
            self._frames.append(frame)
        return self.observation()

    def observation(self) -> np.ndarray:
        return np.concatenate(list(self._frames), axis=0)

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != (self.action_dim,):
            raise ConfigurationError(f"{self.name} expects action dimension {self.action_dim}, got {action.shape}")
        if np.any(np.abs(action) > 1.0):
            self.clamp_count += 1
            action = np.clip(action, -1.0, 1.0)
        reward = self._advance(action)
        self.steps += 1
        self._frames.append(self.render())
        return self.observation(), reward, self.steps >= self.episode_length

    def get_state(self) -> dict:
        return {
            "physics": list(self._physics_state()),
            "steps": self.steps,
            "clamp_count": self.clamp_count,
            "frames": np.stack(list(self._frames)) if self._frames else None,
        }

    def set_state(self, state: dict) -> None:
        self._set_physics_state(state["physics"])
        self.steps = int(state["steps"])
        self.clamp_count = int(state["clamp_count"])
        self._frames.clear()
        if state.get("frames") is not None:
            for f in np.asarray(state["frames"]):
                self._frames.append(f.copy())

    # subclasses implement these
    def _reset_physics(self, rng) -> None:
        raise NotImplementedError

    def _advance(self, action: np.ndarray) -> float:
        raise NotImplementedError

    def _physics_state(self) -> tuple:
        raise NotImplementedError

    def _set_physics_state(self, values) -> None:
        raise NotImplementedError

    def render(self) -> np.ndarray:
        raise NotImplementedError


class PendulumEnv(PixelEnv):
    """Torque-limited pendulum; angle 0 is upright, pi hangs down.

    Each physics step of length DT is integrated with ``substeps`` semi-implicit
    Euler sub-steps. Reward per control step is the mean of (cos(theta) + 1) / 2
    over the repeated physics steps.
    """

    action_dim = 1
    name = "pendulum"
    mass = 1.0
    length = 1.0
    gravity = 10.0
    max_torque = 2.0
    max_speed = 8.0

    def __init__(self, damping: float = 0.1, substeps: int = 20, **kw):
        super().__init__(**kw)
        self.damping = damping
        self.substeps = substeps
        self.theta = math.pi
        self.omega = 0.0

    def _reset_physics(self, rng) -> None:
        self.theta = float(rng.uniform(-math.pi, math.pi))
        self.omega = 0.0

    def physics_step(self, torque: float) -> None:
        h = DT / self.substeps
        inertia = self.mass * self.length**2
        g_over_l = self.gravity / self.length
        th, om = self.theta, self.omega
        for _ in range(self.substeps):
            om += h * (g_over_l * math.sin(th) + torque / inertia - self.damping * om)
            om = min(max(om, -self.max_speed), self.max_speed)
            th += h * om
        self.theta = math.atan2(math.sin(th), math.cos(th)) if not -math.pi < th <= math.pi else th
        self.omega = om

    def _advance(self, action: np.ndarray) -> float:
        torque = float(action[0]) * self.max_torque
        total = 0.0
        for _ in range(self.action_repeat):
            self.physics_step(torque)
            total += 0.5 * (math.cos(self.theta) + 1.0)
        return total / self.action_repeat

    def energy(self) -> float:
        """Kinetic plus potential energy, potential measured from the pivot (upright = +mgl)."""
        return 0.5 * self.mass * (self.length * self.omega) ** 2 + self.mass * self.gravity * self.length * math.cos(
            self.theta
        )

    def _physics_state(self) -> tuple:
        return (self.theta, self.omega)

    def _set_physics_state(self, values) -> None:
        self.theta, self.omega = float(values[0]), float(values[1])

    def render(self) -> np.ndarray:
        return render_pendulum(self.theta, self.image_size)


class PointMassEnv(PixelEnv):
    """Force-controlled point mass in the unit box; reward 1 while within 0.05 of the goal."""

    action_dim = 2
    name = "pointmass"
    goal_radius = 0.05
    force = 1.5
    damping = 1.0

    def __init__(self, **kw):
        super().__init__(**kw)
        self.pos = np.array([0.5, 0.5])
        self.vel = np.zeros(2)
        self.goal = np.array([0.5, 0.5])

    def _reset_physics(self, rng) -> None:
        self.pos = rng.uniform(0.1, 0.9, size=2)
        self.vel = np.zeros(2)
        self.goal = rng.uniform(0.1, 0.9, size=2)

    def physics_step(self, action: np.ndarray) -> None:
        self.vel = self.vel + DT * (self.force * action - self.damping * self.vel)
        pos = self.pos + DT * self.vel
        hit = (pos < 0.0) | (pos > 1.0)
        self.pos = np.clip(pos, 0.0, 1.0)
        self.vel = np.where(hit, 0.0, self.vel)

    def distance_to_goal(self) -> float:
        return float(np.hypot(*(self.pos - self.goal)))

    def _advance(self, action: np.ndarray) -> float:
        for _ in range(self.action_repeat):
            self.physics_step(action)
        return 1.0 if self.distance_to_goal() < self.goal_radius else 0.0

    def _physics_state(self) -> tuple:
        return (*self.pos, *self.vel, *self.goal)

    def _set_physics_state(self, values) -> None:
        v = np.asarray(values, dtype=np.float64)
        self.pos, self.vel, self.goal = v[0:2].copy(), v[2:4].copy(), v[4:6].copy()

    def render(self) -> np.ndarray:
        return render_pointmass(self.pos, self.goal, self.image_size)


PENDULUM_BG = (235.0, 235.0, 235.0)
ROD_COLOR = (40.0, 70.0, 160.0)
TIP_COLOR = (210.0, 50.0, 40.0)
PIVOT_COLOR = (20.0, 20.0, 20.0)


def render_pendulum(theta: float, size: int = 76) -> np.ndarray:
    extent = 1.25
    scale = 2.0 * extent / size
    x, y = _pixel_grid(size, scale)
    tx, ty = math.sin(theta), math.cos(theta)
    # distance to the rod segment from the pivot (origin) to the tip
    t = np.clip(x * tx + y * ty, 0.0, 1.0)
    rod = np.hypot(x - t * tx, y - t * ty)
    tip = np.hypot(x - tx, y - ty)
    pivot = np.hypot(x, y)
    img = np.empty((3, size, size))
    for ch in range(3):
        img[ch] = PENDULUM_BG[ch]
    _paint(img, _coverage(rod, 0.05, scale), ROD_COLOR)
    _paint(img, _coverage(tip, 0.16, scale), TIP_COLOR)
    _paint(img, _coverage(pivot, 0.06, scale), PIVOT_COLOR)
    return _to_uint8(img)


POINTMASS_BG = (30.0, 40.0, 55.0)
AGENT_COLOR = (250.0, 170.0, 40.0)
GOAL_COLOR = (60.0, 210.0, 90.0)


def render_pointmass(pos, goal, size: int = 76) -> np.ndarray:
    margin = 0.06
    scale = (1.0 + 2 * margin) / size
    x, y = _pixel_grid(size, scale)
    x = x + 0.5
    y = y + 0.5
    img = np.empty((3, size, size))
    for ch in range(3):
        img[ch] = POINTMASS_BG[ch]
    ring = np.abs(np.hypot(x - goal[0], y - goal[1]) - 0.05)
    _paint(img, _coverage(ring, 0.012, scale), GOAL_COLOR)
    _paint(img, _coverage(np.hypot(x - pos[0], y - pos[1]), 0.045, scale), AGENT_COLOR)
    return _to_uint8(img)


ENVS = {"pendulum": PendulumEnv, "pointmass": PointMassEnv}


def make_env(name: str, **kw) -> PixelEnv:
    try:
        cls = ENVS[name]
    except KeyError:
        raise ConfigurationError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None
    return cls(**kw)
