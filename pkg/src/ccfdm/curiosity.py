"""Curiosity bonus from forward-model prediction error.

The reward for a replayed transition is

    r_i = C * exp(-decay * t) * error * (re_max / ri_max)

where ``error`` is the squared distance between the predicted next latent and
the key latent, ``t`` is the global environment step at replay time and the two
maxima are running maxima of |extrinsic reward| and raw error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RI_MAX_FLOOR = 1e-8


@dataclass
class CuriosityState:
    weight: float = 0.2
    decay: float = 2e-5
    re_max: float = 0.0
    ri_max: float = 0.0
    t: int = 0

    def __post_init__(self):
        if self.weight < 0 or self.decay < 0:
            raise ValueError("intrinsic weight and decay must be non-negative")

    def as_dict(self) -> dict:
        return {"weight": self.weight, "decay": self.decay, "re_max": self.re_max, "ri_max": self.ri_max, "t": self.t}


def prediction_error(q_pred, k_pos) -> np.ndarray:
    """Squared Euclidean distance along the last axis (plain arrays, no tape)."""
    q = getattr(q_pred, "data", q_pred)
    k = getattr(k_pos, "data", k_pos)
    d = np.asarray(q, dtype=np.float64) - np.asarray(k, dtype=np.float64)
    return np.sum(d * d, axis=-1)


def update_maxima(state: CuriosityState, r_e, raw_error) -> None:
    r_e = np.abs(np.asarray(r_e, dtype=np.float64))
    raw_error = np.asarray(raw_error, dtype=np.float64)
    if r_e.size:
        state.re_max = max(state.re_max, float(r_e.max()))
    if raw_error.size:
        state.ri_max = max(state.ri_max, float(raw_error.max()))


def intrinsic_reward(error, state: CuriosityState, t: int | None = None):
    t = state.t if t is None else t
    error = np.asarray(error, dtype=np.float64)
    if state.ri_max < RI_MAX_FLOOR or state.re_max == 0.0:
        return np.zeros_like(error)
    return state.weight * np.exp(-state.decay * t) * error * (state.re_max / state.ri_max)


def half_life(decay: float) -> float:
    return float(np.log(2.0) / decay)
