"""Query/key pixel encoders, action embedding and the forward dynamics model."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor, no_grad
from .errors import ConfigurationError


class MLP:
    """Dense layers with ReLU between them and a linear output."""

    def __init__(self, sizes, rng, dtype=np.float64, params: ParameterSet | None = None):
        self.sizes = list(sizes)
        if params is None:
            params = ParameterSet(dtype)
            for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
                ad.init_dense(params, f"l{i}", n_in, n_out, rng)
        self.params = params

    @property
    def in_features(self) -> int:
        return self.sizes[0]

    def __call__(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.params.dtype))
        if x.shape[-1] != self.sizes[0]:
            raise ConfigurationError(f"MLP expects {self.sizes[0]} input features, got {x.shape[-1]}")
        n = len(self.sizes) - 1
        for i in range(n):
            x = ad.dense(x, self.params[f"l{i}.weight"], self.params[f"l{i}.bias"])
            if i < n - 1:
                x = ad.relu(x)
        return x

    def clone(self) -> "MLP":
        return MLP(self.sizes, None, params=self.params.copy())


def conv_output_size(size: int, num_layers: int) -> int:
    size = (size - 3) // 2 + 1
    return size - 2 * (num_layers - 1)


class PixelEncoder:
    """Conv stack (3x3 kernels, stride 2 then 1) -> dense projection -> layer norm.

    Takes observations shaped ``(C, H, W)`` or ``(N, C, H, W)`` with values in
    [0, 1] and returns latents of shape ``(latent_dim,)`` or ``(N, latent_dim)``.
    """

    def __init__(
        self,
        obs_shape,
        latent_dim: int = 50,
        num_filters: int = 32,
        num_layers: int = 4,
        rng=None,
        dtype=np.float64,
        params: ParameterSet | None = None,
    ):
        self.obs_shape = tuple(obs_shape)
        self.latent_dim = latent_dim
        self.num_filters = num_filters
        self.num_layers = num_layers
        c, h, w = self.obs_shape
        out = conv_output_size(min(h, w), num_layers)
        if out < 1:
            raise ConfigurationError(f"observation {h}x{w} too small for {num_layers} conv layers")
        self.flat_dim = conv_output_size(h, num_layers) * conv_output_size(w, num_layers) * num_filters
        if params is None:
            params = ParameterSet(dtype)
            for i in range(num_layers):
                ad.init_conv(params, f"conv{i}", c if i == 0 else num_filters, num_filters, 3, rng)
            ad.init_dense(params, "proj", self.flat_dim, latent_dim, rng)
            params.add("ln.gain", np.ones(latent_dim))
            params.add("ln.bias", np.zeros(latent_dim))
        self.params = params

    def __call__(self, obs) -> Tensor:
        obs = np.asarray(obs)
        single = obs.ndim == 3
        if single:
            obs = obs[None]
        if obs.ndim != 4 or obs.shape[1:] != self.obs_shape:
            raise ConfigurationError(f"encoder expects observations of shape {self.obs_shape}, got {obs.shape[1:]}")
        p = self.params
        x = Tensor(np.ascontiguousarray(obs.transpose(0, 2, 3, 1), dtype=p.dtype))
        for i in range(self.num_layers):
            x = ad.relu(ad.conv2d(x, p[f"conv{i}.weight"], p[f"conv{i}.bias"], stride=2 if i == 0 else 1))
        x = ad.reshape(x, (x.shape[0], -1))
        x = ad.dense(x, p["proj.weight"], p["proj.bias"])
        x = ad.layer_norm(x, p["ln.gain"], p["ln.bias"])
        return ad.reshape(x, (self.latent_dim,)) if single else x

    def clone(self) -> "PixelEncoder":
        return PixelEncoder(
            self.obs_shape, self.latent_dim, self.num_filters, self.num_layers, params=self.params.copy()
        )


class CCFDMNetworks:
    """Query encoder, key encoder (momentum copy), action embedding and FDM."""

    def __init__(
        self,
        obs_shape,
        action_dim: int,
        latent_dim: int = 50,
        action_feature_dim: int = 50,
        hidden_dim: int = 50,
        num_filters: int = 32,
        encoder_rng=None,
        model_rng=None,
        dtype=np.float64,
    ):
        self.action_dim = action_dim
        self.query_encoder = PixelEncoder(obs_shape, latent_dim, num_filters, rng=encoder_rng, dtype=dtype)
        self.key_encoder = self.query_encoder.clone()
        self.action_embedding = MLP([action_dim, hidden_dim, hidden_dim, action_feature_dim], model_rng, dtype)
        self.fdm = MLP([latent_dim + action_feature_dim, hidden_dim, hidden_dim, latent_dim], model_rng, dtype)
        self.momentum_syncs = 0

    def encode_query(self, obs) -> Tensor:
        return self.query_encoder(obs)

    def encode_key(self, obs) -> Tensor:
        with no_grad():
            return self.key_encoder(obs)

    def embed_action(self, action) -> Tensor:
        action = np.asarray(action)
        if action.shape[-1] != self.action_dim:
            raise ConfigurationError(f"action has dimension {action.shape[-1]}, expected {self.action_dim}")
        return self.action_embedding(action)

    def fdm_predict(self, q: Tensor, a_e: Tensor) -> Tensor:
        return self.fdm(ad.concat([q, a_e], axis=-1))

    def predict_next(self, q: Tensor, action) -> Tensor:
        return self.fdm_predict(q, self.embed_action(action))

    def momentum_sync(self, tau: float) -> None:
        ad.ema_blend(self.key_encoder.params, self.query_encoder.params, tau)
        self.momentum_syncs += 1
