import numpy as np
import pytest

from ccfdm import autodiff as ad
from ccfdm.autodiff import AdamState, Tensor, adam_step
from ccfdm.encoders import MLP, CCFDMNetworks, PixelEncoder, conv_output_size
from ccfdm.errors import ConfigurationError

import oracles

OBS = (9, 20, 20)


@pytest.fixture
def nets():
    rng = np.random.default_rng(0)
    return CCFDMNetworks(OBS, 2, latent_dim=50, action_feature_dim=50, hidden_dim=50, num_filters=8,
                         encoder_rng=rng, model_rng=np.random.default_rng(1))


def obs_batch(n=4, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (n, *OBS))


def test_encoder_architecture():
    enc = PixelEncoder((9, 68, 68), rng=np.random.default_rng(0))
    shapes = {k: t.shape for k, t in enc.params.items()}
    assert shapes["conv0.weight"] == (32, 9, 3, 3)
    assert all(shapes[f"conv{i}.weight"] == (32, 32, 3, 3) for i in (1, 2, 3))
    assert conv_output_size(68, 4) == 27
    assert shapes["proj.weight"] == (50, 27 * 27 * 32)
    assert shapes["ln.gain"] == (50,)


def test_query_latent_dimension_and_determinism(nets):
    o = obs_batch()
    q1, q2 = nets.encode_query(o), nets.encode_query(o)
    assert q1.shape == (4, 50)
    np.testing.assert_array_equal(q1.data, q2.data)
    assert nets.encode_query(o[0]).shape == (50,)


def test_zero_observation_gives_finite_latent(nets):
    assert np.all(np.isfinite(nets.encode_query(np.zeros(OBS)).data))


def test_wrong_observation_shape(nets):
    with pytest.raises(ConfigurationError):
        nets.encode_query(np.zeros((9, 22, 22)))


def test_key_equals_query_at_init(nets):
    o = obs_batch()
    np.testing.assert_array_equal(nets.encode_key(o).data, nets.encode_query(o).data)


def test_key_encoder_has_no_tape_and_no_gradient(nets):
    o = obs_batch()
    k = nets.encode_key(o)
    assert not k.requires_grad
    q = nets.encode_query(o)
    loss = ad.add(ad.tsum(ad.square(q)), ad.tsum(ad.mul(q, k)))
    ad.backward(loss)
    assert all(not t.grad.any() for _, t in nets.key_encoder.params.items())
    assert any(t.grad.any() for _, t in nets.query_encoder.params.items())


def test_key_unchanged_by_query_training_without_sync(nets):
    o = obs_batch()
    before = nets.encode_key(o).data.copy()
    opt = AdamState.for_params(nets.query_encoder.params)
    for _ in range(3):
        ad.backward(ad.tsum(ad.square(nets.encode_query(o))))
        adam_step(nets.query_encoder.params, opt)
    np.testing.assert_array_equal(nets.encode_key(o).data, before)
    assert not np.array_equal(nets.encode_query(o).data, before)


def test_momentum_sync_tau_one_matches_query(nets):
    o = obs_batch()
    opt = AdamState.for_params(nets.query_encoder.params)
    ad.backward(ad.tsum(ad.square(nets.encode_query(o))))
    adam_step(nets.query_encoder.params, opt)
    nets.momentum_sync(1.0)
    np.testing.assert_array_equal(nets.encode_key(o).data, nets.encode_query(o).data)
    assert nets.momentum_syncs == 1


def test_momentum_sync_geometric_convergence(nets):
    for t in nets.query_encoder.params._entries.values():
        t.data += 0.1
    gap0 = sum(np.sum((nets.key_encoder.params[k].data - t.data) ** 2) for k, t in nets.query_encoder.params.items())
    for _ in range(50):
        nets.momentum_sync(0.01)
    gap = sum(np.sum((nets.key_encoder.params[k].data - t.data) ** 2) for k, t in nets.query_encoder.params.items())
    assert np.sqrt(gap) == pytest.approx(0.99**50 * np.sqrt(gap0), rel=1e-9)


def test_action_embedding(nets):
    a = np.array([[0.3, -0.2]])
    e1, e2 = nets.embed_action(a), nets.embed_action(a)
    assert e1.shape == (1, 50)
    np.testing.assert_array_equal(e1.data, e2.data)
    with pytest.raises(ConfigurationError):
        nets.embed_action(np.zeros((1, 3)))


def test_fdm_shape_and_determinism(nets):
    q = nets.encode_query(obs_batch(3))
    p1 = nets.predict_next(q, np.zeros((3, 2)))
    p2 = nets.fdm_predict(q, nets.embed_action(np.zeros((3, 2))))
    assert p1.shape == (3, 50)
    np.testing.assert_array_equal(p1.data, p2.data)


def test_action_embedding_receives_gradient(nets):
    from ccfdm.contrastive import SimilarityKind, info_nce_loss

    o = obs_batch(6)
    q = nets.encode_query(o)
    loss = info_nce_loss(nets.predict_next(q, np.random.default_rng(2).uniform(-1, 1, (6, 2))),
                         nets.encode_key(obs_batch(6, 1)), SimilarityKind("bilinear", 50))
    ad.backward(loss)
    assert any(t.grad.any() for _, t in nets.action_embedding.params.items())
    assert any(t.grad.any() for _, t in nets.fdm.params.items())


def test_fdm_overfits_one_batch():
    initial, final = oracles.fdm_overfit(steps=500)
    assert initial / final >= 10.0


def test_mlp_input_check():
    with pytest.raises(ConfigurationError):
        MLP([3, 4, 1], np.random.default_rng(0))(np.zeros((2, 5)))


def test_encoder_float32_forward():
    enc = PixelEncoder(OBS, latent_dim=8, num_filters=4, rng=np.random.default_rng(0), dtype=np.float32)
    z = enc(obs_batch(2))
    assert z.dtype == np.float32 and z.shape == (2, 8)
