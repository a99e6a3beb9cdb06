import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccfdm.errors import ConfigurationError, NotReadyError
from ccfdm.replay import ReplayBuffer, Transition, center_crop, crop_offsets, random_crop, random_crop_batch

SHAPE = (3, 6, 6)


def transition(i, shape=SHAPE):
    o = np.full(shape, i % 256, dtype=np.uint8)
    return Transition(o, np.array([i / 10.0], dtype=np.float32), float(i), o + 1, False)


def test_push_then_sample_one():
    buf = ReplayBuffer(SHAPE, 1, capacity=4)
    buf.push(transition(7))
    b = buf.sample(1, np.random.default_rng(0))
    assert b.rewards[0] == 7.0 and b.obs[0, 0, 0, 0] == 7


def test_fifo_eviction_and_saturation():
    buf = ReplayBuffer(SHAPE, 1, capacity=2)
    for i in range(3):
        buf.push(transition(i))
    assert len(buf) == 2
    assert sorted(buf.rewards.tolist()) == [1.0, 2.0]


def test_not_ready_and_empty_batch():
    buf = ReplayBuffer(SHAPE, 1, capacity=4)
    buf.push(transition(0))
    with pytest.raises(NotReadyError):
        buf.sample(2, np.random.default_rng(0))
    assert len(buf.sample(0, np.random.default_rng(0))) == 0


def test_shape_checks():
    buf = ReplayBuffer(SHAPE, 1, capacity=4)
    with pytest.raises(ConfigurationError):
        buf.add(np.zeros((3, 5, 6), np.uint8), [0.0], 0.0, np.zeros(SHAPE, np.uint8), False)
    with pytest.raises(ConfigurationError):
        buf.add(np.zeros(SHAPE, np.uint8), [0.0, 1.0], 0.0, np.zeros(SHAPE, np.uint8), False)


def test_sampling_deterministic():
    buf = ReplayBuffer(SHAPE, 1, capacity=20)
    for i in range(20):
        buf.push(transition(i))
    a = buf.sample_indices(20, np.random.default_rng(5))
    b = buf.sample_indices(20, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_sampling_uniform_within_5_sigma():
    buf = ReplayBuffer(SHAPE, 1, capacity=10)
    for i in range(10):
        buf.push(transition(i))
    n = 100_000
    rng = np.random.default_rng(0)
    draws = np.concatenate([buf.sample_indices(10, rng) for _ in range(n // 10)])
    counts = np.bincount(draws, minlength=10)
    sigma = np.sqrt(n * 0.1 * 0.9)
    assert np.all(np.abs(counts - n / 10) < 5 * sigma)
    chi2 = float(np.sum((counts - n / 10) ** 2 / (n / 10)))
    assert chi2 < 27.88  # 99.9th percentile, 9 degrees of freedom


def test_state_round_trip_with_growth():
    small = ReplayBuffer(SHAPE, 1, capacity=3)
    for i in range(3):
        small.push(transition(i))
    big = ReplayBuffer(SHAPE, 1, capacity=6)
    big.load_state(small.state_arrays(), small.cursor, small.count)
    big.push(transition(3))
    assert big.rewards[:4].tolist() == [0.0, 1.0, 2.0, 3.0]


def test_identity_crop():
    x = np.random.default_rng(0).integers(0, 256, SHAPE, dtype=np.uint8)
    np.testing.assert_array_equal(random_crop(x, 6, np.random.default_rng(0)), x / np.float32(255))


def test_crop_too_large():
    with pytest.raises(ConfigurationError):
        random_crop(np.zeros(SHAPE, np.uint8), 7, np.random.default_rng(0))


def test_offsets_uniform_76_to_68():
    tops, lefts = crop_offsets((9, 76, 76), 68, np.random.default_rng(0), 81_000)
    counts = np.bincount(tops * 9 + lefts, minlength=81)
    assert counts.size == 81 and tops.min() == 0 and tops.max() == 8
    sigma = np.sqrt(1000 * (1 - 1 / 81))
    assert np.all(np.abs(counts - 1000) < 5 * sigma)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16), st.integers(1, 6), st.integers(1, 6))
def test_crop_is_exact_shared_subwindow(seed, oh, ow):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 256, (9, 6, 6), dtype=np.uint8)
    out = random_crop(x, (oh, ow), np.random.default_rng(seed))
    top, left = crop_offsets(x.shape, (oh, ow), np.random.default_rng(seed))
    np.testing.assert_array_equal(np.rint(out * 255).astype(np.uint8), x[:, top : top + oh, left : left + ow])


def test_batch_crop_independent_per_item():
    x = np.random.default_rng(0).integers(0, 256, (64, 3, 10, 10), dtype=np.uint8)
    out = random_crop_batch(x, 6, np.random.default_rng(1))
    tops, lefts = crop_offsets(x.shape, 6, np.random.default_rng(1), 64)
    for i in range(64):
        np.testing.assert_array_equal(out[i], x[i, :, tops[i] : tops[i] + 6, lefts[i] : lefts[i] + 6] / np.float32(255))
    assert len(set(zip(tops.tolist(), lefts.tolist()))) > 1


def test_same_seed_same_crop_and_independent_streams():
    x = np.random.default_rng(0).integers(0, 256, (32, 3, 10, 10), dtype=np.uint8)
    a = random_crop_batch(x, 6, np.random.default_rng(3))
    np.testing.assert_array_equal(a, random_crop_batch(x, 6, np.random.default_rng(3)))
    assert not np.array_equal(a, random_crop_batch(x, 6, np.random.default_rng(4)))


def test_center_crop():
    x = np.arange(100, dtype=np.uint8).reshape(1, 10, 10)
    np.testing.assert_array_equal(center_crop(x, 6) * 255, x[:, 2:8, 2:8].astype(np.float32))
