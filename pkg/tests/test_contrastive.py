import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccfdm import autodiff as ad
from ccfdm.autodiff import Tensor
from ccfdm.contrastive import SimilarityKind, info_nce_from_logits, info_nce_loss, similarity
from ccfdm.errors import ConfigurationError, DivergenceError

import oracles


def test_dot_examples():
    kind = SimilarityKind("dot", 2)
    assert float(similarity([1.0, 0.0], [0.0, 1.0], kind).data) == 0.0
    assert float(similarity([1.0, 2.0], [3.0, 4.0], kind).data) == 11.0


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=3), st.lists(st.floats(-100, 100), min_size=3, max_size=3))
def test_identity_bilinear_equals_dot_and_dot_symmetric(q, k):
    dot, bil = SimilarityKind("dot", 3), SimilarityKind("bilinear", 3)
    a = float(similarity(q, k, dot).data)
    assert a == float(similarity(k, q, dot).data)
    assert float(similarity(q, k, bil).data) == pytest.approx(a, rel=1e-12, abs=1e-9)


def test_similarity_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        similarity([1.0, 2.0], [1.0, 2.0, 3.0], SimilarityKind("dot", 2))
    with pytest.raises(ConfigurationError):
        SimilarityKind("cosine", 2)


def test_hand_example_k2():
    loss = info_nce_from_logits(Tensor(np.array([[2.0, 0.0], [0.0, 2.0]])))
    assert float(loss.data) == pytest.approx(-math.log(math.e**2 / (math.e**2 + 1)), abs=1e-15)
    assert float(loss.data) == pytest.approx(0.1269, abs=5e-5)


@pytest.mark.parametrize("k", [2, 8, 128])
@pytest.mark.parametrize("c", [0.0, 3.5, -40.0])
def test_uniform_similarities_give_log_k(k, c):
    assert abs(float(info_nce_from_logits(Tensor(np.full((k, k), c))).data) - math.log(k)) <= 1e-9


def test_single_sample_loss_zero():
    kind = SimilarityKind("bilinear", 4)
    assert float(info_nce_loss(Tensor(np.ones((1, 4))), np.ones((1, 4)), kind).data) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**16))
def test_matches_math_reference(k, d, seed):
    rng = np.random.default_rng(seed)
    q, keys = rng.standard_normal((k, d)), rng.standard_normal((k, d))
    kind = SimilarityKind("bilinear", d)
    kind.params["W"].data[...] = rng.standard_normal((d, d))
    sims = (q @ kind.params["W"].data @ keys.T).tolist()
    assert float(info_nce_loss(Tensor(q), keys, kind).data) == pytest.approx(oracles.info_nce_reference(sims), rel=1e-10, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**16), st.floats(-50, 50))
def test_nonnegative_and_shift_invariant(k, seed, c):
    logits = np.random.default_rng(seed).standard_normal((k, k)) * 3
    base = float(info_nce_from_logits(Tensor(logits)).data)
    assert base >= 0.0
    shifted = logits.copy()
    shifted[0] += c
    assert float(info_nce_from_logits(Tensor(shifted)).data) == pytest.approx(base, rel=1e-9, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 6), st.integers(0, 2**16))
def test_negative_permutation_invariance(k, seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((k, k))
    perm = logits.copy()
    negatives = [j for j in range(k) if j != 0]
    perm[0, negatives] = logits[0, rng.permutation(negatives)]
    assert float(info_nce_from_logits(Tensor(perm)).data) == pytest.approx(float(info_nce_from_logits(Tensor(logits)).data), rel=1e-12)


def test_loss_decreases_with_positive_margin():
    vals = []
    for m in (0.0, 1.0, 2.0, 4.0):
        vals.append(float(info_nce_from_logits(Tensor(np.eye(3) * m)).data))
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_key_gradient_identically_zero():
    rng = np.random.default_rng(0)
    q = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    q.grad = np.zeros((5, 4))
    keys = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    keys.grad = np.zeros((5, 4))
    kind = SimilarityKind("bilinear", 4)
    ad.backward(info_nce_loss(q, keys, kind))
    assert not keys.grad.any()
    assert q.grad.any() and kind.params["W"].grad.any()


def test_non_finite_similarity_aborts():
    with pytest.raises(DivergenceError):
        info_nce_from_logits(Tensor(np.array([[np.nan, 0.0], [0.0, 1.0]])))


def test_batch_shape_checks():
    kind = SimilarityKind("dot", 3)
    with pytest.raises(ConfigurationError):
        info_nce_loss(Tensor(np.ones((2, 3))), np.ones((3, 3)), kind)
