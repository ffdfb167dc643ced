import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contrastive_gap.encoders import (TinyEncoder, backward, cone_stats, default_dims, encoder_init,
                                      forward, forward_cached, identical_pairs, linear_pairs,
                                      random_text_map)
from contrastive_gap.errors import ZeroVector
from oracles import central_difference, max_relative_error


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 20), st.integers(2, 16), st.integers(0, 10_000))
def test_outputs_unit_norm(batch, out_dim, seed):
    enc = encoder_init([5, 7, out_dim], seed)
    x = np.random.default_rng(seed).standard_normal((batch, 5)) * 10
    norms = np.linalg.norm(forward(enc, x).rows, axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)


@pytest.mark.parametrize("dims", [[4, 3], [6, 10, 10, 8], [5, 9, 2]])
def test_backward_matches_finite_differences(dims):
    rng = np.random.default_rng(len(dims))
    enc = encoder_init(dims, 3)
    x = rng.standard_normal((5, dims[0]))
    upstream = rng.standard_normal((5, dims[-1]))
    grads = backward(enc, x, upstream)
    for p, g in zip(enc.params(), grads):
        (num,) = central_difference(lambda: float(np.sum(forward_cached(enc, x).out * upstream)), [p])
        assert max_relative_error([g], [num]) < 1e-6


def test_backward_shape_check():
    enc = encoder_init([3, 4], 0)
    with pytest.raises(ValueError):
        backward(enc, np.ones((2, 3)), np.ones((2, 5)))


def test_input_shape_check():
    with pytest.raises(ValueError):
        forward(encoder_init([3, 4], 0), np.ones((2, 4)))


def test_zero_output_raises():
    enc = TinyEncoder([np.zeros((3, 2))], [np.zeros(3)])
    with pytest.raises(ZeroVector):
        forward(enc, np.ones((1, 2)))


def test_layer_shape_validation():
    with pytest.raises(ValueError):
        TinyEncoder([np.zeros((3, 2)), np.zeros((4, 5))], [np.zeros(3), np.zeros(4)])
    with pytest.raises(ValueError):
        TinyEncoder([np.zeros((1, 2))], [np.zeros(1)])


def test_fresh_encoders_form_a_cone():
    x = np.random.default_rng(0).standard_normal((256, 32))
    mean_cos, centroid_norm = cone_stats(forward(encoder_init(default_dims(64), 1), x))
    assert mean_cos > 0.5 and centroid_norm > 0.7


def test_twin_cones_point_apart():
    x = np.random.default_rng(0).standard_normal((256, 32))
    a = forward(encoder_init(default_dims(64), 1), x).rows.mean(axis=0)
    b = forward(encoder_init(default_dims(64), 2), x).rows.mean(axis=0)
    cos = a @ b / np.linalg.norm(a) / np.linalg.norm(b)
    assert cos < 0.5


def test_cone_stats_oracle():
    x = np.random.default_rng(4).standard_normal((7, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    pairs = [x[i] @ x[j] for i in range(7) for j in range(7) if i != j]
    mean_cos, cnorm = cone_stats(x)
    assert mean_cos == pytest.approx(np.mean(pairs), abs=1e-12)
    assert cnorm == pytest.approx(np.linalg.norm(x.mean(axis=0)), abs=1e-12)


def test_checkpoint_round_trip(tmp_path):
    enc = encoder_init(default_dims(16), 9)
    path = tmp_path / "enc.json"
    enc.save(path)
    back = TinyEncoder.load(path)
    assert back.dims == enc.dims and back.seed == 9
    for p, q in zip(enc.params(), back.params()):
        np.testing.assert_array_equal(p, q)


def test_checkpoint_dims_mismatch():
    obj = encoder_init([3, 4], 0).to_dict()
    obj["dims"] = [3, 5]
    with pytest.raises(ValueError):
        TinyEncoder.from_dict(obj)


def test_init_is_seeded():
    a, b = encoder_init([4, 5, 3], 7), encoder_init([4, 5, 3], 7)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)


def test_copy_is_independent():
    enc = encoder_init([4, 3], 0)
    c = enc.copy()
    c.weights[0][0, 0] += 1
    assert enc.weights[0][0, 0] != c.weights[0][0, 0]


def test_identical_pairs():
    data = identical_pairs(20, 0)
    np.testing.assert_array_equal(data.image_features, data.text_features)
    assert len(data) == 20


def test_linear_pairs_share_map():
    a = linear_pairs(50, 1, noise=0.0, map_seed=5)
    b = linear_pairs(50, 2, noise=0.0, map_seed=5)
    g = random_text_map(5)
    np.testing.assert_allclose(a.text_features, a.image_features @ g.T, atol=1e-12)
    np.testing.assert_allclose(b.text_features, b.image_features @ g.T, atol=1e-12)
    assert not np.allclose(a.image_features, b.image_features)
