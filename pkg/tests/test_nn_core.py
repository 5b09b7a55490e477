import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tmiaudit.datasets import Dataset
from tmiaudit.errors import (
    CheckpointError,
    ConfigError,
    EmptyDataError,
    InputShapeError,
    LabelError,
    NumericInputError,
    ScheduleError,
)
from tmiaudit.nn_core import (
    Model,
    TrainConfig,
    accuracy,
    cosine_lr,
    cross_entropy,
    forward,
    init_model,
    load_model,
    loss_and_grads,
    model_to_dict,
    model_from_dict,
    models_equal,
    save_model,
    sgd_epoch,
    softmax,
    train,
)

from oracles import finite_difference_grads


def _ds(X, y):
    return Dataset(np.asarray(X, dtype=np.float64), np.asarray(y), np.arange(len(y)))


def mean_ce(model, X, y):
    p = softmax(forward(model, X))
    return float(-np.mean(np.log(p[np.arange(len(y)), y])))


def test_forward_identity_layer():
    m = Model([np.eye(2)], [np.zeros(2)])
    assert np.allclose(forward(m, [1.0, 2.0]), [1.0, 2.0])


def test_forward_constant_map():
    m = Model([np.zeros((2, 3))], [np.array([3.0, -1.0])])
    assert np.allclose(forward(m, [5.0, -2.0, 7.0]), [3.0, -1.0])


def test_forward_matches_hand_product():
    m = init_model([3, 4, 2], seed=0, dtype=np.float64)
    x = np.ones(3)
    W1, b1, W2, b2 = m.weights[0], m.biases[0], m.weights[1], m.biases[1]
    h = [max(0.0, sum(W1[r, c] * x[c] for c in range(3)) + b1[r]) for r in range(4)]
    expect = [sum(W2[r, c] * h[c] for c in range(4)) + b2[r] for r in range(2)]
    assert np.allclose(forward(m, x), expect, atol=1e-12)


def test_forward_rejects_bad_dim():
    with pytest.raises(InputShapeError):
        forward(init_model([3, 2], 0), np.ones(4))


def test_incompatible_layers_rejected():
    with pytest.raises(InputShapeError):
        Model([np.zeros((4, 3)), np.zeros((2, 5))], [np.zeros(4), np.zeros(2)])


def test_softmax_examples():
    assert np.allclose(softmax([0, 0, 0, 0]), 0.25)
    for c in (-50.0, 0.0, 3.7):
        assert np.allclose(softmax([c, c + math.log(3)]), [0.25, 0.75])


def test_softmax_extreme_logits_against_high_precision():
    p = softmax([1000.0, 0.0])
    mpmath.mp.dps = 50
    tail = mpmath.exp(-1000) / (1 + mpmath.exp(-1000))
    assert p[0] == pytest.approx(float(1 - tail), abs=1e-15)
    assert p[1] == pytest.approx(float(tail), rel=1e-12)


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericInputError):
        softmax([0.0, np.nan])
    with pytest.raises(NumericInputError):
        softmax([np.inf, 0.0])


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(z, c):
    p = softmax(z)
    assert abs(p.sum() - 1.0) < 1e-9
    assert np.allclose(p, softmax(np.asarray(z) + c), atol=1e-9)


def test_cross_entropy_examples():
    assert cross_entropy([0.25] * 4, 2) == pytest.approx(math.log(4))
    assert cross_entropy([0.7, 0.2, 0.1], 1) == pytest.approx(-math.log(0.2))
    assert cross_entropy([1.0, 0.0], 0) == 0.0
    with pytest.raises(LabelError):
        cross_entropy([0.5, 0.5], 2)


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6), st.integers(0, 5))
def test_cross_entropy_nonnegative(w, y):
    p = np.asarray(w) / np.sum(w)
    y = y % len(p)
    assert cross_entropy(p, y) >= 0.0


def test_cosine_lr_examples():
    assert cosine_lr(0.1, 0, 10) == 0.1
    assert cosine_lr(0.1, 5, 10) == pytest.approx(0.05)
    assert cosine_lr(0.1, 3, 4) == pytest.approx(0.1 * (1 + math.cos(3 * math.pi / 4)) / 2)
    assert cosine_lr(0.1, 3, 4) == pytest.approx(0.01464, abs=1e-5)
    with pytest.raises(ScheduleError):
        cosine_lr(0.1, 4, 4)


@pytest.mark.parametrize("seed", range(8))
def test_backprop_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    dims = [3, 5, 4, 3]
    m = init_model(dims, seed, dtype=np.float64)
    # nonzero biases keep every pre-activation off the ReLU kink
    m.biases = [rng.normal(0.0, 0.5, b.shape) for b in m.biases]
    X = rng.normal(size=(6, 3))
    y = rng.integers(0, 3, 6)
    _, grads = loss_and_grads(m, X, y, all_layers=True)
    fd = finite_difference_grads(m, X, y, mean_ce)
    for (gw, gb), (fw, fb) in zip(grads, fd):
        for a, b in ((gw, fw), (gb, fb)):
            assert np.linalg.norm(a - b) <= 1e-4 * max(np.linalg.norm(b), 1e-8)


def test_backprop_stops_at_lowest_trainable_layer():
    m = init_model([3, 4, 2], 0)
    m.freeze_flags = [True, False]
    _, grads = loss_and_grads(m, np.ones((2, 3)), [0, 1])
    assert grads[0] is None and grads[1] is not None


def test_all_frozen_is_identity():
    m = init_model([2, 4, 2], 1)
    m.freeze_flags = [True, True]
    data = _ds(np.random.default_rng(0).normal(size=(20, 2)), np.arange(20) % 2)
    out = sgd_epoch(m, data, TrainConfig(epochs=3, batch_size=5), 0)
    assert models_equal(out, m)


def test_frozen_layer_bit_identical_after_training():
    m = init_model([2, 4, 2], 1)
    m.freeze_flags = [True, False]
    data = _ds(np.random.default_rng(0).normal(size=(20, 2)), np.arange(20) % 2)
    out = train(m, data, TrainConfig(epochs=5, batch_size=5))
    assert np.array_equal(out.weights[0], m.weights[0]) and np.array_equal(out.biases[0], m.biases[0])
    assert not np.array_equal(out.weights[1], m.weights[1])


def test_softmax_regression_separates_two_clusters():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-3, 0.5, (50, 2)), rng.normal(3, 0.5, (50, 2))])
    y = np.repeat([0, 1], 50)
    m = train(init_model([2, 2], 0), _ds(X, y), TrainConfig(epochs=50, batch_size=10))
    assert accuracy(m, X, y) == 1.0


def test_training_is_deterministic():
    rng = np.random.default_rng(2)
    data = _ds(rng.normal(size=(40, 3)), rng.integers(0, 3, 40))
    cfg = TrainConfig(epochs=4, batch_size=8, seed=9)
    a = train(init_model([3, 6, 3], 4), data, cfg)
    b = train(init_model([3, 6, 3], 4), data, cfg)
    assert models_equal(a, b)


def test_weight_decay_is_added_to_gradient():
    m = Model([np.array([[2.0, -1.0]])], [np.array([0.5])])
    data = _ds([[0.0, 0.0]], [0])
    cfg = TrainConfig(epochs=1, batch_size=1, learning_rate=0.1, weight_decay=0.5, lr_schedule="constant")
    out = sgd_epoch(m, data, cfg, 0)
    # single class: softmax is 1, so the loss gradient is zero and only decay acts
    assert np.allclose(out.weights[0], m.weights[0] * (1 - 0.1 * 0.5))
    assert np.allclose(out.biases[0], m.biases[0] * (1 - 0.1 * 0.5))


def test_empty_and_oversized_batches_rejected():
    m = init_model([2, 2], 0)
    with pytest.raises(EmptyDataError):
        sgd_epoch(m, _ds(np.zeros((0, 2)), np.zeros(0, dtype=int)), TrainConfig(batch_size=1), 0)
    with pytest.raises(ConfigError):
        sgd_epoch(m, _ds(np.zeros((3, 2)), [0, 1, 0]), TrainConfig(batch_size=5), 0)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_schedule="step")


def test_checkpoint_round_trip(tmp_path):
    m = init_model([4, 3, 2], 5)
    m.freeze_flags = [True, False]
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert models_equal(m, back) and back.freeze_flags == [True, False]


def test_checkpoint_validation():
    doc = model_to_dict(init_model([4, 3, 2], 5))
    with pytest.raises(CheckpointError):
        model_from_dict(dict(doc, schema_version=99))
    with pytest.raises(CheckpointError):
        model_from_dict(dict(doc, layer_dims=[4, 5, 2]))
