import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddlab import nn
from ddlab.datagen import gen_gaussian_pair, random_direction
from oracles import finite_difference_grad


def random_problem(seed, max_width=6, max_depth=3):
    rng = np.random.default_rng(seed)
    dims = [int(rng.integers(1, 5))] + [int(rng.integers(1, max_width)) for _ in range(int(rng.integers(0, max_depth)))] + [1]
    model = nn.init_mlp(dims, seed)
    # nonzero biases so the check also covers them
    model = model.with_params([p + rng.normal(0, 0.3, p.shape) for p in model.params])
    X = rng.normal(size=(int(rng.integers(1, 8)), dims[0]))
    y = rng.integers(0, 2, X.shape[0]).astype(float)
    return model, X, y


def test_parameter_counts():
    # a 380-input MLP with hidden layers 512 and 1024
    assert nn.param_count([380, 512, 1024, 1]) == 721_409
    assert nn.param_count([20, 512, 1024, 1]) == 20 * 512 + 512 + 512 * 1024 + 1024 + 1024 + 1
    assert nn.init_mlp([2, 4, 1], 0).n_params == 17
    assert nn.init_mlp([20, 64, 128, 1], 0).n_params == 20 * 64 + 64 + 64 * 128 + 128 + 128 + 1


def test_init_is_deterministic_and_glorot_bounded():
    a, b = nn.init_mlp([5, 7, 1], 3), nn.init_mlp([5, 7, 1], 3)
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p, q)
    assert np.abs(a.weights[0]).max() <= math.sqrt(6 / 12)
    assert not np.any(a.biases[0])


@pytest.mark.parametrize("dims", [[], [3], [3, 0, 1], [3, 2]])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(ValueError):
        nn.init_mlp(dims, 0)


def test_zero_network_outputs_half():
    m = nn.init_mlp([3, 4, 1], 0)
    m = m.with_params([np.zeros_like(p) for p in m.params])
    assert nn.forward(m, [1.0, -2.0, 3.0]) == 0.5
    single = nn.MLPModel((1, 1), (np.ones((1, 1)),), (np.zeros(1),))
    assert nn.forward(single, [0.0]) == 0.5


def test_hand_built_two_layer_net():
    W1 = np.array([[1.0, -1.0], [0.5, 2.0]])
    b1 = np.array([0.1, -0.2])
    W2 = np.array([[1.5], [-0.5]])
    b2 = np.array([0.3])
    m = nn.MLPModel((2, 2, 1), (W1, W2), (b1, b2))
    x = np.array([1.0, 2.0])
    # hidden pre-activations: [1 + 1 + 0.1, -1 + 4 - 0.2] = [2.1, 2.8]; both positive
    z = 1.5 * 2.1 - 0.5 * 2.8 + 0.3
    assert nn.forward(m, x) == pytest.approx(1 / (1 + math.exp(-z)), abs=1e-12)


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        nn.forward(nn.init_mlp([3, 1], 0), [1.0, 2.0])


def test_bce_values():
    assert nn.bce(0.5, 1) == pytest.approx(math.log(2), abs=1e-12)
    assert nn.bce(1.0, 1) == pytest.approx(0.0, abs=1e-11)
    assert nn.bce(0.9, 0) == pytest.approx(-math.log(0.1), abs=1e-12)
    assert math.isfinite(nn.bce(0.0, 1))


def test_sigmoid_extremes_are_finite():
    out = nn.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(out)) and out[1] == 0.5


def test_symmetric_batch_has_zero_output_bias_gradient():
    m = nn.init_mlp([3, 5, 1], 1)
    m = m.with_params([np.zeros_like(p) for p in m.params])
    x = np.array([0.3, -1.2, 2.0])
    g = nn.grad(m, np.stack([x, -x]), np.array([1.0, 0.0]))
    assert g[-1][0] == 0.0


def test_single_linear_layer_gradient():
    w = np.array([[0.4], [-0.7]])
    m = nn.MLPModel((2, 1), (w,), (np.array([0.1]),))
    x, y = np.array([1.5, -2.0]), 1.0
    p = 1 / (1 + math.exp(-(x @ w[:, 0] + 0.1)))
    gW, gb = nn.grad(m, x[None, :], [y])
    np.testing.assert_allclose(gW[:, 0], (p - y) * x, rtol=0, atol=1e-10)
    assert gb[0] == pytest.approx(p - y, abs=1e-10)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 31))
def test_gradient_matches_finite_differences(seed):
    model, X, y = random_problem(seed)
    params = [p.copy() for p in model.params]
    loss = lambda ps: nn.mean_loss(model.with_params(ps), X, y)  # noqa: E731
    fd = finite_difference_grad(loss, params)
    for g, f in zip(nn.grad(model, X, y), fd):
        assert np.all(np.abs(g - f) <= 1e-4 * np.maximum(np.abs(g), np.abs(f)) + 1e-8)


def test_grad_rejects_bad_batches():
    m = nn.init_mlp([2, 1], 0)
    with pytest.raises(ValueError):
        nn.grad(m, np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        nn.grad(m, np.zeros((2, 3)), [0, 1])


# --- optimizers -------------------------------------------------------------

def test_adam_single_step_hand_value():
    state = nn.AdamState.fresh([np.zeros(1)])
    state, (d,) = nn.adam_step(state, [np.ones(1)])
    assert d[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=0, abs=1e-12)
    assert abs(d[0] - -9.99999990e-4) < 1e-12
    assert state.t == 1


def test_adam_zero_gradient_gives_zero_step():
    _, (d,) = nn.adam_step(nn.AdamState.fresh([np.zeros(3)]), [np.zeros(3)])
    assert not np.any(d)


def test_adam_constant_gradient_step_tends_to_lr():
    state = nn.AdamState.fresh([np.zeros(1)])
    g = [np.full(1, 0.37)]
    for _ in range(10_000):
        state, (d,) = nn.adam_step(state, g)
    assert abs(abs(d[0]) - 1e-3) <= 0.01 * 1e-3


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=20))
def test_adam_bias_correction_exact_at_first_step(values):
    g = np.array(values)
    _, _, m_hat, v_hat = nn.adam_moments(nn.AdamState.fresh([g]), [g])
    assert np.array_equal(m_hat[0], g)
    assert np.array_equal(v_hat[0], g * g)


def test_adadelta_single_step_hand_value():
    state = nn.AdadeltaState.fresh([np.zeros(1)])
    state, (d,) = nn.adadelta_step(state, [np.ones(1)])
    expected = -math.sqrt(1e-6) / math.sqrt(0.05 + 1e-6)
    assert abs(d[0] - expected) < 1e-12
    assert d[0] == pytest.approx(-4.47209e-3, abs=1e-8)
    assert state.edx2[0][0] == pytest.approx(0.05 * expected ** 2, rel=1e-12)


def test_adadelta_zero_gradient():
    _, (d,) = nn.adadelta_step(nn.AdadeltaState.fresh([np.zeros(2)]), [np.zeros(2)])
    assert not np.any(d)


@pytest.mark.parametrize("c", [10.0, 100.0])
def test_adadelta_first_step_is_scale_insensitive(c):
    g = np.array([0.3, -1.2, 2.5])
    fresh = nn.AdadeltaState.fresh([g], eps=1e-12)
    _, (d1,) = nn.adadelta_step(fresh, [g])
    _, (dc,) = nn.adadelta_step(fresh, [c * g])
    ratio = dc / d1
    assert np.all((ratio >= 0.99) & (ratio <= 1.01))


def test_adadelta_lr_multiplier():
    g = [np.array([0.5])]
    _, (d1,) = nn.adadelta_step(nn.AdadeltaState.fresh(g), g)
    _, (d2,) = nn.adadelta_step(nn.AdadeltaState.fresh(g, lr=0.01), g)
    assert d2[0] == pytest.approx(0.01 * d1[0], rel=1e-15)


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        nn.OptimizerConfig("rmsprop")
    with pytest.raises(ValueError):
        nn.OptimizerConfig("adam", lr=0)
    with pytest.raises(ValueError):
        nn.OptimizerConfig("sgd", hyper={"beta1": 0.5})


@settings(max_examples=100)
@given(st.integers(0, 2 ** 31))
def test_small_sgd_step_does_not_increase_loss(seed):
    model, X, y = random_problem(seed)
    before = nn.mean_loss(model, X, y)
    g = nn.grad(model, X, y)
    after = nn.mean_loss(model.with_params([p - 1e-4 * gi for p, gi in zip(model.params, g)]), X, y)
    assert after <= before + 1e-9


# --- training ---------------------------------------------------------------

def toy_sets(n=100, sep=6.0, seed=0):
    direction = random_direction(5, seed)
    return (gen_gaussian_pair(n, 5, sep, seed + 1, direction),
            gen_gaussian_pair(n, 5, sep, seed + 2, direction))


def test_zero_epochs_give_empty_history():
    tr, va = toy_sets()
    res = nn.train(nn.init_mlp([5, 8, 1], 0), tr, va, nn.OptimizerConfig("sgd", 0.1), 0)
    assert res.epochs.size == 0 and res.val_loss.size == 0


def test_eval_every_counts():
    tr, va = toy_sets()
    res = nn.train(nn.init_mlp([5, 8, 1], 0), tr, va, nn.OptimizerConfig("sgd", 0.1), 90, eval_every=30)
    np.testing.assert_array_equal(res.val_curve().times, [30, 60, 90])


def test_separable_toy_converges():
    tr, va = toy_sets(sep=8.0)
    res = nn.train(nn.init_mlp([5, 16, 1], 0), tr, va, nn.OptimizerConfig("sgd", 0.1), 200)
    assert res.train_loss[-1] < 0.05


@pytest.mark.parametrize("opt", [nn.OptimizerConfig("adam", 1e-2, batch_size=16),
                                 nn.OptimizerConfig("adadelta", 1.0)])
def test_training_is_deterministic(opt):
    tr, va = toy_sets()
    runs = [nn.train(nn.init_mlp([5, 8, 1], 4), tr, va, opt, 30, seed=9) for _ in range(2)]
    np.testing.assert_array_equal(runs[0].val_loss, runs[1].val_loss)
    np.testing.assert_array_equal(runs[0].train_loss, runs[1].train_loss)


def test_divergence_halts():
    tr, va = toy_sets(sep=8.0)
    # a huge SGD step blows the logits up; val loss then stays far above its start
    res = nn.train(nn.init_mlp([5, 32, 1], 0), tr, va, nn.OptimizerConfig("sgd", 1e4), 500,
                   halt_factor=10.0, halt_patience=5)
    assert res.halted
    assert res.epochs.size < 500


def test_train_rejects_empty_sets():
    tr, _ = toy_sets()
    with pytest.raises(ValueError):
        nn.train(nn.init_mlp([5, 1], 0), tr, (np.zeros((0, 5)), np.zeros(0)),
                 nn.OptimizerConfig(), 1)
