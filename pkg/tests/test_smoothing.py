from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddlab.curve import LearningCurve
from ddlab.smoothing import SGConfig, sg_weights, smooth, smooth_values
from oracles import exact_center_weights


def lsq_oracle(y, window, order):
    """Fit each window independently with lstsq on integer offsets."""
    n, half = len(y), window // 2
    out = np.empty(n)
    offs = np.arange(window) - half
    A = np.vander(offs.astype(float), order + 1, increasing=True)
    for i in range(n):
        start = min(max(i - half, 0), n - window)
        coef, *_ = np.linalg.lstsq(A, y[start:start + window], rcond=None)
        pos = i - (start + half)
        out[i] = np.polyval(coef[::-1], pos)
    return out


def test_window5_order2_weights():
    expected = [float(f) for f in exact_center_weights(5, 2)]
    assert exact_center_weights(5, 2) == [Fraction(v, 35) for v in (-3, 12, 17, 12, -3)]
    np.testing.assert_allclose(sg_weights(5, 2), expected, rtol=0, atol=1e-12)


def test_moving_average_and_interpolating_cases():
    np.testing.assert_allclose(sg_weights(3, 0), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(sg_weights(3, 2), [0, 1, 0], atol=1e-14)


@pytest.mark.parametrize("window,order", [(7, 3), (11, 3), (21, 4), (9, 0)])
def test_weights_match_rational_oracle(window, order):
    expected = [float(f) for f in exact_center_weights(window, order)]
    np.testing.assert_allclose(sg_weights(window, order), expected, atol=1e-13)


@given(st.integers(1, 15).map(lambda h: 2 * h + 1), st.data())
def test_weights_sum_to_one(window, data):
    order = data.draw(st.integers(0, window - 1))
    assert abs(sg_weights(window, order).sum() - 1) < 1e-10


def test_order_must_be_below_window():
    with pytest.raises(ValueError):
        sg_weights(5, 5)
    with pytest.raises(ValueError):
        SGConfig(4, 1)


def test_constant_curve_unchanged():
    c = LearningCurve(np.arange(30.0), np.full(30, 5.0))
    np.testing.assert_allclose(smooth(c, SGConfig(7, 2)).values, 5.0, rtol=1e-12)


def test_squares_unchanged_everywhere():
    t = np.arange(20.0)
    out = smooth(LearningCurve(t, t ** 2), SGConfig(5, 2))
    np.testing.assert_allclose(out.values, t ** 2, rtol=1e-12, atol=1e-10)


def test_white_noise_matches_local_lsq_oracle():
    y = np.random.default_rng(42).normal(0.0, 1.0, 101)
    out = smooth_values(y, SGConfig(11, 3))
    np.testing.assert_allclose(out, lsq_oracle(y, 11, 3), rtol=0, atol=1e-10)


def test_rejects_nonuniform_and_short_curves():
    with pytest.raises(ValueError):
        smooth(LearningCurve([0, 1, 3, 4, 5], [1, 2, 3, 4, 5]), SGConfig(3, 1))
    with pytest.raises(ValueError):
        smooth(LearningCurve(np.arange(5.0), np.zeros(5)), SGConfig(7, 2))


@given(st.integers(0, 2 ** 32 - 1))
def test_linearity(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 40))
    a, b = rng.normal(size=2)
    cfg = SGConfig(9, 3)
    lhs = smooth_values(a * x + b * y, cfg)
    rhs = a * smooth_values(x, cfg) + b * smooth_values(y, cfg)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * (1 + np.abs(rhs).max()))


@given(st.integers(0, 2 ** 32 - 1))
def test_variance_reduction(seed):
    y = np.random.default_rng(seed).normal(size=200)
    out = smooth_values(y, SGConfig(11, 3))
    assert out[5:-5].var() <= y.var()


@given(st.integers(0, 2 ** 32 - 1))
def test_polynomial_reproduction(seed):
    rng = np.random.default_rng(seed)
    order = int(rng.integers(0, 6))
    window = 2 * int(rng.integers(order // 2 + 1, 12)) + 1
    deg = int(rng.integers(0, order + 1))
    t = np.arange(window + int(rng.integers(0, 30)), dtype=float) * 0.5 + 3.0
    y = np.polyval(rng.normal(size=deg + 1), (t - t.mean()) / 10) + 2.0
    out = smooth(LearningCurve(t, y), SGConfig(window, order)).values
    np.testing.assert_allclose(out, y, rtol=1e-9, atol=0)
