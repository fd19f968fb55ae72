"""Tape correctness: every primitive against closed forms and central differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omrfit import autodiff as ad
from omrfit.errors import DimensionError, NumericsError


def _vec(name="x", n=5, seed=0):
    values = np.random.default_rng(seed).normal(size=n)
    return ad.ParamVector.concat([(name, values)])


def test_leaf_holds_float64():
    v = ad.Var([1, 2, 3])
    assert v.value.dtype == np.float64
    assert v.shape == (3,)
    assert v.size == 3


def test_non_finite_leaf_rejected():
    with pytest.raises(NumericsError):
        ad.Var([1.0, np.inf])


def test_operator_overloads_match_numpy():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=4), rng.normal(size=4) + 3.0
    va, vb = ad.Var(a), ad.Var(b)
    np.testing.assert_allclose((va + vb).value, a + b)
    np.testing.assert_allclose((va - vb).value, a - b)
    np.testing.assert_allclose((va * vb).value, a * b)
    np.testing.assert_allclose((va / vb).value, a / b)
    np.testing.assert_allclose((-va).value, -a)
    np.testing.assert_allclose((va**2).value, a**2)
    # reflected ops against plain arrays: ndarray defers because
    # Var.__array_ufunc__ is None
    np.testing.assert_allclose((a + vb).value, a + b)
    np.testing.assert_allclose((a * vb).value, a * b)
    np.testing.assert_allclose((a - vb).value, a - b)
    np.testing.assert_allclose((a / vb).value, a / b)


def test_backward_requires_scalar():
    v = ad.Var([1.0, 2.0])
    with pytest.raises(DimensionError):
        ad.backward(v)


def test_grad_of_sum_is_ones():
    params = _vec(n=7)
    val, grad = ad.value_and_grad(lambda s: ad.reduce_sum(s["x"]), params)
    np.testing.assert_allclose(grad, np.ones(7))
    assert val == pytest.approx(params.values.sum())


def test_untouched_segment_gets_zero_grad():
    params = ad.ParamVector.concat([("a", np.ones(3)), ("b", np.ones(2))])
    _, grad = ad.value_and_grad(lambda s: ad.reduce_sum(s["a"] * s["a"]), params)
    np.testing.assert_allclose(grad[:3], 2.0 * np.ones(3))
    np.testing.assert_allclose(grad[3:], 0.0)


def test_diamond_graph_accumulates():
    # y = x*x + x*x reuses the same node twice; grad must be 4x
    params = _vec(n=3, seed=2)
    def obj(s):
        sq = s["x"] * s["x"]
        return ad.reduce_sum(sq + sq)
    _, grad = ad.value_and_grad(obj, params)
    np.testing.assert_allclose(grad, 4.0 * params.values)


@pytest.mark.parametrize(
    "fn",
    [
        lambda x: ad.reduce_sum(ad.exp(x)),
        lambda x: ad.reduce_sum(ad.sin(x) * ad.cos(x)),
        lambda x: ad.reduce_sum(ad.sqrt(x * x + 1.0)),
        lambda x: ad.reduce_sum(ad.tanh(x)),
        lambda x: ad.reduce_sum(ad.sigmoid(x)),
        lambda x: ad.reduce_sum(ad.softplus(x)),
        lambda x: ad.reduce_mean(x * x * x),
        lambda x: ad.reduce_sum(x**3),
        lambda x: ad.reduce_sum(1.0 / (x + 4.0)),
    ],
)
def test_elementwise_grads_match_fd(fn):
    params = _vec(n=6, seed=3)
    report = ad.fd_check(lambda s: fn(s["x"]), params, tol=1e-6)
    assert report.max_rel_err < 1e-6, report


def test_matmul_grad():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(3, 4))
    params = ad.ParamVector.concat([("w", rng.normal(size=(4, 2)))])
    def obj(s):
        return ad.reduce_sum(ad.matmul(ad.Var(a), s["w"]) ** 2)
    report = ad.fd_check(obj, params, tol=1e-6)
    assert report.max_rel_err < 1e-6


def test_einsum_grad():
    rng = np.random.default_rng(5)
    m = rng.normal(size=(4, 3))
    params = ad.ParamVector.concat([("v", rng.normal(size=3))])
    def obj(s):
        out = ad.einsum("ms,s->m", ad.Var(m), s["v"])
        return ad.reduce_sum(out * out)
    report = ad.fd_check(obj, params, tol=1e-6)
    assert report.max_rel_err < 1e-6


def test_take_accumulates_repeated_indices():
    # gathering the same index twice must add both contributions
    params = _vec(n=4, seed=6)
    idx = np.array([0, 2, 2, 3])
    def obj(s):
        return ad.reduce_sum(ad.take(s["x"], idx))
    _, grad = ad.value_and_grad(obj, params)
    np.testing.assert_allclose(grad, [1.0, 0.0, 2.0, 1.0])


def test_reshape_concatenate_stack_grads():
    rng = np.random.default_rng(7)
    params = ad.ParamVector.concat([("a", rng.normal(size=6)), ("b", rng.normal(size=6))])
    def obj(s):
        a = ad.reshape(s["a"], (2, 3))
        b = ad.reshape(s["b"], (2, 3))
        cat = ad.concatenate([a, b], axis=0)
        stk = ad.stack([a, b], axis=0)
        return ad.reduce_sum(cat * cat) + ad.reduce_sum(stk) * 0.5
    report = ad.fd_check(obj, params, tol=1e-6)
    assert report.max_rel_err < 1e-6


def test_broadcast_add_grad_sums_over_broadcast_axes():
    params = ad.ParamVector.concat([("b", np.array([0.5, -0.5]))])
    a = np.ones((3, 2))
    def obj(s):
        return ad.reduce_sum(ad.add(ad.Var(a), s["b"]))
    _, grad = ad.value_and_grad(obj, params)
    np.testing.assert_allclose(grad, [3.0, 3.0])


def test_composite_fd_check_mixed_ops():
    rng = np.random.default_rng(8)
    params = ad.ParamVector.concat(
        [("x", rng.normal(size=5)), ("w", rng.normal(size=(5, 3)))]
    )
    def obj(s):
        h = ad.tanh(ad.matmul(ad.reshape(s["x"], (1, 5)), s["w"]))
        return ad.reduce_mean(ad.sigmoid(h) * ad.exp(0.1 * h))
    report = ad.fd_check(obj, params, tol=1e-5)
    assert report.max_rel_err < 1e-5


def test_numerics_error_names_primitive():
    params = ad.ParamVector.concat([("x", np.array([800.0]))])
    with pytest.raises(NumericsError) as err:
        ad.evaluate(lambda s: ad.reduce_sum(ad.exp(s["x"])), params)
    assert "exp" in str(err.value)


def test_divide_by_zero_raises():
    params = ad.ParamVector.concat([("x", np.array([0.0]))])
    with np.errstate(divide="ignore"), pytest.raises(NumericsError):
        ad.evaluate(lambda s: ad.reduce_sum(1.0 / s["x"]), params)


def test_param_vector_round_trip():
    a = np.arange(6, dtype=float).reshape(2, 3)
    b = np.array(2.5)
    pv = ad.ParamVector.concat([("a", a), ("b", b)])
    assert pv.layout.total == 7
    np.testing.assert_array_equal(pv.segment("a"), a)
    np.testing.assert_array_equal(pv.segment("b"), b)
    split = pv.split()
    assert set(split) == {"a", "b"}
    again = pv.replace(pv.values * 2.0)
    np.testing.assert_array_equal(again.segment("a"), 2.0 * a)


def test_param_vector_size_mismatch():
    layout = ad.ParamLayout((("a", (3,)),))
    with pytest.raises(DimensionError):
        ad.ParamVector(np.ones(4), layout)


def test_objective_must_be_scalar():
    params = _vec(n=3)
    with pytest.raises(DimensionError):
        ad.value_and_grad(lambda s: s["x"] * 2.0, params)


def test_fd_check_coords_subset():
    params = _vec(n=50, seed=9)
    report = ad.fd_check(
        lambda s: ad.reduce_sum(s["x"] ** 2), params, coords=np.array([0, 10, 49]), tol=1e-6
    )
    assert report.n_checked == 3
    assert report.max_rel_err < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8))
def test_grad_of_product_pair_is_other_factor(xs):
    x = np.asarray(xs)
    y = np.linspace(1.0, 2.0, x.size)
    params = ad.ParamVector.concat([("x", x)])
    _, grad = ad.value_and_grad(lambda s: ad.reduce_sum(s["x"] * y), params)
    np.testing.assert_allclose(grad, y, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_evaluate_matches_value_and_grad_value(seed):
    rng = np.random.default_rng(seed)
    params = ad.ParamVector.concat([("x", rng.normal(size=4))])
    def obj(s):
        return ad.reduce_sum(ad.tanh(s["x"]) * s["x"])
    v1 = ad.evaluate(obj, params)
    v2, _ = ad.value_and_grad(obj, params)
    assert v1 == pytest.approx(v2, rel=0, abs=0)
