import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from layoutlm_desk import numkernel as nk
from layoutlm_desk.errors import ConfigError, ContractError, ShapeError

from gradcheck import numeric_grad, rel_error

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def arrays(shape):
    return hnp.arrays(np.float64, shape, elements=finite)


# -- forward values ------------------------------------------------------------

def test_matmul_examples():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(nk.matmul(np.eye(2), a).data, a)
    np.testing.assert_array_equal(nk.matmul(a, [[0.0], [1.0]]).data, [[2.0], [4.0]])
    np.testing.assert_array_equal(nk.matmul(a, np.zeros((2, 3))).data, np.zeros((2, 3)))


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        nk.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_softmax_examples():
    np.testing.assert_allclose(nk.softmax([2.0, 2.0, 2.0]).data, [1 / 3] * 3, rtol=0, atol=1e-15)
    np.testing.assert_allclose(nk.softmax([0.0, math.log(2)]).data, [1 / 3, 2 / 3], atol=1e-15)


@given(arrays((3, 5)), finite)
def test_softmax_properties(v, c):
    y = nk.softmax(v).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(-1), 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(nk.softmax(v + c).data, y, atol=1e-12)


def test_layer_norm_examples():
    one, zero = np.ones(4), np.zeros(4)
    np.testing.assert_array_equal(nk.layer_norm(np.full(4, 3.0), one, zero).data, zero)
    np.testing.assert_allclose(nk.layer_norm([1.0, -1.0], np.ones(2), np.zeros(2), 1e-300).data,
                               [1.0, -1.0], rtol=1e-15)
    beta = np.array([0.5, -1.0, 2.0, 0.0])
    np.testing.assert_array_equal(nk.layer_norm([1.0, 5.0, 2.0, 7.0], zero, beta).data, beta)
    with pytest.raises(ContractError):
        nk.layer_norm(np.ones(2), np.ones(2), np.zeros(2), eps=0.0)


@given(arrays((4, 6)))
def test_layer_norm_moments(x):
    x = x + np.arange(6) * 0.5  # never a constant row
    y = nk.layer_norm(x, np.ones(6), np.zeros(6)).data
    assert np.abs(y.mean(-1)).max() < 1e-10
    assert np.abs(y.var(-1) - 1).max() < 1e-8


def test_gelu_examples():
    assert nk.gelu(0.0).item() == 0.0
    assert abs(nk.gelu(10.0).item() - 10.0) < 1e-6
    assert abs(nk.gelu(-10.0).item()) < 1e-6


def test_nonfinite_rejected_at_creation():
    with pytest.raises(ContractError):
        nk.Tensor([1.0, np.nan])
    with pytest.raises(ContractError):
        nk.Tensor(np.inf)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_debug_mode_checks_op_outputs():
    big = nk.Tensor([1e200])
    assert not np.isfinite(nk.mul(big, big).data).all()  # unchecked by default
    nk.set_debug(True)
    try:
        with pytest.raises(ContractError):
            nk.mul(big, big)
    finally:
        nk.set_debug(False)


def test_cross_entropy_and_bce_values():
    logits = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
    ce = nk.cross_entropy(logits, [1, 0]).item()
    expect = (math.log(3) + (math.log(math.exp(10) + 2) - 10)) / 2
    assert abs(ce - expect) < 1e-12
    assert abs(nk.bce_with_logits(np.zeros(5), [1, 0, 1, 1, 0]).item() - math.log(2)) < 1e-15
    assert nk.bce_with_logits([800.0, -800.0], [1, 0]).item() < 1e-12


# -- backward -------------------------------------------------------------------

def test_backward_examples():
    x = nk.Tensor([1.0, -2.0, 3.0], requires_grad=True)
    (g,) = nk.backward(nk.sum_(x), [x])
    np.testing.assert_array_equal(g, np.ones(3))
    x = nk.Tensor([1.0, -2.0, 3.0], requires_grad=True)
    (g,) = nk.backward(nk.sum_(x * x), [x])
    np.testing.assert_array_equal(g, 2 * x.data)


def test_backward_requires_scalar():
    x = nk.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        nk.backward(x * 2.0)


def test_nonparticipating_leaf_gets_zeros():
    x = nk.Tensor(np.ones(3), requires_grad=True)
    y = nk.Tensor(np.ones((2, 2)), requires_grad=True)
    gx, gy = nk.backward(nk.sum_(x * 3.0), [x, y])
    np.testing.assert_array_equal(gx, np.full(3, 3.0))
    np.testing.assert_array_equal(gy, np.zeros((2, 2)))


def test_topo_order_inputs_precede_consumers():
    a = nk.Tensor(np.ones(2), requires_grad=True)
    b = a * 2.0
    c = b + a
    d = nk.sum_(c * b)
    order = nk.topo_order(d)
    pos = {id(t): i for i, t in enumerate(order)}
    for t in order:
        for p in t._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(t)]
    assert order[-1] is d


def _op_cases(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    w = rng.normal(size=(3, 4))  # constant weights; inputs get perturbed in place
    yield "matmul", [a, b], lambda x, y: nk.sum_(nk.matmul(x, y) * nk.matmul(x, y))
    yield "broadcast_add", [a, rng.normal(size=(4,))], lambda x, y: nk.sum_(nk.gelu(x + y))
    yield "mul_sub", [a, rng.normal(size=(1, 4))], lambda x, y: nk.mean((x - y) * x)
    yield "softmax", [a], lambda x: nk.sum_(nk.softmax(x) * np.arange(4.0))
    yield "log_softmax", [a], lambda x: nk.sum_(nk.log_softmax(x, axis=0) * w)
    yield "layer_norm", [a, rng.normal(size=4), rng.normal(size=4)], \
        lambda x, g, bb: nk.sum_(nk.layer_norm(x, g, bb, 1e-5) * w)
    yield "transpose_reshape", [rng.normal(size=(2, 3, 4))], \
        lambda x: nk.sum_(nk.reshape(nk.transpose(x, (2, 0, 1)), (4, 6)) * np.arange(24.0).reshape(4, 6))
    yield "concat", [a, rng.normal(size=(3, 2))], lambda x, y: nk.sum_(nk.gelu(nk.concat([x, y], -1)))
    yield "gather", [a], lambda x: nk.sum_(nk.gather(x, ([0, 2, 0], [1, 1, 1])) * 3.0)
    we = rng.normal(size=(2, 2, 3))
    yield "embedding", [rng.normal(size=(5, 3))], \
        lambda t: nk.sum_(nk.embedding(t, np.array([[0, 4], [4, 2]])) * we)
    yield "cross_entropy", [a], lambda x: nk.cross_entropy(x, [0, 3, 3])
    yield "bce", [a], lambda x: nk.bce_with_logits(x, (w > 0).astype(float))
    yield "batched_matmul", [rng.normal(size=(2, 3, 4)), b], \
        lambda x, y: nk.sum_(nk.gelu(nk.matmul(x, y)))


def test_op_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    for name, inputs, f in _op_cases(rng):
        leaves = [nk.Tensor(x, requires_grad=True) for x in inputs]
        analytic = nk.backward(f(*leaves), leaves)
        for k, x in enumerate(inputs):
            def loss():
                return f(*[nk.Tensor(v) for v in inputs]).item()
            num = numeric_grad(loss, x)
            assert rel_error(analytic[k], num) < 1e-6, (name, k)


# -- optimizer ----------------------------------------------------------------------

def test_lr_schedule():
    cfg = nk.OptimizerConfig(total_steps=100)
    assert nk.lr_at(cfg, 1) == 5e-5
    assert nk.lr_at(nk.OptimizerConfig(total_steps=2), 2) == 2.5e-5
    last = nk.lr_at(cfg, 100)
    assert 0 < last < 5e-5
    lrs = [nk.lr_at(cfg, s) for s in range(1, 101)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))
    for bad in (0, 101):
        with pytest.raises(ContractError):
            nk.lr_at(cfg, bad)


def test_optimizer_config_validation():
    with pytest.raises(ConfigError) as err:
        nk.OptimizerConfig(initial_lr=-1, beta1=1.0, total_steps=0)
    assert len(err.value.violations) == 3


@given(arrays((3, 4)))
def test_adam_first_step_is_signed_lr(g):
    g = np.where(np.abs(g) < 1e-3, 1.0, g)
    cfg = nk.OptimizerConfig(initial_lr=1e-3, total_steps=10)
    p = {"w": np.zeros((3, 4))}
    new, _ = nk.adam_step(p, {"w": g}, nk.AdamState(), cfg, 1)
    upd = new["w"] - p["w"]
    assert np.all(np.abs(upd + cfg.initial_lr * np.sign(g)) < cfg.initial_lr * 1e-3)


def test_adam_zero_grad_and_determinism():
    cfg = nk.OptimizerConfig(initial_lr=1e-2, total_steps=5)
    p = {"w": np.arange(6.0).reshape(2, 3)}
    new, _ = nk.adam_step(p, {"w": np.zeros((2, 3))}, nk.AdamState(), cfg, 1)
    np.testing.assert_array_equal(new["w"], p["w"])

    rng = np.random.default_rng(3)
    grads = [rng.normal(size=(2, 3)) for _ in range(5)]

    def run():
        params, state = dict(p), nk.AdamState()
        for i, g in enumerate(grads, 1):
            params, state = nk.adam_step(params, {"w": g}, state, cfg, i)
        return params["w"]

    np.testing.assert_array_equal(run(), run())


def test_adam_shape_mismatch_and_frozen_params():
    cfg = nk.OptimizerConfig(total_steps=2)
    p = {"w": np.ones(3), "frozen": np.ones(2)}
    with pytest.raises(ShapeError):
        nk.adam_step(p, {"w": np.ones(4)}, nk.AdamState(), cfg, 1)
    new, state = nk.adam_step(p, {"w": np.ones(3)}, nk.AdamState(), cfg, 1)
    assert new["frozen"] is p["frozen"]
    assert "frozen" not in state.m


@settings(max_examples=25)
@given(st.integers(1, 50), st.floats(1e-6, 1.0))
def test_lr_linear(total, lr):
    cfg = nk.OptimizerConfig(initial_lr=lr, total_steps=total)
    for s in range(1, total + 1):
        assert nk.lr_at(cfg, s) == pytest.approx(lr * (1 - (s - 1) / total), rel=1e-12)
