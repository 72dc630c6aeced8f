import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jstar import numcore as nc
from oracles import central_difference, naive_matmul, relative_error

FD_EPS = 1e-3
FD_FLOOR = 1e-2  # denominator floor for near-zero gradient entries
FD_TOL = 1e-4
TRIALS = 100


def away_from_zero(rng, shape, gap=0.2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x)


def _window_setup(rng):
    B, T, D = 2, 5, 3
    index = np.array([[-1, 0, 1, 2], [1, 2, 3, 4], [3, 4, 5, 6]])
    valid = (index >= 0) & (index < T)
    return [rng.normal(size=(B, T, D))], lambda x: nc.gather_windows(x, index, valid)


OPS = {
    "add": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 4))], lambda a, b: a + b),
    "add_scalar": (lambda r: [r.normal(size=(3, 4)), r.normal(size=())], lambda a, b: a + b),
    "sub": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 4))], lambda a, b: a - b),
    "mul": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 4))], lambda a, b: a * b),
    "mul_scalar": (lambda r: [r.normal(size=(2, 3)), r.normal(size=())], lambda a, b: a * b),
    "sigmoid": (lambda r: [r.normal(size=(3, 4)) * 2], nc.sigmoid),
    "tanh": (lambda r: [r.normal(size=(3, 4))], nc.tanh),
    "relu": (lambda r: [away_from_zero(r, (3, 4))], nc.relu),
    "exp": (lambda r: [r.normal(size=(3, 4))], nc.exp),
    "log": (lambda r: [r.uniform(0.5, 2.0, size=(3, 4))], nc.log),
    "log_softmax": (lambda r: [r.normal(size=(3, 5))], nc.log_softmax),
    "softmax_masked": (lambda r: [r.normal(size=(3, 5))],
                       lambda x: nc.softmax(x, np.array([[1, 1, 0, 1, 0], [0, 0, 0, 0, 0],
                                                         [1, 1, 1, 1, 1]], dtype=bool))),
    "matmul": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4, 2))], nc.matmul),
    "matmul_batched_2d": (lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(4, 2))], nc.matmul),
    "matmul_batched": (lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(2, 4, 2))], nc.matmul),
    "linear": (lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5)), r.normal(size=5)],
               nc.linear),
    "layer_norm": (lambda r: [r.normal(size=(3, 6)), r.normal(size=6), r.normal(size=6)],
                   nc.layer_norm),
    "sum_all": (lambda r: [r.normal(size=(3, 4))], nc.sum_all),
    "mean_all": (lambda r: [r.normal(size=(3, 4))], nc.mean_all),
    "reshape": (lambda r: [r.normal(size=(3, 4))], lambda x: x.reshape(2, 6)),
    "transpose": (lambda r: [r.normal(size=(2, 3, 4))], lambda x: x.transpose(2, 0, 1)),
    "getitem_basic": (lambda r: [r.normal(size=(4, 5))], lambda x: x[1:3, ::2]),
    "getitem_fancy": (lambda r: [r.normal(size=(4, 5))], lambda x: x[np.array([0, 2, 0])]),
    "concat": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 2))],
               lambda a, b: nc.concat([a, b], axis=1)),
    "stack": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))],
              lambda a, b: nc.stack([a, b], axis=1)),
    "pad_axis": (lambda r: [r.normal(size=(2, 3))], lambda x: nc.pad_axis(x, 1, 1, 2)),
    "expand": (lambda r: [r.normal(size=(2, 1, 3))], lambda x: nc.expand(x, (2, 4, 3))),
    "take": (lambda r: [r.normal(size=(5, 3))], lambda t: nc.take(t, np.array([[0, 4], [4, 2]]))),
    "lstm": (lambda r: [r.normal(size=(2, 3, 3)), r.normal(size=(3, 8)) * 0.5,
                        r.normal(size=(2, 8)) * 0.5, r.normal(size=8) * 0.5], nc.lstm),
    "dropout": (lambda r: [r.normal(size=(4, 4))],
                lambda x: nc.dropout(x, 0.3, np.random.default_rng(5))),
}


def check_op(name, seed, tol=FD_TOL):
    """Analytic float32 gradient against float64 central differences."""
    rng = np.random.default_rng(seed)
    if name == "gather_windows":
        inputs, fn = _window_setup(rng)
    else:
        make, fn = OPS[name]
        inputs = make(rng)
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    with nc.no_grad():
        out_shape = fn(*[nc.Tensor(x, dtype=np.float64) for x in inputs]).shape
    w = rng.normal(size=out_shape)

    params = [nc.Tensor(x.astype(np.float32), requires_grad=True) for x in inputs]
    with nc.Graph():
        loss = nc.sum_all(fn(*params) * nc.Tensor(w))
        nc.backward(loss)

    def f(arrs):
        with nc.no_grad():
            y = fn(*[nc.Tensor(a, dtype=np.float64) for a in arrs])
        return float(np.sum(y.data * w))

    worst = 0.0
    for i, p in enumerate(params):
        numeric = central_difference(f, [a.copy() for a in inputs], i, FD_EPS)
        worst = max(worst, relative_error(p.grad, numeric, FD_FLOOR))
    return worst


@pytest.mark.parametrize("name", sorted(OPS) + ["gather_windows"])
def test_op_gradients_match_finite_differences(name):
    worst = max(check_op(name, seed) for seed in range(TRIALS))
    assert worst < FD_TOL, f"{name}: worst relative error {worst:.2e}"


# ------------------------------------------------------------------ matmul

def test_matmul_identity():
    a = nc.Tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal(nc.matmul(a, nc.Tensor(np.eye(2))).data, [[1, 2], [3, 4]])


def test_matmul_all_ones_reduction():
    out = nc.matmul(nc.Tensor([[1, 2, 3]]), nc.Tensor([[1], [1], [1]]))
    np.testing.assert_array_equal(out.data, [[6]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    got = nc.matmul(nc.Tensor(a, dtype=np.float64), nc.Tensor(b, dtype=np.float64)).data
    np.testing.assert_allclose(got, naive_matmul(a.tolist(), b.tolist()), rtol=1e-12)


def test_matmul_dimension_mismatch():
    with pytest.raises(ValueError, match="inner dims"):
        nc.matmul(nc.Tensor(np.ones((2, 3))), nc.Tensor(np.ones((2, 3))))


def test_matmul_rows_do_not_depend_on_row_count():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(37, 16)).astype(np.float32), rng.normal(size=(16, 24)).astype(np.float32)
    full = nc.matmul(nc.Tensor(a), nc.Tensor(b)).data
    for m in (1, 5, 8, 13, 36):
        np.testing.assert_array_equal(nc.matmul(nc.Tensor(a[:m]), nc.Tensor(b)).data, full[:m])


# ------------------------------------------------------------- elementwise

def test_relu_example():
    np.testing.assert_array_equal(nc.elementwise("relu", nc.Tensor([-1, 0, 2])).data, [0, 0, 2])


def test_log_softmax_symmetric():
    out = nc.elementwise("log_softmax_lastdim", nc.Tensor([0.0, 0.0])).data
    np.testing.assert_allclose(out, [math.log(0.5)] * 2, rtol=1e-6)


def test_sigmoid_saturates_without_overflow():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = nc.elementwise("sigmoid", nc.Tensor([1e4, 88.0, -1e4])).data
    assert out[0] == 1.0 and out[1] == pytest.approx(1.0) and out[2] == 0.0


def test_elementwise_add_and_mul_kinds():
    a, b = nc.Tensor([1.0, 2.0]), nc.Tensor([3.0, 4.0])
    np.testing.assert_array_equal(nc.elementwise("add", a, b).data, [4, 6])
    np.testing.assert_array_equal(nc.elementwise("mul", a, b).data, [3, 8])
    np.testing.assert_allclose(nc.elementwise("tanh", a).data, np.tanh([1.0, 2.0]), rtol=1e-6)


def test_unsupported_broadcast_rejected():
    with pytest.raises(ValueError, match="broadcast"):
        nc.elementwise("add", nc.Tensor(np.ones((2, 3))), nc.Tensor(np.ones(3)))


def test_empty_tensor_rejected():
    with pytest.raises(ValueError, match="empty"):
        nc.elementwise("add", nc.Tensor(np.ones((0,))), nc.Tensor(np.ones((0,))))


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        nc.elementwise("gelu", nc.Tensor([1.0]))


def test_non_finite_forward_raises():
    with np.errstate(over="ignore", divide="ignore"):
        with pytest.raises(nc.NonFiniteError):
            nc.exp(nc.Tensor([1000.0]))
        with pytest.raises(nc.NonFiniteError):
            nc.log(nc.Tensor([0.0]))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 7)),
              elements=st.floats(-50, 50)))
def test_log_softmax_rows_are_distributions(x):
    out = nc.log_softmax(nc.Tensor(x)).data
    assert np.all(np.abs(np.exp(out.astype(np.float64)).sum(-1) - 1) < 1e-5)


def test_softmax_fully_masked_row_is_zero():
    out = nc.softmax(nc.Tensor(np.ones((2, 3))), np.array([[0, 0, 0], [1, 0, 1]], dtype=bool)).data
    np.testing.assert_array_equal(out[0], 0)
    np.testing.assert_allclose(out[1], [0.5, 0, 0.5])


def test_expand_requires_unit_axes():
    with pytest.raises(ValueError):
        nc.expand(nc.Tensor(np.ones((2, 3))), (4, 3))


# ---------------------------------------------------------------- backward

def test_backward_square_sum():
    x = nc.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with nc.Graph():
        nc.backward(nc.sum_all(x * x))
    np.testing.assert_array_equal(x.grad, [2, 4, 6])


def test_backward_sigmoid_unit_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(TRIALS):
        w0, x0 = rng.normal(size=(1, 4)), rng.normal(size=(4, 1))
        w = nc.Tensor(w0, requires_grad=True)
        with nc.Graph():
            nc.backward(nc.sum_all(nc.sigmoid(nc.matmul(w, nc.Tensor(x0)))))

        def f(arrs):
            return float(1 / (1 + np.exp(-(arrs[0] @ x0)[0, 0])))

        numeric = central_difference(f, [w0.copy()], 0, FD_EPS)
        assert relative_error(w.grad, numeric, FD_FLOOR) < 1e-4


def test_unreachable_parameter_gets_zero_gradient():
    x = nc.Tensor([1.0, 2.0], requires_grad=True)
    p = nc.Tensor([5.0], requires_grad=True)
    p.zero_grad()
    with nc.Graph():
        nc.backward(nc.sum_all(x * 2.0))
    np.testing.assert_array_equal(p.grad, [0.0])


def test_gradients_sum_over_paths():
    x = nc.Tensor([3.0], requires_grad=True)
    with nc.Graph():
        nc.backward(nc.sum_all(x * x + x * 4.0))
    np.testing.assert_allclose(x.grad, [10.0])


def test_backward_needs_scalar():
    x = nc.Tensor([1.0, 2.0], requires_grad=True)
    with nc.Graph():
        y = x * 2.0
        with pytest.raises(ValueError, match="scalar"):
            nc.backward(y)


def test_backward_twice_without_reset():
    x = nc.Tensor([1.0], requires_grad=True)
    with nc.Graph() as g:
        loss = nc.sum_all(x * x)
        nc.backward(loss)
        with pytest.raises(nc.GraphError):
            nc.backward(loss)
        g.reset()
        loss = nc.sum_all(x * x)
        nc.backward(loss)
    np.testing.assert_allclose(x.grad, [4.0])


def test_graph_append_order_is_topological():
    x = nc.Tensor(np.ones(3), requires_grad=True)
    with nc.Graph() as g:
        y = nc.tanh(x * 2.0)
        nc.sum_all(y + x)
    position = {id(n.out): i for i, n in enumerate(g.nodes)}
    for i, node in enumerate(g.nodes):
        for inp in node.inputs:
            if id(inp) in position:
                assert position[id(inp)] < i


def test_replay_is_bit_identical():
    rng = np.random.default_rng(0)
    data = [rng.normal(size=(4, 6)) for _ in range(3)]

    def run():
        a, b, c = (nc.Tensor(d, requires_grad=True) for d in data)
        with nc.Graph():
            out = nc.sum_all(nc.layer_norm(nc.tanh(nc.matmul(a, b.transpose(1, 0))) , nc.Tensor(np.ones(4)),
                                           nc.Tensor(np.zeros(4))) * nc.Tensor(c.data[:, :4]))
            nc.backward(out)
        return out.data, a.grad, b.grad

    r1, r2 = run(), run()
    for u, v in zip(r1, r2):
        np.testing.assert_array_equal(u, v)


# --------------------------------------------------------------- optimizer

def test_adam_zero_gradient_leaves_parameters():
    w = nc.Tensor([1.0, -2.0], requires_grad=True)
    w.zero_grad()
    opt = nc.Adam([w])
    nc.sgd_adam_step([w], opt)
    np.testing.assert_array_equal(w.data, [1.0, -2.0])


def test_adam_descends_on_square():
    w = nc.Tensor([1.0], requires_grad=True)
    opt = nc.Adam([w], nc.OptimConfig(lr=0.1))
    with nc.Graph():
        nc.backward(nc.sum_all(w * w))
    nc.sgd_adam_step([w], opt)
    assert w.data[0] < 1.0
    assert opt.step_count == 1
    np.testing.assert_array_equal(w.grad, [0.0])


def test_adam_missing_gradient():
    w = nc.Tensor([1.0], requires_grad=True)
    with pytest.raises(nc.GraphError, match="missing gradient"):
        nc.sgd_adam_step([w], nc.Adam([w]))


def test_adam_clips_global_norm():
    w = nc.Tensor([0.0, 0.0], requires_grad=True)
    w.grad = np.array([30.0, 40.0], dtype=np.float32)
    assert nc.Adam([w], nc.OptimConfig(clip_norm=5.0)).step() == pytest.approx(50.0)


def test_adam_runs_are_bit_identical():
    def run():
        rng = np.random.default_rng(11)
        w = nc.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        x = nc.Tensor(rng.normal(size=(5, 3)))
        opt = nc.Adam([w])
        for _ in range(10):
            with nc.Graph():
                nc.backward(nc.sum_all(nc.tanh(nc.matmul(x, w))))
            opt.step()
        return w.data

    np.testing.assert_array_equal(run(), run())


def test_float64_tensors_allowed_other_dtypes_rejected():
    assert nc.Tensor([1.0], dtype=np.float64).dtype == np.float64
    assert nc.Tensor([1.0]).dtype == np.float32
    with pytest.raises(TypeError):
        nc.Tensor([1], dtype=np.int32)
