import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from gnnoma import autograd as ag
from gnnoma.autograd import Tensor
from gnnoma.errors import NotScalarLoss, ShapeMismatch
from gnnoma.nn import (AdamState, MlpSpec, ParamStore, adam_step, backward, grad_check,
                       init_mlp, mlp_forward)


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        fp = f(x)
        x[i] = old - eps
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


UNARY = {
    "softplus": (ag.softplus, lambda x: np.log1p(np.exp(x))),
    "sigmoid": (ag.sigmoid, lambda x: 1 / (1 + np.exp(-x))),
    "exp": (ag.exp, np.exp),
    "square": (ag.square, np.square),
}


@pytest.mark.parametrize("name", list(UNARY))
def test_unary_gradients(name, rng):
    op, ref = UNARY[name]
    x = rng.standard_normal((3, 4))
    t = Tensor(x.copy(), requires_grad=True)
    w = rng.standard_normal((3, 4))
    ag.sum(op(t) * w).backward()
    np.testing.assert_allclose(op(Tensor(x)).data, ref(x), rtol=1e-12)
    np.testing.assert_allclose(t.grad, numeric_grad(lambda v: np.sum(ref(v) * w), x),
                               rtol=1e-6, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_matmul_broadcast_div_gradients(n, m, k, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((n, m)), r.standard_normal((m, k))
    c = r.uniform(1, 2, size=(1, k))
    ta, tb, tc = (Tensor(v.copy(), requires_grad=True) for v in (a, b, c))
    ag.sum(ag.square((ta @ tb) / tc - 0.5)).backward()

    def f(a_, b_, c_):
        return np.sum(((a_ @ b_) / c_ - 0.5) ** 2)
    np.testing.assert_allclose(ta.grad, numeric_grad(lambda v: f(v, b, c), a), rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(tb.grad, numeric_grad(lambda v: f(a, v, c), b), rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(tc.grad, numeric_grad(lambda v: f(a, b, v), c), rtol=1e-5, atol=1e-7)


def test_spmm_gradient(rng):
    A = sparse.random(5, 4, density=0.5, random_state=3, format="csr")
    x = rng.standard_normal((4, 3))
    t = Tensor(x.copy(), requires_grad=True)
    ag.sum(ag.square(ag.spmm(A, t))).backward()
    np.testing.assert_allclose(t.grad, 2 * A.T @ (A @ x), rtol=1e-12)


def test_sum_of_linear_map_gradient():
    W = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
    x = np.array([[0.5, -1.5]])
    ag.sum(Tensor(x) @ W).backward()
    np.testing.assert_array_equal(W.grad, np.repeat(x.T, 2, axis=1))


def test_unreachable_parameter_has_zero_gradient(rng):
    ps = ParamStore()
    a = ps.add("a", rng.standard_normal(3))
    ps.add("b", rng.standard_normal(3))
    g = backward(ag.sum(ag.square(a)), ps)
    assert np.all(g["b"] == 0)


def test_non_scalar_loss_rejected():
    with pytest.raises(NotScalarLoss):
        Tensor(np.ones(3), requires_grad=True).backward()


def test_mlp_zero_params_zero_output(rng):
    spec = MlpSpec([3, 4, 2])
    ps = ParamStore()
    init_mlp(spec, ps, "m", rng)
    for t in ps.values():
        t.data[:] = 0
    assert np.all(mlp_forward(spec, ps, "m", rng.standard_normal((5, 3))).data == 0)


def test_mlp_identity_layer():
    spec = MlpSpec([2, 2, 2], hidden="identity")
    ps = ParamStore.from_arrays({"m.0.weight": np.eye(2), "m.0.bias": np.zeros((1, 2)),
                                 "m.1.weight": np.eye(2), "m.1.bias": np.zeros((1, 2))})
    x = np.array([[1.5, -2.0]])
    np.testing.assert_array_equal(mlp_forward(spec, ps, "m", x).data, x)


def test_mlp_hand_value():
    spec = MlpSpec([2, 2, 2])
    ps = ParamStore.from_arrays({
        "m.0.weight": np.array([[1.0, -2.0], [0.5, 1.0]]), "m.0.bias": np.array([[0.1, 0.2]]),
        "m.1.weight": np.array([[2.0, 1.0], [-1.0, 3.0]]), "m.1.bias": np.array([[0.0, 1.0]])})
    out = mlp_forward(spec, ps, "m", np.array([[1.0, -1.0]])).data
    np.testing.assert_allclose(out, [[1.2, 1.6]], rtol=1e-14)


def test_mlp_shape_check(rng):
    spec = MlpSpec([3, 4, 2])
    ps = ParamStore()
    init_mlp(spec, ps, "m", rng)
    with pytest.raises(ShapeMismatch):
        mlp_forward(spec, ps, "m", np.ones((2, 4)))


def test_adam_first_step_closed_form(rng):
    g = rng.standard_normal((3, 2))
    p0 = rng.standard_normal((3, 2))
    ps = ParamStore.from_arrays({"w": p0})
    adam_step(ps, {"w": g}, AdamState(), lr=1e-3)
    np.testing.assert_allclose(ps["w"].data, p0 - 1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_zero_gradient_keeps_params(rng):
    p0 = rng.standard_normal(4)
    ps = ParamStore.from_arrays({"w": p0})
    st_ = AdamState()
    for _ in range(50):
        adam_step(ps, {"w": np.zeros(4)}, st_)
    assert np.array_equal(ps["w"].data, p0)


def test_adam_deterministic(rng):
    def run():
        r = np.random.default_rng(5)
        ps = ParamStore.from_arrays({"w": np.ones(3)})
        s = AdamState()
        for _ in range(20):
            adam_step(ps, {"w": r.standard_normal(3)}, s)
        return ps["w"].data
    assert np.array_equal(run(), run())


def test_grad_check_quadratic(rng):
    ps = ParamStore.from_arrays({"p": rng.standard_normal(10)})
    assert grad_check(lambda q: ag.sum(ag.square(q["p"])), ps, probe_count=10) < 1e-8


def test_grad_check_skips_relu_kinks():
    ps = ParamStore.from_arrays({"p": np.array([1e-7, -1e-7, 0.5])})
    err = grad_check(lambda q: ag.sum(ag.relu(q["p"])), ps, probe_count=30, eps=1e-5)
    assert err < 1e-8
