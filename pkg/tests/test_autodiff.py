"""Tape engine: frozen hand values first, then finite-difference properties."""

import numpy as np
import pytest

from dgrl import autodiff as ad
from dgrl.errors import MissingGrad, NonScalarRoot, ShapeMismatch


def fd_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at array x (independent oracle)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


def test_matmul_hand_value():
    out = ad.matmul(ad.Tensor([[1.0, 2.0]]), ad.Tensor([[3.0], [4.0]]))
    assert out.values.tolist() == [[11.0]]


def test_relu_hand_value():
    assert ad.relu(ad.Tensor([-1.0, 0.0, 2.0])).values.tolist() == [0.0, 0.0, 2.0]


def test_softmax_symmetry():
    out = ad.softmax(ad.Tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.values, [0.5, 0.5], atol=1e-15)


def test_backward_square_sum():
    x = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    root = ad.tensor_sum(ad.mul(x, x))
    grads = ad.backward(root)
    np.testing.assert_allclose(grads[x], [2.0, 4.0, 6.0], atol=1e-15)


def test_backward_diamond_accumulates_paths():
    x = ad.Tensor(3.0, requires_grad=True)
    root = ad.add(x, x)
    ad.backward(root)
    assert x.grad == pytest.approx(2.0)


def test_backward_matmul_matches_central_differences():
    rng = np.random.default_rng(0)
    a = ad.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    root = ad.tensor_sum(ad.matmul(a, b))
    ad.backward(root)
    fa = fd_grad(lambda: float(np.sum(a.values @ b.values)), a.values)
    fb = fd_grad(lambda: float(np.sum(a.values @ b.values)), b.values)
    np.testing.assert_allclose(a.grad, fa, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(b.grad, fb, rtol=1e-6, atol=1e-9)


def test_backward_requires_scalar_root():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(NonScalarRoot):
        ad.backward(ad.mul(x, x))


def test_backward_does_not_mutate_forward_values():
    x = ad.Tensor([1.0, -2.0], requires_grad=True)
    y = ad.relu(x)
    snapshot = y.values.copy()
    ad.backward(ad.tensor_sum(y))
    np.testing.assert_array_equal(y.values, snapshot)


def test_shape_mismatch_names_primitive():
    with pytest.raises(ShapeMismatch, match="matmul"):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))


def _primitive_cases(rng):
    """One scalar-valued closure per primitive, inputs kept off relu kinks."""
    n, m = 4, 3
    x = ad.Tensor(rng.normal(size=(n, m)) + np.sign(rng.normal(size=(n, m))) * 0.2,
                  requires_grad=True)
    w = ad.Tensor(rng.normal(size=(m, m)), requires_grad=True)
    idx = rng.integers(0, n, size=6)
    mask = (rng.random((n, m)) >= 0.3) / 0.7
    pos = ad.Tensor(np.abs(rng.normal(size=(n, m))) + 0.5, requires_grad=True)
    shift = ad.Tensor(rng.normal(size=(m,)))
    coef = ad.Tensor(np.arange(m) + 1.0)
    wide_a = ad.Tensor(rng.normal(size=(n, m)))
    wide_b = ad.Tensor(rng.normal(size=(m, n)))
    wide_c = ad.Tensor(rng.normal(size=(m, n)))
    cases = {
        "matmul": lambda: ad.tensor_sum(ad.matmul(x, w)),
        "add_broadcast": lambda: ad.tensor_sum(ad.add(x, shift)),
        "mul": lambda: ad.tensor_sum(ad.mul(x, x)),
        "div": lambda: ad.tensor_sum(ad.div(x, pos)),
        "relu": lambda: ad.tensor_sum(ad.relu(x)),
        "leaky_relu": lambda: ad.tensor_sum(ad.leaky_relu(x, 0.2)),
        "exp": lambda: ad.tensor_sum(ad.exp(ad.scale(x, 0.3))),
        "log": lambda: ad.tensor_sum(ad.log(pos)),
        "softmax": lambda: ad.tensor_sum(ad.mul(ad.softmax(x, axis=1), coef)),
        "concat": lambda: ad.tensor_sum(ad.concat([x, ad.mul(x, x)], axis=1)),
        "sum_axis": lambda: ad.tensor_sum(ad.tensor_sum(x, axis=0)),
        "mean": lambda: ad.tensor_mean(ad.mul(x, x)),
        "gather": lambda: ad.tensor_sum(ad.gather(x, idx)),
        "scatter_add": lambda: ad.tensor_sum(ad.mul(ad.scatter_add(ad.gather(x, idx), idx, n),
                                                    wide_a)),
        "dropout_mask": lambda: ad.tensor_sum(ad.dropout(x, mask)),
        "scale": lambda: ad.tensor_sum(ad.scale(x, -1.7)),
        "reshape": lambda: ad.tensor_sum(ad.mul(ad.reshape(x, (m, n)), wide_b)),
        "transpose": lambda: ad.tensor_sum(ad.mul(ad.transpose(x, (1, 0)), wide_c)),
    }
    leaves = {"default": x, "div": pos, "log": pos}
    return cases, leaves


@pytest.mark.parametrize("seed", range(20))
def test_every_primitive_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    cases, leaves = _primitive_cases(rng)
    for name, closure in cases.items():
        leaf = leaves.get(name, leaves["default"])
        leaf.grad = None
        root = closure()
        ad.backward(root)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.values)
        fd = fd_grad(lambda: float(closure().values), leaf.values)
        err = np.abs(analytic - fd) / np.maximum.reduce(
            [np.ones_like(fd), np.abs(analytic), np.abs(fd)])
        assert err.max() < 1e-5, f"{name}: {err.max()}"


def test_gradient_linearity():
    rng = np.random.default_rng(3)
    x = ad.Tensor(rng.normal(size=(5,)), requires_grad=True)

    def run(fn):
        x.grad = None
        ad.backward(fn())
        return x.grad.copy()

    f = lambda: ad.tensor_sum(ad.mul(x, x))
    g = lambda: ad.tensor_sum(ad.exp(ad.scale(x, 0.5)))
    combo = lambda: ad.add(ad.scale(f(), 2.0), ad.scale(g(), -3.0))
    np.testing.assert_allclose(run(combo), 2 * run(f) - 3 * run(g), atol=1e-10)


def test_param_store_init_is_seeded_and_ordered():
    a = ad.ParamStore(seed=7)
    wa = a.weight("w", (4, 3))
    a.bias("b", (3,))
    b = ad.ParamStore(seed=7)
    wb = b.weight("w", (4, 3))
    np.testing.assert_array_equal(wa.values, wb.values)
    limit = np.sqrt(6.0 / 7.0)
    assert np.all(np.abs(wa.values) <= limit)
    assert np.all(a.get("b").values == 0.0)
    assert a.names() == ["w", "b"]


def test_adam_hand_step():
    store = ad.ParamStore(seed=0)
    p = store.bias("x", (1,))
    p.values = np.array([1.0])
    p.grad = np.array([1.0])
    state = ad.AdamState(store)
    ad.adam_step(store, state, lr=0.1)
    assert abs(p.values[0] - 0.9) < 1e-6
    assert state.t == 1


def test_adam_zero_grad_leaves_params_unchanged():
    store = ad.ParamStore(seed=0)
    p = store.weight("w", (2, 2))
    before = p.values.copy()
    p.grad = np.zeros_like(p.values)
    ad.adam_step(store, ad.AdamState(store), lr=0.1)
    np.testing.assert_array_equal(p.values, before)


def test_adam_is_deterministic():
    results = []
    for _ in range(2):
        store = ad.ParamStore(seed=1)
        p = store.weight("w", (3,))
        state = ad.AdamState(store)
        for step in range(5):
            p.grad = np.sin(np.arange(3.0) + step)
            ad.adam_step(store, state, lr=0.01)
        results.append(p.values.copy())
    np.testing.assert_array_equal(results[0], results[1])


def test_adam_missing_grad_names_parameter():
    store = ad.ParamStore(seed=0)
    store.weight("w.hidden", (2, 2))
    with pytest.raises(MissingGrad, match="w.hidden"):
        ad.adam_step(store, ad.AdamState(store), lr=0.1)


def test_grad_check_quadratic_form():
    store = ad.ParamStore(seed=5)
    w = store.weight("W", (3, 3))
    x = np.array([0.3, -1.2, 0.7])

    def f():
        y = ad.matmul(ad.Tensor(x.reshape(1, 3)), w)
        return ad.tensor_sum(ad.mul(y, y))

    assert ad.grad_check(f, store, eps=1e-6) < 1e-7


def test_grad_check_constant_function_is_exact():
    store = ad.ParamStore(seed=0)
    store.weight("w", (2, 2))
    assert ad.grad_check(lambda: ad.Tensor(1.0, requires_grad=True), store) == 0.0


def test_mlp_shapes_and_final_layer_linear():
    store = ad.ParamStore(seed=2)
    mlp = ad.MLP(store, "mlp", (4, 8, 2))
    out = mlp(ad.Tensor(np.random.default_rng(0).normal(size=(5, 4))))
    assert out.shape == (5, 2)
    assert out.values.min() < 0  # no relu on the output layer
