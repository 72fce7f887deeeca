"""Minimal dense-tensor reverse-mode automatic differentiation.

Eager forward with a taped reverse pass, float64 throughout. The primitive set
is exactly what the layer zoo needs: matmul (with stacked leading dims), add /
mul / div with numpy broadcasting, relu, leaky_relu, exp, log, softmax, concat,
sum/mean reductions, row gather / scatter-add, reshape / transpose, and scalar
scaling. Dropout is a multiplication by an externally sampled mask so every
primitive stays deterministic and gradient-checkable.
"""

from __future__ import annotations

import numpy as np

from .errors import MissingGrad, NonScalarRoot, ShapeMismatch


class Tensor:
    """A float64 array plus the tape record that produced it.

    ``parents``/``backward_fn`` are retained only when a parent requires grad,
    so constant subgraphs cost nothing at backward time.
    """

    __slots__ = ("values", "requires_grad", "grad", "parents", "backward_fn")

    def __init__(self, values, requires_grad=False, parents=(), backward_fn=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.values.shape

    @property
    def is_leaf(self):
        return not self.parents

    def detach(self):
        return Tensor(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def as_tensor(x):
    """Wrap arrays/scalars as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(kind, values, inputs, backward_fn):
    needs = any(t.requires_grad for t in inputs)
    if not needs:
        return Tensor(values)
    return Tensor(values, requires_grad=True, parents=tuple(inputs), backward_fn=backward_fn)


def _unbroadcast(grad, shape):
    """Sum a broadcasted gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --- primitives ------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim < 2 or b.values.ndim < 2 or a.values.shape[-1] != b.values.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = a.values @ b.values

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.values, -1, -2), a.values.shape)
        gb = _unbroadcast(np.swapaxes(a.values, -1, -2) @ g, b.values.shape)
        return ga, gb

    return _record("matmul", out, (a, b), backward)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values + b.values
    except ValueError as exc:
        raise ShapeMismatch(f"add: {a.shape} + {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.values.shape), _unbroadcast(g, b.values.shape)

    return _record("add", out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values * b.values
    except ValueError as exc:
        raise ShapeMismatch(f"mul: {a.shape} * {b.shape}") from exc

    def backward(g):
        return (_unbroadcast(g * b.values, a.values.shape),
                _unbroadcast(g * a.values, b.values.shape))

    return _record("mul", out, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values / b.values
    except ValueError as exc:
        raise ShapeMismatch(f"div: {a.shape} / {b.shape}") from exc

    def backward(g):
        ga = _unbroadcast(g / b.values, a.values.shape)
        gb = _unbroadcast(-g * a.values / (b.values * b.values), b.values.shape)
        return ga, gb

    return _record("div", out, (a, b), backward)


def scale(a, s):
    a = as_tensor(a)
    s = float(s)
    out = a.values * s

    def backward(g):
        return (g * s,)

    return _record("scale", out, (a,), backward)


def neg(a):
    return scale(a, -1.0)


def sub(a, b):
    return add(a, neg(b))


def relu(a):
    a = as_tensor(a)
    mask = a.values > 0.0
    out = np.where(mask, a.values, 0.0)

    def backward(g):
        return (g * mask,)

    return _record("relu", out, (a,), backward)


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    mask = a.values > 0.0
    out = np.where(mask, a.values, slope * a.values)

    def backward(g):
        return (g * np.where(mask, 1.0, slope),)

    return _record("leaky_relu", out, (a,), backward)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.values)

    def backward(g):
        return (g * out,)

    return _record("exp", out, (a,), backward)


def log(a):
    a = as_tensor(a)
    out = np.log(a.values)

    def backward(g):
        return (g / a.values,)

    return _record("log", out, (a,), backward)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _record("softmax", out, (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatch("concat: empty input list")
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[t.shape for t in tensors]}") from exc
    sizes = [t.values.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", out, tuple(tensors), backward)


def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.values.shape).copy(),)

    return _record("sum", out, (a,), backward)


def tensor_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.values.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.values.shape[i] for i in axes]))
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def gather(a, index):
    """Select rows along axis 0: out[k] = a[index[k]]."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    out = a.values[index]

    def backward(g):
        ga = np.zeros_like(a.values)
        np.add.at(ga, index, g)
        return (ga,)

    return _record("gather", out, (a,), backward)


def scatter_add(a, index, num_rows):
    """out[index[k]] += a[k] into a fresh [num_rows, ...] tensor."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.shape[0] != a.values.shape[0]:
        raise ShapeMismatch(f"scatter_add: {index.shape[0]} indices for {a.values.shape[0]} rows")
    out = np.zeros((num_rows,) + a.values.shape[1:], dtype=np.float64)
    np.add.at(out, index, a.values)

    def backward(g):
        return (g[index],)

    return _record("scatter_add", out, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.values.shape
    try:
        out = a.values.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape: {old} -> {shape}") from exc

    def backward(g):
        return (g.reshape(old),)

    return _record("reshape", out, (a,), backward)


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    out = a.values.transpose(axes)
    inv = np.argsort(axes)

    def backward(g):
        return (g.transpose(inv),)

    return _record("transpose", out, (a,), backward)


def dropout(a, mask):
    """Multiply by an externally sampled Bernoulli/(1-p) mask (eval: ones)."""
    return mul(a, Tensor(mask))


def backward(root):
    """Reverse pass from a scalar root; returns {leaf tensor: grad array}.

    Gradients accumulate by sum over all paths. Leaves without requires_grad
    are absent from the map. Forward values are never mutated.
    """
    if np.size(root.values) != 1:
        raise NonScalarRoot(f"backward root has shape {root.values.shape}")

    # iterative topological order (graphs can be deep at many epochs)
    topo, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads = {id(root): np.ones_like(root.values)}
    leaf_map = {}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            leaf_map[node] = node.grad
            continue
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if not p.requires_grad:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg
    return leaf_map


# --- parameters and optimizer ------------------------------------------------


class ParamStore:
    """Named trainable leaves with a deterministic seed-derived init stream.

    Weights draw Uniform(+-sqrt(6/(fan_in+fan_out))) from one rng in insertion
    order; biases are zeros and consume no randomness.
    """

    def __init__(self, seed=0):
        self._rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

    def weight(self, name, shape, fan=None):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        if fan is None:
            if len(shape) == 2:
                fan = (shape[0], shape[1])
            else:
                fan = (int(np.prod(shape)), 1)
        limit = np.sqrt(6.0 / (fan[0] + fan[1]))
        values = self._rng.uniform(-limit, limit, size=shape)
        t = Tensor(values, requires_grad=True)
        self._params[name] = t
        return t

    def bias(self, name, shape):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.zeros(shape), requires_grad=True)
        self._params[name] = t
        return t

    def names(self):
        return list(self._params.keys())

    def get(self, name):
        return self._params[name]

    def items(self):
        return self._params.items()

    def __len__(self):
        return len(self._params)

    def __contains__(self, name):
        return name in self._params

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def num_values(self):
        return sum(p.values.size for p in self._params.values())

    def state_dict(self):
        return {name: p.values.copy() for name, p in self._params.items()}

    def load_state_dict(self, state):
        for name, p in self._params.items():
            if name not in state:
                raise KeyError(f"missing parameter in state: {name}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.values.shape:
                raise ShapeMismatch(f"param {name}: {arr.shape} != {p.values.shape}")
            p.values = arr.copy()


class AdamState:
    """First/second moment arrays plus the shared step counter."""

    def __init__(self, store):
        self.m = {n: np.zeros_like(p.values) for n, p in store.items()}
        self.v = {n: np.zeros_like(p.values) for n, p in store.items()}
        self.t = 0


def adam_step(store, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard bias-corrected Adam update, one step-counter tick per call."""
    state.t += 1
    t = state.t
    for name, p in store.items():
        if p.grad is None:
            raise MissingGrad(name)
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    return store, state


class Adam:
    """Object wrapper over adam_step bound to one store."""

    def __init__(self, store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.state = AdamState(store)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self):
        adam_step(self.store, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        self.store.zero_grad()


def grad_check(f, store, eps=1e-6):
    """Max relative error of analytic vs central-difference gradients.

    ``f`` rebuilds its tape from current store values on every call and returns
    a scalar Tensor. Error per entry: |a - fd| / max(1, |a|, |fd|).
    """
    if not (0.0 < eps <= 1e-3):
        raise ValueError("eps must be in (0, 1e-3]")
    store.zero_grad()
    root = f()
    backward(root)
    analytic = {name: (np.zeros_like(p.values) if p.grad is None else p.grad.copy())
                for name, p in store.items()}
    worst = 0.0
    for name, p in store.items():
        flat = p.values.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().values)
            flat[i] = orig - eps
            down = float(f().values)
            flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            a = a_flat[i]
            err = abs(a - fd) / max(1.0, abs(a), abs(fd))
            if err > worst:
                worst = err
    return worst


class MLP:
    """Linear chain with relu between layers; final layer stays linear.

    ``drop`` at call time is (rate, rng) for training-mode dropout after every
    hidden activation; None means eval mode (all-ones masks implicitly).
    """

    def __init__(self, store, prefix, dims):
        self.dims = tuple(int(d) for d in dims)
        self.weights = []
        self.biases = []
        for k in range(len(self.dims) - 1):
            self.weights.append(store.weight(f"{prefix}.W{k}", (self.dims[k], self.dims[k + 1])))
            self.biases.append(store.bias(f"{prefix}.b{k}", (self.dims[k + 1],)))

    def __call__(self, x, drop=None):
        h = as_tensor(x)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if k != last:
                h = relu(h)
                if drop is not None:
                    rate, rng = drop
                    if rate > 0.0:
                        mask = (rng.random(h.values.shape) >= rate) / (1.0 - rate)
                        h = dropout(h, mask)
        return h
