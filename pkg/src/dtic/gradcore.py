"""Small reverse-mode differentiation engine on float64 numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and remembers how it was produced. Call
:meth:`Tensor.backward` on a scalar result to fill ``.grad`` on every tensor
that requires a gradient. Fused primitives with hand-written vector-Jacobian
products are registered through :func:`custom_op`; they are held to the same
:func:`grad_check` standard as the elementwise ops.
"""
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "NonFiniteError", "param", "const", "custom_op",
    "exp", "log", "log1p", "sigmoid", "tanh", "softplus", "concat", "square", "transpose", "matmul",
    "forward_backward", "evaluate", "grad_check", "AdamHyper", "AdamState",
    "adam_step", "init_uniform",
]


class ShapeError(ValueError):
    """Raised when an operation receives incompatible shapes."""

    def __init__(self, op, name, detail):
        self.op = op
        self.node = name
        label = f"{op}" if name is None else f"{op} ({name})"
        super().__init__(f"shape mismatch in node {label}: {detail}")


class NonFiniteError(FloatingPointError):
    """A gradient or loss contains NaN or infinity."""

    def __init__(self, where, detail=""):
        self.where = where
        super().__init__(f"non-finite value in {where}" + (f": {detail}" if detail else ""))


def _as_array(value):
    return np.asarray(value, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "parents", "vjp", "op", "name", "requires_grad")
    __array_priority__ = 100

    def __init__(self, data, parents=(), vjp=None, op="const", name=None, requires_grad=False):
        self.data = _as_array(data)
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.name = name
        self.requires_grad = requires_grad

    def __repr__(self):
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.data.shape})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0])

    # arithmetic --------------------------------------------------------
    def __add__(self, other):
        return _binary(self, other, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, "sub")

    def __rsub__(self, other):
        return _binary(_lift(other), self, "sub")

    def __mul__(self, other):
        return _binary(self, other, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, "div")

    def __rtruediv__(self, other):
        return _binary(_lift(other), self, "div")

    def __neg__(self):
        return _node(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, power):
        if power == 2:
            return square(self)
        p = float(power)
        x = self.data
        return _node(x ** p, (self,), lambda g: (g * p * x ** (p - 1.0),), "pow")

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        shape = self.data.shape
        out = self.data[index]

        def vjp(g):
            full = np.zeros(shape)
            full[index] += g
            return (full,)

        return _node(out, (self,), vjp, "getitem")

    # reductions / reshaping -------------------------------------------
    def sum(self, axis=None, keepdims=False):
        shape = self.data.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _node(out, (self,), vjp, "sum")

    def mean(self, axis=None, keepdims=False):
        size = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / size)

    def reshape(self, *shape):
        old = self.data.shape
        try:
            out = self.data.reshape(*shape)
        except ValueError as exc:
            raise ShapeError("reshape", self.name, str(exc)) from None
        return _node(out, (self,), lambda g: (np.reshape(g, old),), "reshape")

    # backward ---------------------------------------------------------
    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward", self.name, f"loss must be scalar, got shape {self.data.shape}")
            seed = np.ones_like(self.data)
        order = _topological(self)
        for node in order:
            node.grad = None
        self.grad = _as_array(seed)
        for node in reversed(order):
            if node.vjp is None or node.grad is None:
                continue
            for parent, g in zip(node.parents, node.vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    parent.grad = parent.grad + g


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _lift(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(value, parents, vjp, op, name=None):
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, parents if needs else (), vjp if needs else None, op, name, needs)


def param(value, name=None):
    """Leaf tensor that receives a gradient."""
    return Tensor(np.array(value, dtype=np.float64, copy=True), op="param", name=name, requires_grad=True)


def const(value, name=None):
    return Tensor(value, op="const", name=name)


def custom_op(op, value, inputs, vjp, name=None):
    """Register a fused primitive.

    ``vjp(g)`` must return one gradient (or ``None``) per entry of ``inputs``.
    """
    return _node(value, tuple(inputs), vjp, op, name)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b, op):
    a, b = _lift(a), _lift(b)
    x, y = a.data, b.data
    try:
        np.broadcast_shapes(x.shape, y.shape)
    except ValueError:
        raise ShapeError(op, a.name or b.name, f"{x.shape} vs {y.shape}") from None
    sx, sy = x.shape, y.shape
    if op == "add":
        out = x + y
        vjp = lambda g: (_unbroadcast(g, sx), _unbroadcast(g, sy))
    elif op == "sub":
        out = x - y
        vjp = lambda g: (_unbroadcast(g, sx), _unbroadcast(-g, sy))
    elif op == "mul":
        out = x * y
        vjp = lambda g: (_unbroadcast(g * y, sx), _unbroadcast(g * x, sy))
    elif op == "div":
        out = x / y
        vjp = lambda g: (_unbroadcast(g / y, sx), _unbroadcast(-g * x / (y * y), sy))
    else:  # pragma: no cover
        raise ValueError(op)
    return _node(out, (a, b), vjp, op)


def matmul(a, b):
    """``(..., n) @ (n, m)``; leading axes of ``a`` are treated as batch."""
    a, b = _lift(a), _lift(b)
    x, w = a.data, b.data
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise ShapeError("matmul", a.name or b.name, f"{x.shape} @ {w.shape}")
    out = x @ w

    def vjp(g):
        gx = g @ w.T
        gw = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, w.shape[1])
        return gx, gw

    return _node(out, (a, b), vjp, "matmul")


def transpose(a):
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def square(a):
    x = a.data
    return _node(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def exp(a):
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    x = a.data
    return _node(np.log(x), (a,), lambda g: (g / x,), "log")


def log1p(a):
    x = a.data
    return _node(np.log1p(x), (a,), lambda g: (g / (1.0 + x),), "log1p")


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a):
    out = _sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a):
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def softplus(a):
    """log(1 + e^x), evaluated without overflow."""
    x = a.data
    return _node(np.logaddexp(0.0, x), (a,), lambda g: (g * _sigmoid(x),), "softplus")


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", None, str(exc)) from None
    bounds = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(tensors), vjp, "concat")


# ---------------------------------------------------------------------------
# Driver functions
# ---------------------------------------------------------------------------


def forward_backward(fn, params):
    """Evaluate ``fn(tensors)`` and its gradient w.r.t. every entry of ``params``.

    Returns ``(loss, grads)``; an unused parameter gets an all-zero gradient.
    """
    leaves = {k: param(v, name=k) for k, v in params.items()}
    loss = fn(leaves)
    if not isinstance(loss, Tensor):
        loss = const(loss)
    if loss.data.size != 1:
        raise ShapeError("loss", loss.name, f"loss must be scalar, got shape {loss.data.shape}")
    if loss.requires_grad:
        loss.backward()
    grads = {}
    for k, leaf in leaves.items():
        grads[k] = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad.reshape(leaf.data.shape)
    return float(loss.data.reshape(-1)[0]), grads


def evaluate(fn, params):
    """Forward pass only; no graph is recorded."""
    out = fn({k: const(v, name=k) for k, v in params.items()})
    return float(_lift(out).data.reshape(-1)[0])


def grad_check(fn, point, eps=1e-5, names=None):
    """Compare analytic gradients with central finite differences.

    For every parameter array the error is
    ``||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8)``;
    the maximum over arrays is returned. Never raises on a mismatch.
    """
    point = {k: np.array(v, dtype=np.float64, copy=True) for k, v in point.items()}
    _, analytic = forward_backward(fn, point)
    worst = 0.0
    for name in names or list(point):
        base = point[name]
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = evaluate(fn, point)
            flat[i] = keep - eps
            down = evaluate(fn, point)
            flat[i] = keep
            nflat[i] = (up - down) / (2.0 * eps)
        a = analytic[name]
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-8)
        err = float(np.linalg.norm(a - numeric) / denom)
        if not np.isfinite(err):
            err = np.inf
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, params):
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state, hyper=AdamHyper()):
    """One bias-corrected Adam update. Inputs are not modified.

    Raises :class:`NonFiniteError` (and applies nothing) if any gradient entry
    is NaN or infinite.
    """
    for k, g in grads.items():
        if k in params and not np.all(np.isfinite(g)):
            raise NonFiniteError(f"gradient of {k}")
    step = state.step + 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads.get(k)
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        if g is None:
            new_params[k], new_m[k], new_v[k] = p, m, v
            continue
        if g.shape != p.shape:
            raise ShapeError("adam_step", k, f"grad {g.shape} vs param {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params[k] = p - hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        new_m[k], new_v[k] = m, v
    return new_params, AdamState(step, new_m, new_v)


def init_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
