"""Dense tensors with reverse-mode automatic differentiation.

Every node stores its numpy value, its parents and a closure that maps the
upstream gradient to gradients of the parents. ``backward`` walks the graph in
reverse topological order.  Ops preserve the floating dtype of their inputs,
so a graph built from float64 parameters is differentiated in float64.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    pass


class DegenerateMaskError(ValueError):
    pass


class RankError(ValueError):
    pass


class UninitializedGradientError(RuntimeError):
    pass


class DeterminismError(RuntimeError):
    pass


def _as_array(value, dtype=None) -> np.ndarray:
    if isinstance(value, (np.ndarray, np.floating)) and value.dtype.kind == "f":
        # numpy scalars come out of 0-d arithmetic; keep their precision
        return np.asarray(value) if dtype is None else np.asarray(value, dtype=dtype)
    return np.asarray(value, dtype=dtype or DEFAULT_DTYPE)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")
    # make numpy defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


class Parameter(Tensor):
    """Trainable leaf tensor.  ``name`` is filled in by the owning module."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=DEFAULT_DTYPE), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Operands as tensors; a plain Python number takes the other operand's dtype."""
    if isinstance(a, Tensor) and isinstance(b, (int, float)):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and isinstance(a, (int, float)):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def _wrap(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, True, tuple(parents), backward)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise ---------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _wrap(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _wrap(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _wrap(out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _wrap(out, (a, b), bw)


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data**exponent

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _wrap(out, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _wrap(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _wrap(np.log(a.data), (a,), lambda g: (g / a.data,))


def absolute(a: Tensor) -> Tensor:
    return _wrap(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _pair(a, b)
    pick_a = a.data >= b.data
    out = np.where(pick_a, a.data, b.data)

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _wrap(out, (a, b), bw)


def minimum(a, b) -> Tensor:
    a, b = _pair(a, b)
    pick_a = a.data <= b.data
    out = np.where(pick_a, a.data, b.data)

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _wrap(out, (a, b), bw)


def clamp_min(a: Tensor, low: float) -> Tensor:
    keep = a.data > low
    out = np.where(keep, a.data, np.asarray(low, dtype=a.dtype))
    return _wrap(out, (a,), lambda g: (g * keep,))


def relu(a: Tensor) -> Tensor:
    return clamp_min(a, 0.0)


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _wrap(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x).astype(x.dtype, copy=False)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _wrap(out, (a,), lambda g: (g * sig,))


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation of GELU (smooth, so finite differences behave)."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _wrap(out, (a,), bw)


# -- reductions and shape ops ----------------------------------------------
def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _wrap(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _wrap(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _wrap(out, (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _wrap(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(p is None or p is Ellipsis or isinstance(p, (int, slice, np.integer)) for p in parts)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _wrap(np.array(out), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _wrap(out, tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    return concat([reshape(t, np.expand_dims(t.data, axis).shape) for t in tensors], axis=axis)


def where(cond: np.ndarray, a, b) -> Tensor:
    a, b = _pair(a, b)
    out = np.where(cond, a.data, b.data)

    def bw(g):
        return _unbroadcast(g * cond, a.shape), _unbroadcast(g * ~cond, b.shape)

    return _wrap(out, (a, b), bw)


# -- linear algebra ----------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a.data, g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _wrap(out, (a, b), bw)


def linear(x, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x`` (any number of leading axes)."""
    x = as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input shape {x.shape} incompatible with weight shape {w.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data
    out = out.reshape(x.shape[:-1] + (w.shape[1],))

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = x2.T @ g2
        grads = (gx, gw)
        if b is not None:
            grads += (g2.sum(axis=0),)
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _wrap(out, parents, bw)


def layer_norm(x, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] == 0:
        raise DimensionError("layer_norm over an empty axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _wrap(out, (x, gamma, beta), bw)


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax.  ``mask`` (True = keep) zeroes weights exactly."""
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _wrap(out, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _wrap(out, (x,), bw)


def attention_weights(q: Tensor, k: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product weights ``softmax(q k^T / sqrt(d))`` over the last axis."""
    scores = matmul(q * (1.0 / float(np.sqrt(q.shape[-1]))), swapaxes(k, -1, -2))
    if mask is not None:
        if not np.all(np.any(mask, axis=-1)):
            raise DegenerateMaskError("attention mask leaves a query row with no visible key")
    return softmax(scores, axis=-1, mask=mask)


# -- graph traversal ---------------------------------------------------
def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d t`` into ``t.grad`` for every reachable leaf ``t``."""
    if loss.size != 1:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- optimisation ------------------------------------------------------
def sgd_step(params: Iterable[Parameter], lr: float, weight_decay: float = 0.0,
             momentum: float = 0.0, velocity: dict | None = None) -> None:
    """``p <- p - lr * (grad + weight_decay * p)``, then zero the gradients.

    With ``momentum > 0`` the bracketed term is first folded into a velocity
    buffer held in ``velocity`` (keyed by parameter name).
    """
    params = list(params)
    for p in params:
        if p.grad is None:
            raise UninitializedGradientError(f"parameter {getattr(p, 'name', '?')!r} has no gradient")
    for p in params:
        step = p.grad + weight_decay * p.data if weight_decay else p.grad
        if momentum:
            if velocity is None:
                raise ValueError("momentum requires a velocity buffer")
            v = velocity.get(p.name)
            v = step if v is None else momentum * v + step
            velocity[p.name] = v
            step = v
        p.data = (p.data - lr * step).astype(p.data.dtype, copy=False)
        p.grad = None


def adam_step(params: Iterable[Parameter], lr: float, state: dict, weight_decay: float = 0.0,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """Adam with decoupled weight decay, then zero the gradients.

    ``state`` holds the step count and both moment buffers, keyed by parameter name.
    """
    params = list(params)
    for p in params:
        if p.grad is None:
            raise UninitializedGradientError(f"parameter {getattr(p, 'name', '?')!r} has no gradient")
    b1, b2 = betas
    t = state.get("__step__", 0) + 1
    state["__step__"] = t
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for p in params:
        m, v = state.get(("m", p.name)), state.get(("v", p.name))
        g = p.grad.astype(np.float64)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state[("m", p.name)], state[("v", p.name)] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            update = update + weight_decay * p.data
        p.data = (p.data - lr * update).astype(p.data.dtype, copy=False)
        p.grad = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               double: bool = True, max_entries: int | None = None,
               rng: np.random.Generator | None = None, atol: float = 1e-8) -> float:
    """Max componentwise relative error between autodiff and central finite differences.

    ``f`` is re-evaluated for every perturbed entry.  With ``double`` the
    gradient is back-propagated in float64; otherwise in the parameters' own
    precision.  Finite differences always run in float64 with the
    fourth-order stencil ``(8(f(+e) - f(-e)) - (f(+2e) - f(-2e))) / 12e``, so
    the reference is far more accurate than the single-precision gradient
    under test.  When ``max_entries`` is set, that many randomly chosen
    entries per parameter are probed.  The error of one entry is
    ``|a - n| / max(|a| + |n|, atol)``; ``atol`` keeps exactly-zero
    gradients from turning roundoff into a unit error.
    """
    if not 1e-7 <= eps <= 1e-2:
        raise ValueError(f"eps={eps} outside [1e-7, 1e-2]")
    rng = rng or np.random.default_rng(0)
    saved = [p.data for p in params]
    try:
        if double:
            for p in params:
                p.data = p.data.astype(np.float64)
        for p in params:
            p.grad = None
        loss = f()
        again = f()
        if not np.array_equal(loss.data, again.data):
            raise DeterminismError("objective changed between identical evaluations")
        backward(loss)
        analytic = [np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64) for p in params]
        for p, d in zip(params, saved):
            p.data = d.astype(np.float64)
        worst = 0.0
        for p, grad in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            for i in idx:
                orig = flat[i]
                values = []
                for step in (2 * eps, eps, -eps, -2 * eps):
                    flat[i] = orig + step
                    values.append(float(f().data))
                flat[i] = orig
                numeric = (8 * (values[1] - values[2]) - (values[0] - values[3])) / (12 * eps)
                a = float(grad.reshape(-1)[i])
                err = abs(a - numeric) / max(abs(a) + abs(numeric), atol)
                worst = max(worst, err)
        return worst
    finally:
        for p, d in zip(params, saved):
            p.data = d
            p.grad = None
