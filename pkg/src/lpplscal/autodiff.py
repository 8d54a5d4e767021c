"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

A dynamically built tape of `Tensor` nodes supports the handful of operations
the calibrators need: arithmetic with broadcasting, matrix products, ReLU,
elementwise transcendentals, reductions, an MSE loss, and a differentiable
linear solve used for the projected LPPLS coefficients.  `backward` walks the
graph once in reverse topological order; repeated calls without zeroing
accumulate gradients.

Sized for networks up to a few hundred thousand parameters on CPU; all math
is 64-bit.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeMismatch, SingularSystem
from .model import COND_LIMIT


class Tensor:
    """A node in the computation graph: value, gradient accumulator, backward rule."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    # operator sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def tensor(value, requires_grad: bool = False) -> Tensor:
    return Tensor(value, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _node(value, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=needs, parents=parents if needs else (),
                  backward=backward if needs else None)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_val = a.value + b.value

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.value.shape))

    return _node(out_val, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_val = a.value - b.value

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.value.shape))

    return _node(out_val, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_val = a.value * b.value

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.value, b.value.shape))

    return _node(out_val, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_val = a.value / b.value

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.value, a.value.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _node(out_val, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(out):
        if a.requires_grad:
            a._accum(-out.grad)

    return _node(-a.value, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy 1-D/2-D semantics."""
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ShapeMismatch("matmul supports 1-D and 2-D operands only")
    if av.shape[-1] != (bv.shape[0] if bv.ndim >= 1 else None):
        raise ShapeMismatch(f"matmul shapes {av.shape} and {bv.shape} incompatible")
    out_val = av @ bv

    def backward(out):
        g = out.grad
        if av.ndim == 2 and bv.ndim == 2:
            if a.requires_grad:
                a._accum(g @ bv.T)
            if b.requires_grad:
                b._accum(av.T @ g)
        elif av.ndim == 2 and bv.ndim == 1:
            if a.requires_grad:
                a._accum(np.outer(g, bv))
            if b.requires_grad:
                b._accum(av.T @ g)
        elif av.ndim == 1 and bv.ndim == 2:
            if a.requires_grad:
                a._accum(bv @ g)
            if b.requires_grad:
                b._accum(np.outer(av, g))
        else:  # dot product
            if a.requires_grad:
                a._accum(g * bv)
            if b.requires_grad:
                b._accum(g * av)

    return _node(out_val, (a, b), backward)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.value.ndim != 2:
        raise ShapeMismatch("transpose expects a 2-D tensor")

    def backward(out):
        if a.requires_grad:
            a._accum(out.grad.T)

    return _node(a.value.T, (a,), backward)


def relu(a) -> Tensor:
    """max(0, x); the derivative at exactly 0 is defined as 0."""
    a = _as_tensor(a)
    mask = a.value > 0.0
    out_val = np.where(mask, a.value, 0.0)

    def backward(out):
        if a.requires_grad:
            a._accum(out.grad * mask)

    return _node(out_val, (a,), backward)


def power(base, exponent) -> Tensor:
    """Elementwise base**exponent; base must be strictly positive."""
    base, exponent = _as_tensor(base), _as_tensor(exponent)
    if np.any(base.value <= 0.0):
        raise DomainError("power requires a strictly positive base")
    out_val = base.value ** exponent.value
    log_base = np.log(base.value)

    def backward(out):
        g = out.grad
        if base.requires_grad:
            base._accum(_unbroadcast(g * exponent.value * out_val / base.value,
                                     base.value.shape))
        if exponent.requires_grad:
            exponent._accum(_unbroadcast(g * out_val * log_base, exponent.value.shape))

    return _node(out_val, (base, exponent), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.value <= 0.0):
        raise DomainError("log requires a strictly positive argument")

    def backward(out):
        if a.requires_grad:
            a._accum(out.grad / a.value)

    return _node(np.log(a.value), (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_val = np.exp(a.value)

    def backward(out):
        if a.requires_grad:
            a._accum(out.grad * out_val)

    return _node(out_val, (a,), backward)


def cos(a) -> Tensor:
    a = _as_tensor(a)

    def backward(out):
        if a.requires_grad:
            a._accum(-out.grad * np.sin(a.value))

    return _node(np.cos(a.value), (a,), backward)


def sin(a) -> Tensor:
    a = _as_tensor(a)

    def backward(out):
        if a.requires_grad:
            a._accum(out.grad * np.cos(a.value))

    return _node(np.sin(a.value), (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out_val = 1.0 / (1.0 + np.exp(-a.value))

    def backward(out):
        if a.requires_grad:
            a._accum(out.grad * out_val * (1.0 - out_val))

    return _node(out_val, (a,), backward)


def tsum(a) -> Tensor:
    """Sum of all elements (scalar output)."""
    a = _as_tensor(a)

    def backward(out):
        if a.requires_grad:
            a._accum(np.broadcast_to(out.grad, a.value.shape))

    return _node(a.value.sum(), (a,), backward)


def mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.value.size

    def backward(out):
        if a.requires_grad:
            a._accum(np.broadcast_to(out.grad / n, a.value.shape))

    return _node(a.value.mean(), (a,), backward)


def mse(pred, target) -> Tensor:
    """Mean of squared differences; shapes must match exactly."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.value.shape != target.value.shape:
        raise ShapeMismatch(f"mse shapes differ: {pred.value.shape} vs {target.value.shape}")
    diff = pred.value - target.value
    n = diff.size

    def backward(out):
        g = out.grad * 2.0 / n
        if pred.requires_grad:
            pred._accum(g * diff)
        if target.requires_grad:
            target._accum(-g * diff)

    return _node(np.mean(diff * diff), (pred, target), backward)


def index(a, i: int) -> Tensor:
    """Scalar element of a 1-D tensor."""
    a = _as_tensor(a)
    if a.value.ndim != 1:
        raise ShapeMismatch("index expects a 1-D tensor")

    def backward(out):
        if a.requires_grad:
            g = np.zeros_like(a.value)
            g[i] = out.grad
            a._accum(g)

    return _node(a.value[i], (a,), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out_val = np.stack([t.value for t in ts], axis=axis)

    def backward(out):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accum(np.take(out.grad, i, axis=axis))

    return _node(out_val, tuple(ts), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)

    def backward(out):
        if a.requires_grad:
            a._accum(out.grad.reshape(a.value.shape))

    return _node(a.value.reshape(shape), (a,), backward)


def solve_posdef(M, y) -> Tensor:
    """Differentiable solve of M @ beta = y for a small symmetric system.

    Guards conditioning like the plain-numpy path: raises SingularSystem when
    cond(M) exceeds the shared limit.  The backward rule is the implicit
    derivative of the linear system: with u = M^-T dL/dbeta,
    dL/dy = u and dL/dM = -outer(u, beta).
    """
    M, y = _as_tensor(M), _as_tensor(y)
    Mv = M.value
    if Mv.ndim != 2 or Mv.shape[0] != Mv.shape[1] or y.value.shape != (Mv.shape[0],):
        raise ShapeMismatch("solve_posdef expects (k,k) matrix and (k,) rhs")
    cond = np.linalg.cond(Mv)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSystem(f"linear system condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")
    beta = np.linalg.solve(Mv, y.value)

    def backward(out):
        u = np.linalg.solve(Mv.T, out.grad)
        if y.requires_grad:
            y._accum(u)
        if M.requires_grad:
            M._accum(-np.outer(u, beta))

    return _node(beta, (M, y), backward)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) to every requires-grad leaf in the graph.

    `loss` must be scalar.  Leaf gradients accumulate across calls until
    zeroed; intermediate gradients are consumed and dropped, so running
    backward twice on the same graph doubles the leaf gradients.
    """
    if loss.value.size != 1:
        raise ShapeMismatch("backward expects a scalar loss")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss._accum(np.ones_like(loss.value))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node)
            node.grad = None


class DenseLayer:
    """Fully connected layer y = W x + b with Kaiming-uniform weights, zero bias."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        limit = np.sqrt(6.0 / in_dim)
        self.W = Tensor(rng.uniform(-limit, limit, size=(out_dim, in_dim)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.value.ndim == 1:
            return add(matmul(self.W, x), self.b)
        return add(matmul(x, transpose(self.W)), self.b)

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]


class AdamState:
    """Adam optimizer state over a fixed list of parameters."""

    def __init__(self, params: list[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        """One Adam update with bias correction; missing gradients count as zero."""
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else 0.0
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(state: AdamState) -> None:
    state.step()
