"""
Autodiff - Reverse-mode automatic differentiation over numpy arrays.

Every op accepts numpy arrays or Tensors. When none of the inputs is a Tensor
the op evaluates eagerly and returns a plain array, so the same model code runs
with a recorded graph during training and as bare numpy during inference.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Mapping, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .errors import AutodiffError, DatasetError, ShapeError, ValidationError

logger = logging.getLogger(__name__)


class Tensor:
    """A float64 array node of a dynamically built computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward", "_consumed")

    # numpy must defer binary operators such as ndarray @ Tensor to us
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name
        self.op = "leaf"
        self._parents = ()
        self._backward = None
        self._consumed = False

    @classmethod
    def _from_op(cls, value, inputs, op, backward):
        out = cls.__new__(cls)
        out.data = value
        out.grad = None
        out.name = None
        out.op = op
        out._consumed = False
        out.requires_grad = any(_needs(x) for x in inputs)
        if out.requires_grad:
            out._parents = tuple(inputs)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self.op == "leaf"

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def numpy(self):
        """Return the underlying value array."""
        return self.data

    def detach(self):
        """Return a constant copy cut off from the graph."""
        return Tensor(self.data)

    def zero_grad(self):
        """Reset the gradient accumulator of a parameter."""
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        """Populate ``grad`` of every leaf parameter this scalar depends on.

        Gradients accumulate into the leaves; reset them with ``zero_grad``
        between steps. The graph is released afterwards, so a second call on
        the same loss is rejected.
        """
        if self._consumed:
            raise AutodiffError("backward called twice on the same graph")
        if self.size != 1:
            raise AutodiffError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise AutodiffError("loss does not depend on any parameter")

        order = _topological_order(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                node.grad = node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not _needs(parent):
                    continue
                key = id(parent)
                pending[key] = pending[key] + parent_grad if key in pending else parent_grad

        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node._consumed = True

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise AutodiffError("division by a Tensor is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)


ArrayLike = Union[Tensor, np.ndarray, float]


def _needs(x):
    return isinstance(x, Tensor) and x.requires_grad


def _value(x):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _node(value, inputs, op, backward):
    if not any(isinstance(x, Tensor) for x in inputs):
        return value
    return Tensor._from_op(value, inputs, op, backward)


def _topological_order(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if _needs(parent) and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in items)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    av, bv = _value(a), _value(b)
    _broadcast_check("add", av, bv)

    def backward(g):
        return (_unbroadcast(g, av.shape) if _needs(a) else None,
                _unbroadcast(g, bv.shape) if _needs(b) else None)

    return _node(av + bv, (a, b), "add", backward)


# a bias is just a broadcast add over the trailing axis
bias_add = add


def sub(a, b):
    av, bv = _value(a), _value(b)
    _broadcast_check("sub", av, bv)

    def backward(g):
        return (_unbroadcast(g, av.shape) if _needs(a) else None,
                _unbroadcast(-g, bv.shape) if _needs(b) else None)

    return _node(av - bv, (a, b), "sub", backward)


def mul(a, b):
    av, bv = _value(a), _value(b)
    _broadcast_check("mul", av, bv)

    def backward(g):
        return (_unbroadcast(g * bv, av.shape) if _needs(a) else None,
                _unbroadcast(g * av, bv.shape) if _needs(b) else None)

    return _node(av * bv, (a, b), "mul", backward)


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    av, bv = _value(a), _value(b)
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError("matmul", av.shape, bv.shape)
    try:
        np.broadcast_shapes(av.shape[:-2], bv.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", av.shape, bv.shape) from None

    def backward(g):
        grad_a = grad_b = None
        if _needs(a):
            grad_a = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)
        if _needs(b):
            if bv.ndim == 2:
                grad_b = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                grad_b = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
        return grad_a, grad_b

    return _node(np.matmul(av, bv), (a, b), "matmul", backward)


# ---------------------------------------------------------------------------
# Structural ops
# ---------------------------------------------------------------------------

def concat(xs: Sequence[ArrayLike], axis=-1):
    values = [_value(x) for x in xs]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError:
        raise ShapeError("concat", *[v.shape for v in values]) from None
    splits = np.cumsum([v.shape[axis] for v in values])[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(p if _needs(x) else None for p, x in zip(parts, xs))

    return _node(out, tuple(xs), "concat", backward)


def stack(xs: Sequence[ArrayLike], axis=0):
    values = [_value(x) for x in xs]
    try:
        out = np.stack(values, axis=axis)
    except ValueError:
        raise ShapeError("stack", *[v.shape for v in values]) from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) if _needs(x) else None for i, x in enumerate(xs))

    return _node(out, tuple(xs), "stack", backward)


def getitem(x, index):
    xv = _value(x)
    out = xv[index]

    def backward(g):
        full = np.zeros_like(xv)
        if _is_basic_index(index):
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(out, (x,), "slice", backward)


def reshape(x, shape):
    xv = _value(x)
    try:
        out = xv.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", xv.shape, tuple(shape)) from None

    def backward(g):
        return (g.reshape(xv.shape),)

    return _node(out, (x,), "reshape", backward)


def transpose(x, axes):
    xv = _value(x)
    if sorted(axes) != list(range(xv.ndim)):
        raise ShapeError("transpose", xv.shape, tuple(axes))
    inverse = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inverse),)

    return _node(np.transpose(xv, axes), (x,), "transpose", backward)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    xv = _value(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape),)

    return _node(np.asarray(out), (x,), "sum", backward)


def mean(x, axis=None, keepdims=False):
    xv = _value(x)
    out = np.asarray(np.mean(xv, axis=axis, keepdims=keepdims))
    count = xv.size // max(out.size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, xv.shape),)

    return _node(out, (x,), "mean", backward)


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------

def sigmoid(x):
    s = expit(_value(x))

    def backward(g):
        return (g * s * (1.0 - s),)

    return _node(s, (x,), "sigmoid", backward)


def tanh(x):
    t = np.tanh(_value(x))

    def backward(g):
        return (g * (1.0 - t * t),)

    return _node(t, (x,), "tanh", backward)


def relu(x):
    xv = _value(x)

    def backward(g):
        return (g * (xv > 0),)

    return _node(np.maximum(xv, 0.0), (x,), "relu", backward)


def softplus(x):
    xv = _value(x)

    def backward(g):
        return (g * expit(xv),)

    return _node(np.logaddexp(0.0, xv), (x,), "softplus", backward)


def softmax(x, axis=-1):
    xv = _value(x)
    e = np.exp(xv - xv.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _node(s, (x,), "softmax", backward)


ACTIVATIONS: Dict[str, Callable] = {"tanh": tanh, "relu": relu}


# ---------------------------------------------------------------------------
# Losses (scalar outputs)
# ---------------------------------------------------------------------------

def _paired(op, pred, target):
    pv, tv = _value(pred), _value(target)
    if pv.shape != tv.shape:
        raise ShapeError(op, pv.shape, tv.shape)
    if pv.size == 0:
        raise ValidationError(f"{op}: empty input")
    return pv, tv


def mean_absolute_error(pred, target):
    pv, tv = _paired("mean_absolute_error", pred, target)
    diff = pv - tv

    def backward(g):
        s = np.sign(diff) * (g / diff.size)
        return (s if _needs(pred) else None, -s if _needs(target) else None)

    return _node(np.asarray(np.abs(diff).mean()), (pred, target), "mae", backward)


def mean_squared_error(pred, target):
    pv, tv = _paired("mean_squared_error", pred, target)
    diff = pv - tv

    def backward(g):
        s = diff * (2.0 * g / diff.size)
        return (s if _needs(pred) else None, -s if _needs(target) else None)

    return _node(np.asarray((diff * diff).mean()), (pred, target), "mse", backward)


def binary_cross_entropy_with_logits(logits, target):
    """Mean BCE of ``sigmoid(logits)`` against 0/1 targets, computed stably."""
    xv, yv = _paired("binary_cross_entropy_with_logits", logits, target)
    loss = np.maximum(xv, 0.0) - xv * yv + np.log1p(np.exp(-np.abs(xv)))

    def backward(g):
        return ((expit(xv) - yv) * (g / xv.size) if _needs(logits) else None, None)

    return _node(np.asarray(loss.mean()), (logits, target), "bce", backward)


# ---------------------------------------------------------------------------
# Parameters, optimisation, checkpoints
# ---------------------------------------------------------------------------

def parameter(value, name=None):
    """Create a leaf Tensor that collects gradients."""
    return Tensor(value, requires_grad=True, name=name)


def zero_grad(params: Mapping[str, Tensor]):
    for p in params.values():
        p.zero_grad()


def grad_norm(params: Mapping[str, Tensor]) -> float:
    return float(np.sqrt(np.sum([np.sum(p.grad * p.grad) for p in params.values()])))


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    norm = grad_norm(params)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            p.grad = p.grad * scale
    return norm


@dataclass
class AdamState:
    """Moment estimates and hyperparameters of the Adam optimiser."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState):
    """Apply one bias-corrected Adam update to ``params``."""
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ShapeError("adam_step", param.shape, grad.shape)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.data = param.data - state.learning_rate * update


class Adam:
    """Adam optimiser over a named parameter collection."""

    def __init__(self, params: Mapping[str, Tensor], learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = AdamState(learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        zero_grad(self.params)

    def step(self):
        adam_step(self.params, {name: p.grad for name, p in self.params.items()}, self.state)


def save_checkpoint(path, params: Mapping[str, ArrayLike]):
    """Write named arrays as ``name;ndim;d0,d1,...`` headers plus row-major values."""
    lines = []
    for name, value in params.items():
        if ";" in name or "\n" in name:
            raise ValidationError(f"parameter name {name!r} cannot be stored")
        array = _value(value)
        dims = ",".join(str(d) for d in array.shape)
        lines.append(f"{name};{array.ndim};{dims}")
        lines.append(",".join(repr(float(v)) for v in array.ravel()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug("Saved %d arrays to %s", len(params), path)


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"checkpoint file not found: {path}")
    lines = path.read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) % 2:
        raise DatasetError(f"{path}: truncated checkpoint (odd number of lines)")

    arrays: Dict[str, np.ndarray] = {}
    for i in range(0, len(lines), 2):
        try:
            name, ndim, dims = lines[i].split(";")
            shape: Tuple[int, ...] = tuple(int(d) for d in dims.split(",")) if dims else ()
            if len(shape) != int(ndim):
                raise ValueError("dimension count mismatch")
            values = [float(v) for v in lines[i + 1].split(",")] if lines[i + 1] else []
            arrays[name] = np.array(values, dtype=np.float64).reshape(shape)
        except ValueError as e:
            raise DatasetError(f"{path}: corrupt entry at line {i + 1}: {e}") from None
    return arrays


def gradcheck(fn: Callable[[], Tensor], params: Mapping[str, Tensor], h=1e-5) -> float:
    """Compare analytic gradients of ``fn()`` with central differences.

    Returns the worst per-parameter relative error
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``.
    """
    zero_grad(params)
    fn().backward()
    worst = 0.0
    for name, param in params.items():
        analytic = param.grad.copy()
        numeric = np.zeros_like(param.data)
        flat = param.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = float(_value(fn()))
            flat[i] = original - h
            down = float(_value(fn()))
            flat[i] = original
            numeric.flat[i] = (up - down) / (2.0 * h)
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
        error = np.abs(analytic - numeric).max(initial=0.0) / scale
        logger.debug("gradcheck %s: relative error %.3e", name, error)
        worst = max(worst, error)
    return worst
