"""Small dense-tensor engine with reverse-mode differentiation.

Every value is a float64 numpy array wrapped in :class:`Tensor`. Operations
record a closure that maps the upstream gradient to one gradient per parent;
the tape is rebuilt on every forward pass. :func:`backward` walks the tape in
reverse topological order and *overwrites* the ``grad`` of each parameter in a
:class:`ParamStore` (gradients are never accumulated across calls).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

Array = np.ndarray
BackwardFn = Callable[[Array], tuple]


class ShapeError(ValueError):
    """Incompatible shapes, axes, or element counts."""


class DomainError(ValueError):
    """Input outside an operation's mathematical domain."""


class GradientError(RuntimeError):
    """Misuse of the gradient machinery (non-scalar root, detached graph, missing grads)."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward: BackwardFn | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the functional forms below are the canonical API
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", self, other)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("add", elementwise("scale", self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return elementwise("mul", self, other)
        return elementwise("scale", self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return elementwise("scale", self, -1.0)

    def __truediv__(self, other: float):
        return elementwise("scale", self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return reduce("sum", self, axis)

    def mean(self, axis=None):
        return reduce("mean", self, axis)

    def exp(self):
        return elementwise("exp", self)

    def log(self):
        return elementwise("log", self)

    def tanh(self):
        return elementwise("tanh", self)

    def relu(self):
        return elementwise("relu", self)

    def square(self):
        return elementwise("square", self)

    def sqrt(self):
        return elementwise("sqrt", self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _result(data: Array, parents: Sequence[Tensor], fn: BackwardFn) -> Tensor:
    live = tuple(parents)
    if any(p.requires_grad for p in live):
        return Tensor(data, requires_grad=True, _parents=live, _backward=fn)
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def tensor_create(shape: Sequence[int], data: Sequence[float], requires_grad: bool = False) -> Tensor:
    """Build a tensor from a flat row-major list, validating size and finiteness."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError(f"dimensions must be positive, got {shape}")
    flat = np.asarray(data, dtype=np.float64).ravel()
    if flat.size != math.prod(shape):
        raise ShapeError(f"shape {shape} needs {math.prod(shape)} values, got {flat.size}")
    if not np.all(np.isfinite(flat)):
        raise DomainError("tensor data must be finite")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the trailing two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), back)


_UNARY = {"exp", "log", "tanh", "relu", "square", "sqrt"}
_BINARY = {"add", "sub", "mul"}


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Apply ``kind`` elementwise. Binary kinds accept a tensor or a python scalar for ``b``."""
    a = _as_tensor(a)
    if kind == "scale":
        if isinstance(b, Tensor) or b is None:
            raise TypeError("scale takes a python scalar factor")
        c = float(b)
        return _result(a.data * c, (a,), lambda g: (g * c,))

    if kind in _BINARY:
        if b is None:
            raise TypeError(f"{kind} needs a second operand")
        b = _as_tensor(b)
        try:
            shape = np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"{kind}: cannot combine shapes {a.shape} and {b.shape}") from None
        del shape
        if kind == "add":
            out = a.data + b.data
            back = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
        elif kind == "sub":
            out = a.data - b.data
            back = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
        else:
            out = a.data * b.data
            back = lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
        return _result(out, (a, b), back)

    if kind not in _UNARY:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    if b is not None:
        raise TypeError(f"{kind} is unary")

    x = a.data
    if kind == "exp":
        out = np.exp(x)
        back = lambda g: (g * out,)
    elif kind == "log":
        if np.any(x <= 0):
            raise DomainError("log requires strictly positive input")
        out = np.log(x)
        back = lambda g: (g / x,)
    elif kind == "tanh":
        out = np.tanh(x)
        back = lambda g: (g * (1.0 - out * out),)
    elif kind == "relu":
        out = np.maximum(x, 0.0)
        back = lambda g: (g * (x > 0),)
    elif kind == "square":
        out = x * x
        back = lambda g: (2.0 * g * x,)
    else:
        if np.any(x < 0):
            raise DomainError("sqrt requires non-negative input")
        out = np.sqrt(x)

        def back(g):
            # subgradient 0 at the kink so zero distances do not yield NaN
            safe = np.where(out > 0, out, 1.0)
            return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _result(out, (a,), back)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis, max-subtracted for stability."""
    a = _as_tensor(a)
    if a.ndim < 1:
        raise ShapeError("softmax needs rank >= 1")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (a,), back)


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, (int, np.integer)) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        norm.append(int(ax) % ndim)
    if len(set(norm)) != len(norm):
        raise ShapeError(f"repeated axis in {axes}")
    return tuple(sorted(norm))


def reduce(kind: str, a: Tensor, axis=None) -> Tensor:
    """Sum or mean over ``axis`` (int, tuple, or None for all axes)."""
    a = _as_tensor(a)
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {kind!r}")
    axes = _normalize_axes(axis, a.ndim)
    count = math.prod(a.shape[i] for i in axes) if axes else 1
    out = a.data.sum(axis=axes) if kind == "sum" else a.data.mean(axis=axes)
    factor = 1.0 if kind == "sum" else 1.0 / count

    def back(g):
        g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g * factor, a.shape).copy(),)

    return _result(out, (a,), back)


def conv_time(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Zero-padded "same" convolution along the frame axis.

    ``x`` is ``(..., T, N, C_in)``, ``kernels`` is ``(K, C_in, C_out)`` with odd
    ``K`` and ``bias`` is ``(C_out,)``. Output frame ``t`` mixes input frames
    ``t - (K-1)/2 .. t + (K-1)/2``; each joint is convolved independently.
    """
    x, kernels, bias = _as_tensor(x), _as_tensor(kernels), _as_tensor(bias)
    if kernels.ndim != 3:
        raise ShapeError("kernels must be (K, C_in, C_out)")
    K, cin, cout = kernels.shape
    if K % 2 == 0:
        raise ShapeError(f"kernel length must be odd, got {K}")
    if x.ndim < 3 or x.shape[-1] != cin:
        raise ShapeError(f"input {x.shape} does not end in C_in={cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias must be ({cout},), got {bias.shape}")
    half = (K - 1) // 2
    T = x.shape[-3]
    pad = [(0, 0)] * x.ndim
    pad[-3] = (half, half)
    xp = np.pad(x.data, pad)
    w = kernels.data
    out = np.broadcast_to(bias.data, x.shape[:-1] + (cout,)).copy()
    for k in range(K):
        out += xp[..., k:k + T, :, :] @ w[k]

    def back(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[..., k:k + T, :, :] += g @ w[k].T
            gx = gxp[..., half:half + T, :, :]
        if kernels.requires_grad:
            gw = np.empty_like(w)
            g2 = g.reshape(-1, cout)
            for k in range(K):
                gw[k] = xp[..., k:k + T, :, :].reshape(-1, cin).T @ g2
        if bias.requires_grad:
            gb = g.reshape(-1, cout).sum(axis=0)
        return gx, gw, gb

    return _result(out, (x, kernels, bias), back)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if -1 not in shape and math.prod(shape) != a.data.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    if axes is None or len(axes) == 0:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"{axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def take(a: Tensor, index) -> Tensor:
    """Basic/advanced indexing with a scatter-add gradient."""
    a = _as_tensor(a)
    out = np.array(a.data[index], dtype=np.float64)

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return (ga,)

    return _result(out, (a,), back)


class ParamStore:
    """Insertion-ordered name -> trainable tensor map."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def merged(self, other: "ParamStore") -> "ParamStore":
        """A store sharing the tensors of ``self`` followed by ``other``."""
        out = ParamStore()
        for store in (self, other):
            for name, t in store.items():
                if name in out:
                    raise KeyError(f"duplicate parameter name {name!r}")
                out._params[name] = t
        return out

    def num_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def snapshot(self) -> dict[str, Array]:
        return {name: t.data.copy() for name, t in self._params.items()}


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, store: ParamStore) -> None:
    """Fill ``grad`` of every parameter in ``store`` with d(root)/d(param).

    Grads are overwritten; parameters that do not influence ``root`` get zeros.
    """
    if root.data.size != 1:
        raise GradientError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise GradientError("root does not depend on any trainable tensor")
    order = _topo_order(root)
    ids = {id(t) for t in order}
    if not any(id(t) in ids for _, t in store.items()):
        raise GradientError("root is detached from every parameter in the store")

    grads: dict[int, Array] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None) if node._backward is not None else grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    for _, t in store.items():
        g = grads.get(id(t))
        t.grad = np.zeros_like(t.data) if g is None else np.array(g, dtype=np.float64).reshape(t.shape)


def _scalar(value) -> float:
    return float(value.data) if isinstance(value, Tensor) else float(value)


def finite_diff_grad(f: Callable[[ParamStore], object], store: ParamStore, h: float = 1e-5) -> dict[str, Array]:
    """Central-difference gradient of scalar ``f`` w.r.t. every parameter entry."""
    if h <= 0:
        raise ValueError("step h must be positive")
    base = _scalar(f(store))
    if _scalar(f(store)) != base:
        raise GradientError("f is not deterministic")
    out = {}
    for name, t in store.items():
        flat = t.data.reshape(-1)
        g = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(store))
            flat[i] = orig - h
            fm = _scalar(f(store))
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * h)
        out[name] = g.reshape(t.shape)
    return out


def relative_error(analytic: Array, numeric: Array, floor: float = 1e-8) -> float:
    """Norm-wise relative error ||a - n|| / max(||a||, ||n||, floor)."""
    diff = float(np.linalg.norm(np.ravel(analytic - numeric)))
    scale = max(float(np.linalg.norm(np.ravel(analytic))), float(np.linalg.norm(np.ravel(numeric))), floor)
    return diff / scale


def grad_check(f: Callable[[ParamStore], Tensor], store: ParamStore, h: float = 1e-5) -> dict[str, float]:
    """Relative error between analytic and finite-difference gradients, per parameter."""
    backward(f(store), store)
    analytic = {name: t.grad.copy() for name, t in store.items()}
    numeric = finite_diff_grad(f, store, h)
    return {name: relative_error(analytic[name], numeric[name]) for name in store}


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParamStore, **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, t in store.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adam_step(store: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update in place. Grads are left for the caller to clear."""
    if set(state.m) != set(store.names()):
        raise GradientError("Adam moments do not match the parameter store")
    missing = [name for name, t in store.items() if t.grad is None]
    if missing:
        raise GradientError(f"no gradient for {missing}")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step_count
    bc2 = 1.0 - b2 ** state.step_count
    for name, t in store.items():
        g = t.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        t.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
