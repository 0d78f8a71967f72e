"""Dense float64 tensors with a reverse-mode differentiation tape.

Operations record onto the innermost active :class:`Tape`.  Gradient rules
are themselves written with tensor operations, so a backward pass run with
``create_graph=True`` is recorded too and can be differentiated again (the
gradient penalty needs this).

Broadcasting is limited to scalar-with-tensor; anything else goes through
the explicit :func:`broadcast_to` / :func:`sum` pair.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


_state = threading.local()


def _tape_stack() -> list["Tape"]:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
        _state.paused = 0
    return _state.tapes


def _recording_tape() -> "Tape | None":
    stack = _tape_stack()
    if not stack or _state.paused:
        return None
    return stack[-1]


class _Paused:
    def __enter__(self):
        _tape_stack()
        _state.paused += 1

    def __exit__(self, *exc):
        _state.paused -= 1


def no_record():
    """Context manager that suspends recording on the current thread."""
    return _Paused()


class _Fresh:
    def __init__(self):
        self.tape = Tape()

    def __enter__(self):
        _tape_stack()
        self._paused, _state.paused = _state.paused, 0
        return self.tape.__enter__()

    def __exit__(self, *exc):
        self.tape.__exit__(*exc)
        _state.paused = self._paused


def fresh_tape():
    """A new tape that records even inside ``no_record`` (for nested gradients)."""
    return _Fresh()


def recording() -> bool:
    return _recording_tape() is not None


@dataclass(eq=False)
class Node:
    index: int
    op: str
    inputs: tuple
    output: "Tensor"
    rule: Callable


class Tape:
    """Ordered record of operations; use as a context manager."""

    _ids = 0

    def __init__(self):
        Tape._ids += 1
        self.id = Tape._ids
        self.nodes: list[Node] = []
        self.released = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()

    def record(self, op, inputs, output, rule):
        node = Node(len(self.nodes), op, inputs, output, rule)
        self.nodes.append(node)
        output.node = node
        output.tape = self
        output.requires_grad = True

    def release(self):
        """Drop the recorded graph.

        The graph is full of reference cycles (closures, node <-> output), so
        without this its buffers wait for the cyclic collector.  Tensors
        recorded here cannot be differentiated afterwards.
        """
        for node in self.nodes:
            node.inputs, node.output, node.rule = (), None, None
        self.nodes = []
        self.released = True


class Tensor:
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: Node | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tape_id(self):
        if self.node is None:
            return None
        return (self.tape.id, self.node.index)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, data: np.ndarray, inputs: tuple, rule: Callable) -> Tensor:
    out = Tensor(data)
    tape = _recording_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(op, inputs, out, rule)
    return out


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (reshape(g, src),))


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return _emit("transpose", x.data.T.copy(), (x,), lambda g: (transpose(g),))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    src = x.shape
    data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = reshape(g, np.expand_dims(np.empty(data.shape), axis).shape)
        elif axis is None:
            g = reshape(g, (1,) * len(src))
        return (broadcast_to(g, src),)

    return _emit("sum", np.asarray(data), (x,), rule)


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Explicit expansion of size-1 axes (same rank, or a scalar)."""
    x = as_tensor(x)
    shape = tuple(shape)
    src = x.shape
    if len(src) not in (0, len(shape)):
        raise ShapeError(f"cannot broadcast {src} to {shape}")
    axes = tuple(range(len(shape))) if len(src) == 0 else tuple(
        i for i, (a, b) in enumerate(zip(src, shape)) if a != b)
    for i in axes:
        if len(src) and src[i] != 1:
            raise ShapeError(f"cannot broadcast {src} to {shape}")

    def rule(g):
        if len(src) == 0:
            return (sum(g),)
        return (sum(g, axis=axes, keepdims=True),)

    return _emit("broadcast", np.broadcast_to(x.data, shape).copy(), (x,), rule)


def mean(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return sum(x, axis=axis) * (1.0 / n)


def take(x: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing."""
    x = as_tensor(x)
    src = x.shape
    return _emit("take", x.data[key].copy(), (x,), lambda g: (_place(g, key, src),))


def _place(g: Tensor, key, shape) -> Tensor:
    buf = np.zeros(shape)
    buf[key] = g.data
    return _emit("place", buf, (g,), lambda h: (take(h, key),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    ax = axis % data.ndim
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])

    def rule(g):
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            key = tuple([slice(None)] * ax + [slice(int(lo), int(hi))])
            grads.append(take(g, key))
        return tuple(grads)

    return _emit("concat", data, tuple(parts), rule)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _binary_shapes(op, a: Tensor, b: Tensor):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unbroadcast(g: Tensor, like: Tensor) -> Tensor:
    if g.shape == like.shape:
        return g
    return reshape(sum(g), like.shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("add", a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a), _unbroadcast(neg(g), b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(_scale_like(g, b), a), _unbroadcast(_scale_like(g, a), b)))


def _scale_like(g: Tensor, other: Tensor) -> Tensor:
    # g * other where either may be the scalar side
    return mul(g, other)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("div", a, b)
    out_data = a.data / b.data

    def rule(g):
        ga = div(g, b)
        gb = neg(div(mul(g, a), mul(b, b)))
        return (_unbroadcast(ga, a), _unbroadcast(gb, b))

    return _emit("div", out_data, (a, b), rule)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _emit("neg", -x.data, (x,), lambda g: (neg(g),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _emit("square", x.data * x.data, (x,), lambda g: (mul(g, x) * 2.0,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = (x.data > 0).astype(np.float64)  # gradient at exactly 0 is 0
    return _emit("relu", x.data * mask, (x,), lambda g: (mul(g, Tensor(mask)),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = _emit("sigmoid", y, (x,), None)
    if out.node is not None:
        out.node.rule = lambda g: (mul(g, mul(out, 1.0 - out)),)
    return out


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = _emit("exp", np.exp(x.data), (x,), None)
    if out.node is not None:
        out.node.rule = lambda g: (mul(g, out),)
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive value")
    return _emit("log", np.log(x.data), (x,), lambda g: (div(g, x),))


def sqrt(x) -> Tensor:
    """Square root; the gradient at 0 is taken as 0."""
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt of negative value")
    y = np.sqrt(x.data)
    zero = (y == 0).astype(np.float64)
    out = _emit("sqrt", y, (x,), None)
    if out.node is not None:
        out.node.rule = lambda g: (div(mul(g, Tensor(1.0 - zero) * 0.5), add(out, Tensor(zero))),)
    return out


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = ((x.data >= lo) & (x.data <= hi)).astype(np.float64)
    return _emit("clip", np.clip(x.data, lo, hi), (x,), lambda g: (mul(g, Tensor(inside)),))


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _emit("softmax", y, (x,), None)
    if out.node is not None:
        def rule(g):
            inner = sum(mul(g, out), axis=-1, keepdims=True)
            return (mul(out, sub(g, broadcast_to(inner, out.shape))),)
        out.node.rule = rule
    return out


def elementwise(kind: str, *args) -> Tensor:
    unary = {"relu": relu, "sigmoid": sigmoid, "exp": exp, "log": log,
             "square": square, "sqrt": sqrt, "neg": neg}
    binary = {"add": add, "sub": sub, "mul": mul, "div": div}
    if kind in unary:
        if len(args) != 1:
            raise TypeError(f"{kind} takes one argument")
        return unary[kind](*args)
    if kind in binary:
        if len(args) != 2:
            raise TypeError(f"{kind} takes two arguments")
        return binary[kind](*args)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# linear algebra and point-set layers
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _emit("matmul", a.data @ b.data, (a, b),
                 lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)))


def shared_pointwise_linear(x, w, b) -> Tensor:
    """Apply the same affine map ``x_i @ w + b`` to every row of ``x``.

    ``x`` may carry leading batch axes; the last axis is the channel axis.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"pointwise linear: x {x.shape}, w {w.shape}, b {b.shape}")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, w.shape[0])) if x.data.ndim != 2 else x
    rows = flat.shape[0]
    y = add(matmul(flat, w), broadcast_to(reshape(b, (1, w.shape[1])), (rows, w.shape[1])))
    return y if x.data.ndim == 2 else reshape(y, lead + (w.shape[1],))


def reduce_max_points(x) -> Tensor:
    """Max over the point axis (second to last); output drops that axis.

    The gradient goes to a single row per channel, the lowest index on ties.
    """
    x = as_tensor(x)
    if x.data.ndim < 2 or x.shape[-2] == 0:
        raise ShapeError(f"reduce_max_points needs a non-empty point axis, got {x.shape}")
    arg = np.argmax(x.data, axis=-2)  # first occurrence
    mask = np.zeros_like(x.data)
    np.put_along_axis(mask, np.expand_dims(arg, -2), 1.0, axis=-2)
    data = np.take_along_axis(x.data, np.expand_dims(arg, -2), axis=-2).squeeze(-2)
    kshape = x.shape[:-2] + (1, x.shape[-1])

    def rule(g):
        return (mul(broadcast_to(reshape(g, kshape), x.shape), Tensor(mask)),)

    return _emit("reduce_max_points", data, (x,), rule)


def function(op: str, inputs: Sequence[Tensor], value: float | np.ndarray,
             grads: Sequence[np.ndarray | None]) -> Tensor:
    """Wrap an externally evaluated scalar with precomputed input gradients.

    Used for losses whose value and gradient come from a solver (EMD,
    Chamfer); differentiable once.
    """
    inputs = tuple(as_tensor(t) for t in inputs)

    def rule(g):
        return tuple(None if gr is None else mul(g, Tensor(gr)) for gr in grads)

    return _emit(op, np.asarray(value, dtype=np.float64), inputs, rule)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _accumulate(store: dict, t: Tensor, g: Tensor, create_graph: bool):
    key = id(t)
    if key in store:
        prev = store[key][1]
        store[key] = (t, add(prev, g) if create_graph else Tensor(prev.data + g.data))
    else:
        store[key] = (t, g)


def _propagate(loss: Tensor, create_graph: bool, keep: set[int]) -> dict:
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    pending: dict = {}
    kept: dict = {}
    seed = Tensor(np.ones(loss.shape))
    if loss.node is None:
        if loss.requires_grad:
            kept[id(loss)] = (loss, seed)
        return kept
    if loss.tape.released:
        raise ValueError("the tape holding this loss has been released")
    pending[id(loss)] = (loss, seed)
    nodes = loss.tape.nodes[: loss.node.index + 1]
    ctx = _NullCtx() if create_graph else no_record()
    with ctx:
        for node in reversed(nodes):
            entry = pending.pop(id(node.output), None)
            if entry is None:
                continue
            if id(node.output) in keep:
                kept[id(node.output)] = entry
            in_grads = node.rule(entry[1])
            for inp, g in zip(node.inputs, in_grads):
                if g is None or not inp.requires_grad:
                    continue
                _accumulate(kept if inp.node is None else pending, inp, g, create_graph)
    return kept


class _NullCtx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    for t, g in _propagate(loss, False, set()).values():
        if t.node is not None:
            continue
        t.grad = g.data.copy() if t.grad is None else t.grad + g.data


def grad(loss: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of ``loss`` w.r.t. ``inputs`` without touching ``.grad``.

    With ``create_graph`` the returned tensors are on the tape and can be
    differentiated again.
    """
    keep = {id(t) for t in inputs}
    kept = _propagate(loss, create_graph, keep)
    return [kept[id(t)][1] if id(t) in kept else Tensor(np.zeros(t.shape)) for t in inputs]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    alpha: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **hyper) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **hyper)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              block: str = "params") -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update on flat arrays; returns new copies."""
    if params.shape != grads.shape or params.size != state.m.size:
        raise ShapeError(f"adam: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError(f"non-finite gradient in {block}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    mhat = m / (1.0 - state.beta1 ** t)
    vhat = v / (1.0 - state.beta2 ** t)
    new = params - state.alpha * mhat / (np.sqrt(vhat) + state.eps)
    return new, AdamState(m, v, t, state.alpha, state.beta1, state.beta2, state.eps)


class Adam:
    """Adam over a named set of parameter tensors, driven by their ``.grad``."""

    def __init__(self, params: Mapping[str, Tensor], alpha=1e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        size = int(np.sum([p.size for p in self.params.values()])) if self.params else 0
        self.state = AdamState.zeros(size, alpha=alpha, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def _flat(self, attr) -> np.ndarray:
        parts = []
        for p in self.params.values():
            a = getattr(p, attr)
            parts.append(np.zeros(p.size) if a is None else np.asarray(a).reshape(-1))
        return np.concatenate(parts) if parts else np.zeros(0)

    def step(self):
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient in {name}")
        flat, self.state = adam_step(self._flat("data"), self._flat("grad"), self.state)
        offset = 0
        for p in self.params.values():
            p.data = flat[offset: offset + p.size].reshape(p.shape).copy()
            offset += p.size


def parameters(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
