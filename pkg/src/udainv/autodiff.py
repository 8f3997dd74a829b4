"""Reverse-mode automatic differentiation over dense float64 tensors.

A small define-by-run engine: operations compute eagerly on numpy arrays
and, while a :class:`Tape` is active, record themselves so that
``Tape.backward`` can run the chain rule in reverse. Without an active
tape the same functions work as plain (non-recording) numpy math.

Everything is float64 on purpose: it makes central-finite-difference
verification of every gradient decisive at desk scale.
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

Array = np.ndarray


class ShapeMismatch(ValueError):
    """Operand shapes violate a primitive's rule."""


class DomainError(ValueError):
    """Operand values outside a primitive's domain (e.g. log of x <= 0)."""


class TapeError(RuntimeError):
    """Misuse of the recording / backward machinery."""


_TLS = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_TLS, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array participating in differentiation.

    ``grad`` is populated by ``Tape.backward`` for every tensor the loss
    reaches; leaves that took part in recorded operations but are not
    reachable from the loss get an all-zero gradient.
    """

    __slots__ = ("values", "grad", "_op", "_parents", "_backward")

    def __init__(self, values) -> None:
        self.values: Array = np.asarray(values, dtype=np.float64)
        self.grad: Array | None = None
        self._op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array, Callable], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def is_leaf(self) -> bool:
        return self._op is None

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, op={self._op or 'leaf'})"

    # Elementwise arithmetic as operators; everything else is a module function.
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


class Tape:
    """Records operations in execution order for a single backward pass.

    Entering the context pushes the tape onto a thread-local stack; each
    recorded node stores its inputs and the saved forward values its
    backward rule needs. Creation order is topological by construction,
    so one reverse sweep visits every entry exactly once.
    """

    def __init__(self) -> None:
        self._nodes: list[Tensor] = []
        self._leaves: dict[int, Tensor] = {}
        self._consumed = False

    def __enter__(self) -> "Tape":
        stack = getattr(_TLS, "stack", None)
        if stack is None:
            stack = _TLS.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TLS.stack.pop()
        return False

    def backward(self, loss: Tensor) -> None:
        """Accumulate reverse-mode gradients of ``loss`` into ``.grad``.

        Every leaf that participated in a recorded operation receives a
        gradient (zero when unreachable from the loss). A tape can run
        backward only once; rebuild the graph for a new pass.
        """
        if self._consumed:
            raise TapeError("backward already ran on this tape; rebuild the graph")
        if loss.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        self._consumed = True

        grads: dict[int, Array] = {id(loss): np.ones_like(loss.values)}

        def accumulate(t: Tensor, g: Array) -> None:
            prev = grads.get(id(t))
            grads[id(t)] = g if prev is None else prev + g

        for node in reversed(self._nodes):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            node._backward(g, accumulate)

        for node in self._nodes:
            node.grad = grads.get(id(node))
        for leaf in self._leaves.values():
            g = grads.get(id(leaf))
            leaf.grad = np.zeros_like(leaf.values) if g is None else g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(values: Array, op: str, parents: tuple[Tensor, ...],
            backward: Callable[[Array, Callable], None]) -> Tensor:
    out = Tensor(values)
    tape = _active_tape()
    if tape is not None:
        out._op = op
        out._parents = parents
        out._backward = backward
        tape._nodes.append(out)
        for p in parents:
            if p.is_leaf():
                tape._leaves[id(p)] = p
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g, acc):
        acc(a, _unbroadcast(g, a.shape))
        acc(b, _unbroadcast(g, b.shape))

    return _record(a.values + b.values, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g, acc):
        acc(a, _unbroadcast(g, a.shape))
        acc(b, _unbroadcast(-g, b.shape))

    return _record(a.values - b.values, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g, acc):
        acc(a, _unbroadcast(g * b.values, a.shape))
        acc(b, _unbroadcast(g * a.values, b.shape))

    return _record(a.values * b.values, "mul", (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a, b)
    if np.any(b.values == 0.0):
        raise DomainError("div: zero divisor")

    def backward(g, acc):
        acc(a, _unbroadcast(g / b.values, a.shape))
        acc(b, _unbroadcast(-g * a.values / (b.values * b.values), b.shape))

    return _record(a.values / b.values, "div", (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} are not conformable")

    def backward(g, acc):
        acc(a, g @ b.values.T)
        acc(b, a.values.T @ g)

    return _record(a.values @ b.values, "matmul", (a, b), backward)


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out_values = np.exp(x.values)

    def backward(g, acc):
        acc(x, g * out_values)

    return _record(out_values, "exp", (x,), backward)


def log(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.values <= 0.0):
        bad = float(np.min(x.values))
        raise DomainError(f"log: non-positive value {bad}")

    def backward(g, acc):
        acc(x, g / x.values)

    return _record(np.log(x.values), "log", (x,), backward)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out_values = np.tanh(x.values)

    def backward(g, acc):
        acc(x, g * (1.0 - out_values * out_values))

    return _record(out_values, "tanh", (x,), backward)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    v = x.values
    out_values = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                          np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def backward(g, acc):
        acc(x, g * out_values * (1.0 - out_values))

    return _record(out_values, "sigmoid", (x,), backward)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    positive = x.values > 0

    def backward(g, acc):
        acc(x, g * np.where(positive, 1.0, slope))

    return _record(np.where(positive, x.values, slope * x.values),
                   "leaky_relu", (x,), backward)


def square(x) -> Tensor:
    x = _as_tensor(x)

    def backward(g, acc):
        acc(x, g * 2.0 * x.values)

    return _record(x.values * x.values, "square", (x,), backward)


def absv(x) -> Tensor:
    """Absolute value with subgradient 0 at the origin."""
    x = _as_tensor(x)

    def backward(g, acc):
        acc(x, g * np.sign(x.values))

    return _record(np.abs(x.values), "abs", (x,), backward)


def _spread(g: Array, shape: tuple[int, ...], axis: int | None, keepdims: bool) -> Array:
    if axis is None:
        return np.full(shape, float(g), dtype=np.float64) if np.ndim(g) == 0 \
            else np.full(shape, g.reshape(()), dtype=np.float64)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.ascontiguousarray(np.broadcast_to(g, shape))


def adsum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)

    def backward(g, acc):
        acc(x, _spread(g, x.shape, axis, keepdims))

    return _record(np.sum(x.values, axis=axis, keepdims=keepdims),
                   "sum", (x,), backward)


def mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeMismatch("mean: reduction over empty axis")

    def backward(g, acc):
        acc(x, _spread(g, x.shape, axis, keepdims) / count)

    return _record(np.mean(x.values, axis=axis, keepdims=keepdims),
                   "mean", (x,), backward)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(p) for p in parts]
    if not tensors:
        raise ShapeMismatch("concat: no operands")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g, acc):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            acc(t, piece)

    return _record(np.concatenate([t.values for t in tensors], axis=axis),
                   "concat", tuple(tensors), backward)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    try:
        values = x.values.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {x.shape} as {shape}") from None

    def backward(g, acc):
        acc(x, g.reshape(x.shape))

    return _record(values, "reshape", (x,), backward)


def clamp(x, lo: float, hi: float) -> Tensor:
    x = _as_tensor(x)
    inside = (x.values >= lo) & (x.values <= hi)

    def backward(g, acc):
        acc(x, g * inside)

    return _record(np.clip(x.values, lo, hi), "clamp", (x,), backward)


# -- Adam ---------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam moments for one parameter list."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    step: int
    m: list[Array]
    v: list[Array]


def adam_init(params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                     m=[np.zeros_like(p.values) for p in params],
                     v=[np.zeros_like(p.values) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence[Array], state: AdamState) -> None:
    """One Adam update, in place on ``params`` and ``state``."""
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeMismatch(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moments")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.values.shape:
            raise ShapeMismatch(f"adam_step: grad {g.shape} vs param {p.values.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.values -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# -- Finite-difference verification -------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, step: float,
               coords: Sequence[int] | None = None) -> float:
    """Max relative error between reverse-mode and central differences.

    ``f`` must be scalar-valued and built from recorded primitives.
    ``coords`` restricts the finite-difference probe to the given flat
    indices (all coordinates when None); the reverse-mode gradient is
    always taken over the full point.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    with Tape() as tape:
        out = f(point)
        if out.size != 1:
            raise TapeError("grad_check needs a scalar-valued function")
        if not np.isfinite(out.values).all():
            raise DomainError("grad_check: non-finite function value")
        tape.backward(out)
    analytic = point.grad.reshape(-1).copy()

    flat = point.values.reshape(-1)
    indices = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in indices:
        central = _central_difference(lambda arr: float(f(Tensor(arr)).values),
                                      point.values, i, step)
        worst = max(worst, _relative_error(analytic[i], central))
    return worst


def grad_check_params(f: Callable[[], Tensor], params: Sequence[Tensor], step: float,
                      max_coords: int | None = None, seed: int = 0) -> float:
    """Finite-difference check of a closure's gradient w.r.t. ``params``.

    Coordinates are perturbed in place and the closure re-evaluated, so
    ``f`` must be deterministic. When ``max_coords`` is given, that many
    coordinates are sampled (seeded) across all parameters; large nets
    would otherwise need one forward pass per weight.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    with Tape() as tape:
        out = f()
        if out.size != 1:
            raise TapeError("grad_check_params needs a scalar-valued function")
        if not np.isfinite(out.values).all():
            raise DomainError("grad_check_params: non-finite function value")
        tape.backward(out)
    # A parameter the closure never touched has a zero gradient.
    analytic = [np.zeros(p.size) if p.grad is None else p.grad.reshape(-1).copy()
                for p in params]

    universe = [(pi, i) for pi, p in enumerate(params) for i in range(p.size)]
    if max_coords is not None and max_coords < len(universe):
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(universe), size=max_coords, replace=False)
        universe = [universe[int(k)] for k in chosen]

    worst = 0.0
    for pi, i in universe:
        flat = params[pi].values.reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f().values)
        flat[i] = orig - step
        fm = float(f().values)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError("grad_check_params: non-finite probe value")
        central = (fp - fm) / (2.0 * step)
        worst = max(worst, _relative_error(analytic[pi][i], central))
    return worst


def _central_difference(f_arr: Callable[[Array], float], values: Array,
                        index: int, step: float) -> float:
    flat = values.reshape(-1)
    plus = flat.copy()
    plus[index] += step
    minus = flat.copy()
    minus[index] -= step
    fp = f_arr(plus.reshape(values.shape))
    fm = f_arr(minus.reshape(values.shape))
    if not (np.isfinite(fp) and np.isfinite(fm)):
        raise DomainError("grad_check: non-finite probe value")
    return (fp - fm) / (2.0 * step)


def _relative_error(analytic: float, central: float) -> float:
    return abs(analytic - central) / max(1e-12, abs(central))
