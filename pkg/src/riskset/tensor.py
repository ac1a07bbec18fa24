"""Dense tensors with reverse-mode gradient accumulation on numpy arrays.

Every operation records its parents and a vector-Jacobian closure on the
output node, so calling :func:`backward_pass` on a scalar result yields
gradients for any reachable leaf. The op set is deliberately small: the
elementwise, affine and reduction operations the recurrent classifiers
need, nothing more. All outputs are checked for NaN/Inf; a non-finite
value raises :class:`NonFiniteError` instead of propagating silently.

64-bit precision is the default. 32-bit is accepted for training speed,
but gradient verification refuses it (finite differences are unreliable
in single precision).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPES = {"float64": np.float64, "float32": np.float32}


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by '{op}'")


class Tensor:
    """A dense array plus the tape bookkeeping needed for reverse mode.

    ``data`` is row-major and owned; treat it as immutable once the tensor
    participates in a graph (parameter leaves are the one exception, and
    only between forward passes). ``grad`` is the accumulation slot used
    for parameter leaves; intermediate nodes never populate it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        # always copy: leaves own their storage, so external aliases of the
        # source array can never mutate graph state behind the tape's back
        data = np.array(values, dtype=dtype)
        if data.dtype not in (np.float64, np.float32):
            data = data.astype(np.float64)
        _check_finite(data, "tensor")
        self.data = data
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...], vjp, op: str) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        if out.requires_grad:
            out._parents = parents
            out._vjp = vjp
        else:
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar -------------------------------------------------------

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
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return narrow(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def backward(self, grad_output: np.ndarray | None = None) -> None:
        """Accumulate gradients of this node into every reachable leaf's
        ``grad`` slot. Convenience wrapper over :func:`backward_pass` for
        single-threaded use."""
        grads = _run_backward(self, grad_output)
        for node, g in grads.items():
            if node._vjp is None and node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g


def _ensure(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else np.float64
    return Tensor(np.asarray(value, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise and affine ops -----------------------------------------------


def add(a, b) -> Tensor:
    a = _ensure(a, b if isinstance(b, Tensor) else None)
    b = _ensure(b, a)
    out = a.data + b.data

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return Tensor._from_op(out, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a = _ensure(a, b if isinstance(b, Tensor) else None)
    b = _ensure(b, a)
    out = a.data - b.data

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return Tensor._from_op(out, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a = _ensure(a, b if isinstance(b, Tensor) else None)
    b = _ensure(b, a)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return Tensor._from_op(out, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a = _ensure(a, b if isinstance(b, Tensor) else None)
    b = _ensure(b, a)
    with np.errstate(all="ignore"):
        out = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            if b.requires_grad
            else None,
        )

    return Tensor._from_op(out, (a, b), vjp, "div")


def neg(a: Tensor) -> Tensor:
    a = _ensure(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    """Matrix product following numpy semantics for 1-D/2-D operands and
    stacked 3-D operands with equal batch dimensions."""
    a = _ensure(a, b if isinstance(b, Tensor) else None)
    b = _ensure(b, a)
    na, nb = a.data.ndim, b.data.ndim
    out = a.data @ b.data

    if na == 1 and nb == 1:
        def vjp(g):
            return (
                g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None,
            )
    elif na == 1 and nb == 2:
        def vjp(g):
            return (
                b.data @ g if a.requires_grad else None,
                np.outer(a.data, g) if b.requires_grad else None,
            )
    elif na == 2 and nb == 1:
        def vjp(g):
            return (
                np.outer(g, b.data) if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None,
            )
    elif na == 2 and nb == 2:
        def vjp(g):
            return (
                g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None,
            )
    elif na == 3 and nb == 3 and a.data.shape[0] == b.data.shape[0]:
        def vjp(g):
            return (
                g @ b.data.swapaxes(-1, -2) if a.requires_grad else None,
                a.data.swapaxes(-1, -2) @ g if b.requires_grad else None,
            )
    else:
        raise ValueError(f"unsupported matmul operand ranks {na} and {nb}")

    return Tensor._from_op(out, (a, b), vjp, "matmul")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tensor_sigmoid(a: Tensor) -> Tensor:
    a = _ensure(a)
    out = _stable_sigmoid(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tensor_tanh(a: Tensor) -> Tensor:
    a = _ensure(a)
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a: Tensor) -> Tensor:
    a = _ensure(a)
    with np.errstate(all="ignore"):
        out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    a = _ensure(a)
    with np.errstate(all="ignore"):
        out = np.log(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    a = _ensure(a)
    with np.errstate(all="ignore"):
        out = np.sqrt(a.data)

    def vjp(g):
        return (g / (2.0 * out),)

    return Tensor._from_op(out, (a,), vjp, "sqrt")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes through the interior only."""
    a = _ensure(a)
    out = np.clip(a.data, lo, hi)
    inside = ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype)
    return Tensor._from_op(out, (a,), lambda g: (g * inside,), "clip")


# -- shape ops ------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = _ensure(a)
    orig = a.data.shape
    out = a.data.reshape(shape)
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(orig),), "reshape")


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    a = _ensure(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return Tensor._from_op(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def narrow(a: Tensor, key) -> Tensor:
    """Basic slicing (no fancy indexing); gradient scatters into a zero buffer."""
    a = _ensure(a)
    out = a.data[key]

    def vjp(g):
        buf = np.zeros_like(a.data)
        buf[key] = g
        return (buf,)

    return Tensor._from_op(np.ascontiguousarray(out), (a,), vjp, "narrow")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_ensure(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                pieces.append(np.ascontiguousarray(g[tuple(idx)]))
            else:
                pieces.append(None)
        return tuple(pieces)

    return Tensor._from_op(out, tuple(tensors), vjp, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_ensure(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        slabs = np.moveaxis(g, axis, 0)
        return tuple(
            np.ascontiguousarray(slabs[i]) if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return Tensor._from_op(out, tuple(tensors), vjp, "stack")


def take_rows(a: Tensor, indices) -> Tensor:
    """Row gather; the gradient scatter-adds duplicate indices."""
    a = _ensure(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = a.data[idx]

    def vjp(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        return (buf,)

    return Tensor._from_op(out, (a,), vjp, "take_rows")


# -- reductions -----------------------------------------------------------------


def tensor_sum(a: Tensor, axis: int | None = None) -> Tensor:
    a = _ensure(a)
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.full_like(a.data, 1.0) * g,)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return Tensor._from_op(out, (a,), vjp, "sum")


def tensor_mean(a: Tensor, axis: int | None = None) -> Tensor:
    a = _ensure(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.full_like(a.data, g / n),)
        return (np.broadcast_to(np.expand_dims(g / n, axis), a.data.shape).copy(),)

    return Tensor._from_op(out, (a,), vjp, "mean")


def tensor_softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max-subtraction for overflow safety."""
    a = _ensure(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return Tensor._from_op(out, (a,), vjp, "softmax")


# -- scalar / vector convenience functions ---------------------------------------


def sigmoid(x: float) -> float:
    """Logistic function on a plain float, numerically stable at both tails."""
    if not math.isfinite(x):
        raise ValueError("sigmoid requires a finite input")
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def softmax(energies) -> np.ndarray:
    """Probability vector from a 1-D array of finite energies.

    Max-subtraction guards against overflow, and the normalizer is an
    exactly rounded sum, so permuting the input permutes the output
    bit-for-bit.
    """
    v = np.asarray(energies, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("softmax requires a nonempty 1-D input")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax requires finite energies")
    e = np.exp(v - v.max())
    return e / math.fsum(e)


# -- reverse pass -----------------------------------------------------------------


def _run_backward(root: Tensor, grad_output: np.ndarray | None) -> dict[Tensor, np.ndarray]:
    if not root.requires_grad:
        return {}
    if grad_output is None:
        grad_output = np.ones_like(root.data)

    # Iterative post-order: deep scan graphs overflow the recursion limit.
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(root): np.asarray(grad_output, dtype=root.data.dtype)}
    by_id: dict[int, Tensor] = {id(root): root}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        for parent, contribution in zip(node._parents, node._vjp(g)):
            if contribution is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + contribution
            else:
                grads[pid] = contribution
                by_id[pid] = parent
    return {by_id[i]: g for i, g in grads.items()}


def backward_pass(root: Tensor, wrt: Sequence[Tensor], grad_output=None) -> list[np.ndarray]:
    """Gradients of ``root`` with respect to each tensor in ``wrt``.

    Returns freshly allocated arrays aligned with ``wrt`` (zeros for
    unreachable leaves) and leaves all ``grad`` slots untouched, so
    concurrent passes over a shared parameter set do not race.
    """
    grads = _run_backward(root, grad_output)
    return [grads.get(t, np.zeros_like(t.data)).copy() for t in wrt]


# -- parameter bookkeeping ---------------------------------------------------------


class ParamStore:
    """Ordered collection of named trainable leaves plus gradient slots.

    The iteration order is the registration order and is the canonical
    order for serialization, optimizer state and gradient reductions.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._grad_masks: dict[str, np.ndarray] = {}

    def add(self, name: str, values, dtype=np.float64, grad_mask=None) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = values if isinstance(values, Tensor) else Tensor(values, requires_grad=True, dtype=dtype)
        if not t.requires_grad:
            raise ValueError(f"parameter '{name}' must require gradients")
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        self._params[name] = t
        if grad_mask is not None:
            self._grad_masks[name] = np.asarray(grad_mask, dtype=t.data.dtype)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def count(self, prefix: str = "") -> int:
        return sum(t.size for n, t in self._params.items() if n.startswith(prefix))

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def accumulate(self, grads: Sequence[np.ndarray], scale: float = 1.0) -> None:
        """Add per-parameter gradient arrays (aligned with :meth:`tensors`)
        into the gradient slots; the single synchronized reduction point."""
        if len(grads) != len(self._params):
            raise ValueError("gradient list does not match parameter count")
        for (name, t), g in zip(self._params.items(), grads):
            if g.shape != t.data.shape:
                raise ValueError(f"gradient shape mismatch for '{name}'")
            mask = self._grad_masks.get(name)
            t.grad += (g * mask if mask is not None else g) * scale

    def gradients(self) -> dict[str, np.ndarray]:
        return {n: t.grad for n, t in self._params.items()}

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter block '{name}'")
            src = np.asarray(arrays[name], dtype=t.data.dtype)
            if src.shape != t.data.shape:
                raise ValueError(f"shape mismatch for parameter block '{name}'")
            t.data[...] = src


def uniform_init(rng: np.random.Generator, shape, scale: float, dtype=np.float64) -> np.ndarray:
    """Uniform draw in [-scale, +scale]; the conventional stable choice here."""
    return rng.uniform(-scale, scale, size=shape).astype(dtype)
