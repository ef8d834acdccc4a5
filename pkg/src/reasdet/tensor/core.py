"""Dense NCHW tensor core with reverse-mode differentiation.

Tensors wrap contiguous numpy arrays (float32 by default, float64 in the
global "reference precision" mode used for gradient checks). Operations are
pure: they never mutate their inputs, they record the graph needed for
``Tensor.backward``, and they raise ``NonFiniteError`` instead of silently
producing NaN/inf.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np


class TensorError(ValueError):
    """Base class for tensor-core failures."""


class ShapeError(TensorError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(TensorError):
    """An operation produced (or received) NaN or infinity."""


_PRECISIONS = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32


def set_precision(name: str) -> None:
    """Select the global numeric mode: "float32" (default) or "float64"."""
    global _default_dtype
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _default_dtype = _PRECISIONS[name]


def get_precision() -> str:
    return "float64" if _default_dtype is np.float64 else "float32"


@contextmanager
def reference_precision() -> Iterator[None]:
    """Temporarily switch to 64-bit mode (used by finite-difference checks)."""
    previous = get_precision()
    set_precision("float64")
    try:
        yield
    finally:
        set_precision(previous)


def default_dtype() -> np.dtype:
    return np.dtype(_default_dtype)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced a non-finite value")


ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class Tensor:
    """A numpy-backed array node in a reverse-mode differentiation graph.

    Leaves are created directly (``Tensor(data, requires_grad=True)`` for
    parameters); interior nodes are created by the operations in this
    package. After ``backward()``, every node in the graph that requires a
    gradient holds it in ``.grad`` (a numpy array of the node's shape).
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        # Always copy: a tensor owns its buffer (callers may mutate theirs,
        # and grad_check perturbs leaf data in place).
        arr = np.array(data, dtype=_default_dtype, order="C")
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Optional[Callable[[np.ndarray], tuple]] = None

    @classmethod
    def _node(
        cls,
        data: np.ndarray,
        parents: tuple["Tensor", ...],
        vjp: Callable[[np.ndarray], tuple],
        op: str,
    ) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out.op = op
        # Inference-only graphs need no tape.
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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(())[()])

    def numpy(self) -> np.ndarray:
        """The underlying array (read-only view; copy before mutating)."""
        view = self.data.view()
        view.flags.writeable = False
        return view

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.op = "detach"
        out._parents = ()
        out._vjp = None
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self.op!r})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return add(self, mul(as_tensor(other), -1.0))

    def backward(self, output_grad: Optional[np.ndarray] = None) -> None:
        """Reverse-mode sweep seeding this node with ``output_grad`` (default: ones)."""
        if output_grad is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(output_grad, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise ShapeError(
                    f"output_grad shape {seed.shape} does not match output shape {self.data.shape}"
                )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        for node in topo:
            node.grad = None
        self.grad = seed
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def vjp(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._node(data, (a, b), vjp, "add")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise product with numpy broadcasting (e.g. (N,C,1,1) ⊙ (N,C,H,W))."""
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def vjp(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._node(data, (a, b), vjp, "mul")


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    data = np.maximum(x.data, 0)

    def vjp(g: np.ndarray):
        return (g * (x.data > 0),)

    return Tensor._node(data, (x,), vjp, "relu")


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    # Branch on sign to avoid overflow in exp for large |x|.
    data = np.where(
        x.data >= 0,
        1.0 / (1.0 + np.exp(-np.abs(x.data))),
        np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))),
    )

    def vjp(g: np.ndarray):
        return (g * data * (1.0 - data),)

    return Tensor._node(data, (x,), vjp, "sigmoid")


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):  # overflow is detected and raised below
        data = np.exp(x.data)

    def vjp(g: np.ndarray):
        return (g * data,)

    return Tensor._node(data, (x,), vjp, "exp")


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "exp": exp}


def activation(x: ArrayLike, kind: str) -> Tensor:
    """Elementwise nonlinearity; ``kind`` is one of relu, sigmoid, exp."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")
    return fn(x)


def softmax(x: ArrayLike, axis: int) -> Tensor:
    """Exponential normalization along ``axis``; stable under constant shifts."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g: np.ndarray):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return Tensor._node(data, (x,), vjp, "softmax")


def global_avg_pool(x: ArrayLike) -> Tensor:
    """Spatial mean of an (N,C,H,W) map, returned as (N,C,1,1)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects rank-4 input, got rank {x.ndim}")
    n, c, h, w = x.shape
    if h == 0 or w == 0:
        raise ShapeError("global_avg_pool over empty spatial extent")
    data = x.data.mean(axis=(2, 3), keepdims=True)

    def vjp(g: np.ndarray):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return Tensor._node(data, (x,), vjp, "global_avg_pool")


def batchnorm_infer(
    x: ArrayLike,
    scale: ArrayLike,
    shift: ArrayLike,
    running_mean: ArrayLike,
    running_var: ArrayLike,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel affine normalization with fixed statistics.

    y = scale * (x - mean) / sqrt(var + eps) + shift, applied along the
    channel axis of an (N,C,...) input. The running statistics are constants
    (no gradient flows into them).
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    mean = as_tensor(running_mean).data
    var = as_tensor(running_var).data
    if x.ndim < 2:
        raise ShapeError("batchnorm_infer expects at least (N,C) input")
    c = x.shape[1]
    for name, t in (("scale", scale.data), ("shift", shift.data), ("mean", mean), ("var", var)):
        if t.size != c:
            raise ShapeError(f"batchnorm {name} has {t.size} entries, expected {c} channels")
    denom = var + eps
    if np.any(denom <= 0):
        raise TensorError("batchnorm_infer requires var + eps > 0")
    param_shape = (1, c) + (1,) * (x.ndim - 2)
    inv = (1.0 / np.sqrt(denom)).reshape(param_shape)
    mean_b = mean.reshape(param_shape)
    scale_b = scale.data.reshape(param_shape)
    normalized = (x.data - mean_b) * inv
    data = scale_b * normalized + shift.data.reshape(param_shape)
    reduce_axes = (0,) + tuple(range(2, x.ndim))

    def vjp(g: np.ndarray):
        gx = g * scale_b * inv
        gscale = (g * normalized).sum(axis=reduce_axes).reshape(scale.shape)
        gshift = g.sum(axis=reduce_axes).reshape(shift.shape)
        return gx, gscale, gshift

    return Tensor._node(data, (x, scale, shift), vjp, "batchnorm_infer")


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        data = x.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}: {err}") from None

    def vjp(g: np.ndarray):
        return (g.reshape(x.shape),)

    return Tensor._node(data, (x,), vjp, "reshape")


def concat(tensors: Sequence[ArrayLike], axis: int = 1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat of zero tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    splits = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def vjp(g: np.ndarray):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return Tensor._node(data, tuple(parts), vjp, "concat")


def tensor_sum(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)
    data = np.asarray(data)

    def vjp(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        g_expanded = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(g_expanded, x.shape).copy(),)

    return Tensor._node(data, (x,), vjp, "sum")


def tensor_mean(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def pick(x: ArrayLike, index: int) -> Tensor:
    """Select one entry of a 1-D tensor as a scalar (gradient scatters back)."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"pick expects a 1-D tensor, got rank {x.ndim}")
    if not 0 <= index < x.shape[0]:
        raise ShapeError(f"pick index {index} out of range for length {x.shape[0]}")
    data = np.asarray(x.data[index])

    def vjp(g: np.ndarray):
        out = np.zeros_like(x.data)
        out[index] = g
        return (out,)

    return Tensor._node(data, (x,), vjp, "pick")
