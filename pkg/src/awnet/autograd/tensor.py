"""Dense tensor with tape-based reverse-mode differentiation.

Every differentiable op builds its output through :func:`make_result`, which
records the parents and a backward closure. ``Tensor.backward`` walks the
recorded graph in reverse topological order and accumulates gradients into
``.grad`` of leaf tensors (and of any tensor that called ``retain_grad``).
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

DTYPES = (np.float32, np.float64)

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_retain")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            # ndarrays keep a supported float dtype; everything else defaults to f32
            is_float_array = isinstance(data, np.ndarray) and data.dtype in DTYPES
            dtype = data.dtype if is_float_array else np.float32
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.dtype not in DTYPES:
            raise TypeError(f"unsupported dtype {arr.dtype}; expected float32 or float64")
        if not np.isfinite(arr).all():
            raise FloatingPointError("tensor data contains NaN or Inf")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None
        self._op = "leaf"
        self._retain = False

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._op = "leaf"
        t._retain = False
        return t

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data, dtype=dtype, requires_grad=self.requires_grad)

    def retain_grad(self) -> "Tensor":
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag}, op={self._op})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar (ops live in functional) ---------------------------
    def __add__(self, other):
        from . import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F

        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F

        return F.div(self, other)

    def __neg__(self):
        from . import functional as F

        return F.mul(self, -1.0)

    def sum(self):
        from . import functional as F

        return F.sum(self)

    def mean(self):
        from . import functional as F

        return F.mean(self)

    def reshape(self, *shape):
        from . import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    # -- reverse mode -----------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        Gradients accumulate across calls; reset with ``zero_grad``.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
            if grad.shape != self.shape:
                raise ValueError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad; no graph was recorded")

        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): grad}
        for node in order:
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf or node._retain:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
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
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: BackwardFn,
    op: str,
) -> Tensor:
    """Wrap an op's forward result, recording the graph edge when needed."""
    if not np.isfinite(data).all():
        raise FloatingPointError(f"{op} produced non-finite values")
    out = Tensor._wrap(data)
    out._op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


class Parameter(Tensor):
    """A trainable leaf tensor. ``name`` is assigned by the owning module."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype.name})"
