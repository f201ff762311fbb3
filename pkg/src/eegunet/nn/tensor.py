"""Dense arrays with a recording tape for reverse-mode gradients.

Forward ops executed while a :class:`Tape` is active append a node holding the
output, its inputs and a closure mapping the output gradient to input
gradients. ``Tape.backward`` replays the nodes in reverse execution order.
Outside a tape nothing is recorded, which is how inference runs.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "NdArray",
    "Param",
    "Tape",
    "TapeError",
    "NonFiniteError",
    "precision",
    "default_dtype",
    "active_tape",
    "record",
    "backward",
    "zero_grads",
]


class TapeError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_state = threading.local()


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def precision(dtype="float64") -> Iterator[None]:
    """Switch the dtype used for new arrays and params (64-bit gradient checks)."""
    old = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


def active_tape() -> "Tape | None":
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


class NdArray:
    """A numeric array that may take part in gradient recording."""

    __array_priority__ = 100.0
    __slots__ = ("data", "grad", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        return f"NdArray(shape={self.shape}, dtype={self.dtype})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic sugar, routed through the differentiable ops
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

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def sum(self):
        from . import functional as F
        return F.sum_all(self)

    def mean(self):
        from . import functional as F
        return F.mean_all(self)


class Param(NdArray):
    """Learnable array with a persistent gradient slot."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        arr = np.array(data, dtype=default_dtype())
        super().__init__(arr, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(arr)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered log of differentiable ops executed inside ``with Tape():``."""

    def __init__(self):
        self.nodes: list[tuple[NdArray, tuple[NdArray, ...], BackwardFn]] = []
        self._outputs: set[int] = set()
        self.consumed = False

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "tapes"):
            _state.tapes = []
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def add(self, out: NdArray, inputs: tuple[NdArray, ...], fn: BackwardFn) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by backward; start a new forward pass")
        self.nodes.append((out, inputs, fn))
        self._outputs.add(id(out))

    def backward(self, loss: NdArray) -> None:
        if self.consumed:
            raise TapeError("backward called twice on the same tape")
        if loss.size != 1:
            raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
        if id(loss) not in self._outputs:
            raise TapeError("loss was not produced by an op recorded on this tape")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise TapeError(f"gradient shape {gi.shape} != input shape {inp.shape}")
                if isinstance(inp, Param) or id(inp) not in self._outputs:
                    # leaves keep their gradient on the object
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += gi
                else:
                    prev = grads.get(id(inp))
                    grads[id(inp)] = gi if prev is None else prev + gi
        self.nodes.clear()


def record(data: np.ndarray, inputs: Sequence[NdArray], fn: BackwardFn) -> NdArray:
    """Wrap an op result and log it on the active tape when any input needs grads."""
    tape = active_tape()
    track = tape is not None and any(i.requires_grad for i in inputs)
    out = NdArray(data, requires_grad=track)
    if track:
        tape.add(out, tuple(inputs), fn)
    return out


def backward(loss: NdArray, tape: Tape) -> None:
    tape.backward(loss)


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()
