"""
Tensor values and reverse-mode differentiation
A Tensor wraps a numpy array; differentiable operations are Function subclasses
that record themselves on the active GradTape of the current thread.
"""
import logging
import threading
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Iterator, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from protoconv.core.config import get_settings
from protoconv.core.errors import NonFiniteValue

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float64

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]

_checked: ContextVar[Optional[bool]] = ContextVar("protoconv_checked", default=None)


def is_checked() -> bool:
    """Whether tensor construction rejects NaN/Inf"""
    flag = _checked.get()
    if flag is None:
        return get_settings().checked
    return flag


@contextmanager
def checked_mode(enabled: bool = True) -> Iterator[None]:
    """Enable (or disable) finite-value checks for tensors built inside the block"""
    token = _checked.set(enabled)
    try:
        yield
    finally:
        _checked.reset(token)


class Tensor:
    """
    Dense real-valued array with an optional gradient slot

    Tensors are values: operations never mutate their inputs. `grad` is filled by
    GradTape.backward for leaves that have requires_grad set.
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[np.dtype] = None,
        name: Optional[str] = None,
    ):
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        if is_checked() and not np.all(np.isfinite(self.data)):
            raise NonFiniteValue(f"non-finite values in tensor {name or ''} of shape {self.shape}")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    # ── value accessors ──────────────────────────────────────────────────────

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same values, cut from the tape"""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def astype(self, dtype: np.dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # ── operators route through protoconv.core.ops ─────────────────────────────

    def __add__(self, other: Any) -> "Tensor":
        from protoconv.core import ops
        return ops.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        from protoconv.core import ops
        return ops.add(self, other)

    def __sub__(self, other: Any) -> "Tensor":
        from protoconv.core import ops
        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from protoconv.core import ops
        return ops.sub(as_tensor(other, like=self), self)

    def __mul__(self, other: Any) -> "Tensor":
        from protoconv.core import ops
        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        from protoconv.core import ops
        return ops.mul(self, other)

    def __neg__(self) -> "Tensor":
        from protoconv.core import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from protoconv.core import ops
        return ops.matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        from protoconv.core import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(value: Any, like: Optional[Tensor] = None) -> Tensor:
    """Wrap scalars and arrays as constant tensors (dtype follows `like`)"""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, requires_grad=False, dtype=dtype)


class _TapeEntry(NamedTuple):
    fn: "Function"
    inputs: Tuple[Tensor, ...]
    output: Tensor


class GradTape:
    """
    Ordered record of executed differentiable operations

    Use as a context manager around a forward pass, then call backward(loss).
    A tape belongs to the thread that opened it.
    """

    _local = threading.local()

    def __init__(self) -> None:
        self.entries: list[_TapeEntry] = []

    def __enter__(self) -> "GradTape":
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = []
            self._local.stack = stack
        stack.append(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        self._local.stack.pop()

    @classmethod
    def active(cls) -> Optional["GradTape"]:
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def record(self, fn: "Function", inputs: Tuple[Tensor, ...], output: Tensor) -> None:
        self.entries.append(_TapeEntry(fn, inputs, output))

    def __len__(self) -> int:
        return len(self.entries)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """
        Replay the tape in reverse from a scalar loss

        Sets `.grad` on every requires_grad leaf reached from the loss (zero for leaves
        the loss does not depend on is NOT written; see gradient()). Returns the map
        id(tensor) -> gradient for all tensors touched.
        """
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        produced = {id(e.output) for e in self.entries}

        for entry in reversed(self.entries):
            g = grads.get(id(entry.output))
            if g is None:
                continue
            input_grads = entry.fn.backward(g)
            for inp, gi in zip(entry.inputs, input_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = np.asarray(gi, dtype=inp.dtype)
                if key not in produced:
                    leaves[key] = inp

        if id(loss) not in produced and loss.requires_grad:
            leaves[id(loss)] = loss
        for key, leaf in leaves.items():
            leaf.grad = grads[key].reshape(leaf.shape)
        return grads

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of loss w.r.t. sources; zeros where the loss does not depend on them"""
        grads = self.backward(loss)
        return [
            grads[id(s)].reshape(s.shape) if id(s) in grads else np.zeros_like(s.data)
            for s in sources
        ]


class Function:
    """
    Base class for differentiable operations

    forward() receives numpy arrays, backward() receives the output gradient and
    returns one gradient (or None) per input.
    """

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: Any) -> Tensor:
        fn = cls()
        out_data = np.asarray(fn.forward(*(t.data for t in tensors), **kwargs))
        requires_grad = any(t.requires_grad for t in tensors)
        out = Tensor(out_data, requires_grad=requires_grad, dtype=out_data.dtype)
        if requires_grad:
            tape = GradTape.active()
            if tape is not None:
                tape.record(fn, tensors, out)
        return out
