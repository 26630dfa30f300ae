"""
Dense float64 arrays and the tape that replays their adjoints.
"""
import logging
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..errors import ShapeError, TapeError

logger = logging.getLogger(__name__)

Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class DArray:
    """
    Row-major float64 array with an optional gradient buffer.

    Args:
        data: Anything ``numpy.asarray`` accepts.
        requires_grad: Whether the tape should propagate adjoints into this array.
        name: Optional label, set for parameters.
    """

    __slots__ = ('data', 'grad', 'requires_grad', 'name')

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"DArray extents must be positive, got {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> 'DArray':
        """Adopt an op result without copying it."""
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(arr, dtype=np.float64)
        out.grad = None
        out.requires_grad = requires_grad
        out.name = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match array shape {self.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ''
        return f"DArray(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # operator sugar, resolved lazily to keep ops importable on its own
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, DArray):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


class TapeRecord(NamedTuple):
    op: str
    inputs: Tuple[DArray, ...]
    output: DArray
    backward: Backward


class Tape:
    """
    Ordered record of executed ops.

    Ops record themselves onto the innermost active tape when at least one
    input requires a gradient. ``backward`` replays adjoints in exact reverse
    execution order and accumulates into the ``grad`` buffers of leaf arrays.
    """

    _active: List['Tape'] = []

    def __init__(self):
        self.records: List[TapeRecord] = []
        self._consumed = False

    def __enter__(self) -> 'Tape':
        Tape._active.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape._active.remove(self)
        return False

    @classmethod
    def current(cls) -> Optional['Tape']:
        return cls._active[-1] if cls._active else None

    def record(self, op: str, inputs: Sequence[DArray], output: DArray, backward: Backward) -> None:
        if self._consumed:
            raise TapeError("cannot record onto a tape whose backward pass already ran; call reset()")
        self.records.append(TapeRecord(op, tuple(inputs), output, backward))

    def reset(self) -> None:
        self.records = []
        self._consumed = False

    def backward(self, loss: DArray, seed: Optional[np.ndarray] = None) -> None:
        if self._consumed:
            raise TapeError("backward already ran on this tape; call reset() before replaying")
        if seed is None:
            if loss.size != 1:
                raise ShapeError(f"backward from a non-scalar of shape {loss.shape} needs an explicit seed")
            seed = np.ones_like(loss.data)
        elif seed.shape != loss.shape:
            raise ShapeError(f"seed shape {seed.shape} does not match loss shape {loss.shape}")
        self._consumed = True

        grads: Dict[int, np.ndarray] = {id(loss): np.array(seed, dtype=np.float64)}
        arrays: Dict[int, DArray] = {id(loss): loss}
        produced = set()
        for rec in reversed(self.records):
            produced.add(id(rec.output))
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            input_grads = rec.backward(g)
            for inp, ig in zip(rec.inputs, input_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                arrays[key] = inp
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
        for key, g in grads.items():
            if key not in produced:
                arrays[key].accumulate_grad(g)
        logger.debug(f"Replayed {len(self.records)} ops, {len(grads)} leaf gradients")

    def first_nonfinite(self) -> Optional[Tuple[int, str]]:
        """Position and name of the first recorded op whose output is not finite."""
        for i, rec in enumerate(self.records):
            if not np.all(np.isfinite(rec.output.data)):
                return i, rec.op
        return None
