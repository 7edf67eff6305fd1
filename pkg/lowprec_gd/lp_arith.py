"""
Vector and matrix kernels evaluated in a low-precision format.

Two accumulation styles are offered:

``sequential``
    Every multiply and every add is rounded, sums run strictly left to
    right over the inner index. This is the model the gradient error
    analysis assumes and the default.

``chop``
    The kernel is evaluated in working precision and each output element is
    rounded once, the way a MATLAB ``chop`` workflow rounds the result of
    every matrix expression.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np

from . import softfloat
from .errors import DimensionMismatch, DivisionByZero, InvalidInput
from .rounding import RN, RandomStream, RoundingMode, round_fl
from .softfloat import FloatFormat

logger = logging.getLogger(__name__)

SEQUENTIAL = "sequential"
CHOP = "chop"
ACCUMULATE_STYLES = (SEQUENTIAL, CHOP)


class LPArray:
    """Read-only array whose every element is a member of ``fmt``."""

    ndim: Optional[int] = None

    def __init__(self, values: Union[np.ndarray, list, float], fmt: FloatFormat, check: bool = True):
        arr = np.array(values, dtype=np.float64)
        if self.ndim is not None and arr.ndim != self.ndim:
            raise DimensionMismatch(
                f"{type(self).__name__} needs {self.ndim}-D data, got shape {arr.shape}"
            )
        if check and not np.all(softfloat.is_representable(arr, fmt)):
            raise InvalidInput(f"{type(self).__name__} holds values that are not members of {fmt}")
        arr = arr + 0.0
        arr.setflags(write=False)
        self.values = arr
        self.fmt = fmt

    @classmethod
    def quantize(
        cls,
        values: Union[np.ndarray, list, float],
        fmt: FloatFormat,
        mode: RoundingMode = RN,
        rng: Optional[RandomStream] = None,
    ):
        """Round working-precision data into ``fmt`` and wrap it."""
        return cls(round_fl(np.asarray(values, dtype=np.float64), mode, fmt, rng), fmt, check=False)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, index):
        return self.values[index]

    def to_numpy(self) -> np.ndarray:
        return self.values.copy()

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.values!r}, fmt={self.fmt})"


class LPVector(LPArray):
    ndim = 1


class LPMatrix(LPArray):
    ndim = 2


def _check_style(accumulate: str) -> None:
    if accumulate not in ACCUMULATE_STYLES:
        raise InvalidInput(f"accumulate must be one of {ACCUMULATE_STYLES}, got '{accumulate}'")


def _same_format(*arrays: LPArray) -> FloatFormat:
    fmt = arrays[0].fmt
    for other in arrays[1:]:
        if other.fmt != fmt:
            raise InvalidInput(f"mixed formats {fmt} and {other.fmt} in one kernel")
    return fmt


@dataclass
class Arith:
    """Kernel context: target format, rounding mode, stream and accumulation style.

    Methods take and return plain float64 arrays whose elements are members
    of ``fmt``; problems build their gradients from these.
    """

    fmt: FloatFormat
    mode: RoundingMode = RN
    rng: Optional[RandomStream] = None
    accumulate: str = SEQUENTIAL

    def __post_init__(self) -> None:
        _check_style(self.accumulate)

    def round(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(round_fl(np.asarray(x, dtype=np.float64), self.mode, self.fmt, self.rng))

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionMismatch(f"cannot multiply shapes {a.shape} and {b.shape}")
        if a.shape[1] == 0:
            return np.zeros((a.shape[0], b.shape[1]))
        if self.accumulate == CHOP:
            return self.round(a @ b)
        acc = self.round(np.outer(a[:, 0], b[0, :]))
        for j in range(1, a.shape[1]):
            acc = self.round(acc + self.round(np.outer(a[:, j], b[j, :])))
        return acc

    def matvec(self, a: np.ndarray, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise DimensionMismatch(f"matvec needs a vector, got shape {x.shape}")
        return self.matmul(a, x[:, None])[:, 0]

    def dot(self, a: np.ndarray, b: np.ndarray) -> float:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.ndim != 1 or a.shape != b.shape:
            raise DimensionMismatch(f"dot needs equal-length vectors, got {a.shape} and {b.shape}")
        return float(self.matmul(a[None, :], b[:, None])[0, 0])

    def hadamard(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a, b = _pair(a, b)
        return self.round(a * b)

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a, b = _pair(a, b)
        return self.round(a + b)

    def subtract(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a, b = _pair(a, b)
        return self.round(a - b)

    def divide(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Elementwise fl(a / b); b broadcasts against a."""
        a = np.asarray(a, dtype=np.float64)
        b = np.broadcast_to(np.asarray(b, dtype=np.float64), a.shape)
        if np.any(b == 0.0):
            raise DivisionByZero("zero divisor in low-precision kernel")
        return self.round(a / b)

    def axpy(self, alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """fl(fl(alpha * x) + y)."""
        x, y = _pair(x, y)
        return self.round(self.round(alpha * x) + y)

    def scale(self, a: np.ndarray, factor: float) -> np.ndarray:
        """fl(factor * a) with ``factor`` taken in working precision."""
        return self.round(float(factor) * np.asarray(a, dtype=np.float64))

    def reduce_sum(self, a: np.ndarray, axis: int = 0) -> np.ndarray:
        a = np.moveaxis(np.asarray(a, dtype=np.float64), axis, 0)
        if a.shape[0] == 0:
            return np.zeros(a.shape[1:])
        if self.accumulate == CHOP:
            return self.round(a.sum(axis=0))
        acc = a[0].copy()
        for j in range(1, a.shape[0]):
            acc = self.round(acc + a[j])
        return acc

    def elementwise(self, a: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """fl(fn(a)) with fn evaluated in working precision."""
        return self.round(fn(np.asarray(a, dtype=np.float64)))


def _pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def dot(
    a: LPVector,
    b: LPVector,
    mode: RoundingMode,
    rng: Optional[RandomStream] = None,
    accumulate: str = SEQUENTIAL,
) -> float:
    """Inner product, each multiply and each add rounded under ``mode``."""
    fmt = _same_format(a, b)
    return Arith(fmt, mode, rng, accumulate).dot(a.values, b.values)


def matvec(
    A: LPMatrix,
    x: LPVector,
    mode: RoundingMode,
    rng: Optional[RandomStream] = None,
    accumulate: str = SEQUENTIAL,
) -> LPVector:
    fmt = _same_format(A, x)
    return LPVector(Arith(fmt, mode, rng, accumulate).matvec(A.values, x.values), fmt, check=False)


def matmul(
    A: LPMatrix,
    B: LPMatrix,
    mode: RoundingMode,
    rng: Optional[RandomStream] = None,
    accumulate: str = SEQUENTIAL,
) -> LPMatrix:
    fmt = _same_format(A, B)
    return LPMatrix(Arith(fmt, mode, rng, accumulate).matmul(A.values, B.values), fmt, check=False)


def hadamard(
    a: LPVector, b: LPVector, mode: RoundingMode, rng: Optional[RandomStream] = None
) -> LPVector:
    fmt = _same_format(a, b)
    return LPVector(Arith(fmt, mode, rng).hadamard(a.values, b.values), fmt, check=False)


def axpy(
    alpha: float,
    x: LPVector,
    y: LPVector,
    mode: RoundingMode,
    rng: Optional[RandomStream] = None,
) -> LPVector:
    """alpha * x + y with two roundings per element; alpha must be a member of the format."""
    fmt = _same_format(x, y)
    if not softfloat.is_representable(alpha, fmt):
        raise InvalidInput(f"alpha = {alpha!r} is not a member of {fmt}")
    return LPVector(Arith(fmt, mode, rng).axpy(alpha, x.values, y.values), fmt, check=False)
