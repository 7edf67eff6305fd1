"""
Parameterized binary floating-point formats emulated on float64.

A format F is described by its significand precision ``s`` (implicit bit
included), exponent range ``[emin, emax]`` and whether subnormals exist.
Every member of F is also a float64, so values are carried as ordinary
numpy doubles and "rounding into F" means picking one of the two members
of F that bracket a double.

All navigation functions accept scalars or arrays and return the same
shape. Scalars come back as Python floats.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Tuple, Union

import numpy as np

from .errors import ConfigError, FormatOverflowError, InvalidInput, ParameterOutOfRange

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# float64 itself: formats must be strictly coarser.
_WORKING_PRECISION = 53
_WORKING_EMIN = -1022
_WORKING_EMAX = 1023

# Largest format enumerate_values() will expand.
_MAX_ENUMERATED = 1 << 20


@dataclass(frozen=True)
class FloatFormat:
    """A binary floating-point number system.

    Attributes:
        name: Registry name or a generated label for custom formats.
        precision: Significand precision s in bits, implicit bit included.
        emin: Exponent of the smallest normalized value.
        emax: Exponent of the largest binade.
        subnormals: Whether gradual underflow values exist below 2**emin.
    """

    name: str
    precision: int
    emin: int
    emax: int
    subnormals: bool = True

    def __post_init__(self) -> None:
        if not 2 <= self.precision < _WORKING_PRECISION:
            raise ConfigError(
                f"precision must be in [2, {_WORKING_PRECISION - 1}], got {self.precision}",
                key="format",
            )
        if self.emin >= self.emax:
            raise ConfigError(
                f"emin ({self.emin}) must be smaller than emax ({self.emax})", key="format"
            )
        if self.emax > _WORKING_EMAX or self.emin - self.precision + 1 < _WORKING_EMIN - 52:
            raise ConfigError(
                f"exponent range [{self.emin}, {self.emax}] exceeds binary64", key="format"
            )

    @property
    def u(self) -> float:
        """Unit roundoff 2**-s."""
        return float(np.ldexp(1.0, -self.precision))

    @property
    def x_max(self) -> float:
        return float(np.ldexp(2.0 - np.ldexp(1.0, 1 - self.precision), self.emax))

    @property
    def x_min(self) -> float:
        """Smallest positive normalized value."""
        return float(np.ldexp(1.0, self.emin))

    @property
    def x_min_subnormal(self) -> float:
        return float(np.ldexp(1.0, self.emin - self.precision + 1))

    @property
    def smallest_positive(self) -> float:
        return self.x_min_subnormal if self.subnormals else self.x_min

    @classmethod
    def from_spec(cls, spec: Any) -> "FloatFormat":
        """Build a format from a preset name, a mapping or an (s, emin, emax[, subnormals]) tuple."""
        if isinstance(spec, FloatFormat):
            return spec
        if isinstance(spec, str):
            return get_format(spec)
        if isinstance(spec, dict):
            try:
                precision = int(spec["precision"])
                emin = int(spec["emin"])
                emax = int(spec["emax"])
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigError(f"custom format needs precision/emin/emax: {e}", key="format")
            subnormals = bool(spec.get("subnormals", True))
            name = str(spec.get("name", f"custom-p{precision}-e{emin}..{emax}"))
            return cls(name, precision, emin, emax, subnormals)
        if isinstance(spec, (tuple, list)) and len(spec) in (3, 4):
            precision, emin, emax = int(spec[0]), int(spec[1]), int(spec[2])
            subnormals = bool(spec[3]) if len(spec) == 4 else True
            return cls(f"custom-p{precision}-e{emin}..{emax}", precision, emin, emax, subnormals)
        raise ConfigError(f"cannot interpret format specification {spec!r}", key="format")

    def __str__(self) -> str:
        return self.name


# binary8 uses the E5M2 layout.
FORMATS: Dict[str, FloatFormat] = {
    "binary8": FloatFormat("binary8", 3, -14, 15),
    "bfloat16": FloatFormat("bfloat16", 8, -126, 127),
    "binary16": FloatFormat("binary16", 11, -14, 15),
    "binary32": FloatFormat("binary32", 24, -126, 127),
}


def get_format(name: str) -> FloatFormat:
    try:
        return FORMATS[name.strip().lower()]
    except KeyError:
        raise ConfigError(
            f"unknown format '{name}'; expected one of {sorted(FORMATS)}", key="format"
        )


def _as_array(x: ArrayLike) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    return arr, arr.ndim == 0


def _restore(arr: np.ndarray, scalar: bool) -> ArrayLike:
    # +0.0 folds negative zeros
    arr = arr + 0.0
    if scalar:
        return float(arr)
    return arr


def check_range(x: np.ndarray, fmt: FloatFormat) -> None:
    """Raise unless every element is finite and within [-x_max, x_max]."""
    if not np.all(np.isfinite(x)):
        raise InvalidInput("cannot round NaN or infinite values")
    if np.any(np.abs(x) > fmt.x_max):
        worst = float(np.max(np.abs(x)))
        raise FormatOverflowError(f"|x| = {worst!r} exceeds x_max = {fmt.x_max!r} of {fmt}")


def quantum(x: ArrayLike, fmt: FloatFormat) -> ArrayLike:
    """Spacing of F in the binade containing |x|.

    Below the normal range this is the subnormal spacing, or x_min when the
    format flushes (the only members there are 0 and x_min).
    """
    arr, scalar = _as_array(x)
    q = _quantum(np.abs(arr), fmt)
    return float(q) if scalar else q


def _quantum(ax: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    _, e = np.frexp(ax)
    exponent = np.maximum(e - 1, fmt.emin)
    q = np.ldexp(1.0, exponent - fmt.precision + 1)
    if not fmt.subnormals:
        q = np.where(ax < fmt.x_min, fmt.x_min, q)
    return q


def _floor(arr: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    q = _quantum(np.abs(arr), fmt)
    return np.floor(arr / q) * q


def _ceil(arr: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    q = _quantum(np.abs(arr), fmt)
    return np.ceil(arr / q) * q


def floor_fl(x: ArrayLike, fmt: FloatFormat) -> ArrayLike:
    """Largest member of F not exceeding x."""
    arr, scalar = _as_array(x)
    check_range(arr, fmt)
    return _restore(_floor(arr, fmt), scalar)


def ceil_fl(x: ArrayLike, fmt: FloatFormat) -> ArrayLike:
    """Smallest member of F not below x."""
    arr, scalar = _as_array(x)
    check_range(arr, fmt)
    return _restore(_ceil(arr, fmt), scalar)


def bracket(x: ArrayLike, fmt: FloatFormat) -> Tuple[np.ndarray, np.ndarray]:
    """Return (floor_fl(x), ceil_fl(x)) as arrays, validating once."""
    arr = np.asarray(x, dtype=np.float64)
    check_range(arr, fmt)
    return _floor(arr, fmt) + 0.0, _ceil(arr, fmt) + 0.0


def is_representable(x: ArrayLike, fmt: FloatFormat) -> Union[bool, np.ndarray]:
    arr, scalar = _as_array(x)
    finite = np.isfinite(arr)
    safe = np.where(finite, arr, 0.0)
    inside = finite & (np.abs(safe) <= fmt.x_max)
    member = inside & (_floor(safe, fmt) == safe)
    return bool(member) if scalar else member


def _require_members(arr: np.ndarray, fmt: FloatFormat) -> None:
    if not np.all(is_representable(arr, fmt)):
        raise InvalidInput(f"value is not a member of {fmt}")


def successor(xhat: ArrayLike, fmt: FloatFormat) -> ArrayLike:
    """Smallest member of F strictly greater than xhat."""
    arr, scalar = _as_array(xhat)
    _require_members(arr, fmt)
    if np.any(arr >= fmt.x_max):
        raise FormatOverflowError(f"x_max of {fmt} has no successor")
    return _restore(_ceil(np.nextafter(arr, np.inf), fmt), scalar)


def predecessor(xhat: ArrayLike, fmt: FloatFormat) -> ArrayLike:
    """Largest member of F strictly smaller than xhat."""
    arr, scalar = _as_array(xhat)
    _require_members(arr, fmt)
    if np.any(arr <= -fmt.x_max):
        raise FormatOverflowError(f"-x_max of {fmt} has no predecessor")
    return _restore(_floor(np.nextafter(arr, -np.inf), fmt), scalar)


def round_nearest_even(x: ArrayLike, fmt: FloatFormat) -> ArrayLike:
    """Round to nearest, ties to the candidate with an even last significand bit."""
    arr, scalar = _as_array(x)
    check_range(arr, fmt)
    q = _quantum(np.abs(arr), fmt)
    lo = np.floor(arr / q) * q
    hi = lo + q
    below = arr - lo
    above = hi - arr
    lo_even = np.mod(lo / q, 2.0) == 0.0
    tie_pick = np.where(lo_even, lo, hi)
    out = np.where(below < above, lo, np.where(above < below, hi, tie_pick))
    return _restore(out, scalar)


def last_bit(xhat: ArrayLike, fmt: FloatFormat) -> Union[int, np.ndarray]:
    """Least significant significand bit of members of F (0 for zero)."""
    arr, scalar = _as_array(xhat)
    _require_members(arr, fmt)
    q = _quantum(np.abs(arr), fmt)
    bits = np.mod(np.abs(arr) / q, 2.0).astype(np.int64)
    return int(bits) if scalar else bits


def ulp(x: ArrayLike, fmt: FloatFormat) -> ArrayLike:
    """Gap ceil_fl(x) - floor_fl(x) for x not in F, i.e. the binade spacing at x."""
    arr, scalar = _as_array(x)
    check_range(arr, fmt)
    q = _quantum(np.abs(arr), fmt)
    return float(q) if scalar else q


def decompose(xhat: float, fmt: FloatFormat) -> Tuple[int, int, int]:
    """Split a member of F into (sign, exponent, integral significand).

    ``xhat == sign * significand * 2**(exponent - s + 1)`` with sign in
    {-1, 0, 1}; subnormals carry exponent ``emin`` and a significand below
    ``2**(s-1)``.
    """
    arr, _ = _as_array(xhat)
    _require_members(arr, fmt)
    value = float(arr)
    if value == 0.0:
        return 0, fmt.emin, 0
    sign = 1 if value > 0 else -1
    mag = abs(value)
    _, e = np.frexp(mag)
    exponent = max(int(e) - 1, fmt.emin)
    significand = int(np.ldexp(mag, fmt.precision - 1 - exponent))
    return sign, exponent, significand


def compose(sign: int, exponent: int, significand: int, fmt: FloatFormat) -> float:
    """Inverse of decompose(); validates the result is a member of fmt."""
    if significand < 0 or significand >= (1 << fmt.precision):
        raise InvalidInput(f"significand {significand} does not fit {fmt.precision} bits")
    value = float(np.ldexp(float(significand), exponent - fmt.precision + 1))
    value = value * (1 if sign >= 0 else -1)
    if not is_representable(value, fmt):
        raise InvalidInput(f"({sign}, {exponent}, {significand}) is not a member of {fmt}")
    return value + 0.0


def enumerate_values(fmt: FloatFormat) -> np.ndarray:
    """Sorted array of every finite member of F (a single zero)."""
    binades = fmt.emax - fmt.emin + 1
    per_binade = 1 << (fmt.precision - 1)
    count = binades * per_binade + per_binade
    if count > _MAX_ENUMERATED:
        raise ParameterOutOfRange(f"{fmt} has too many members ({count}) to enumerate")
    step = np.arange(per_binade, 2 * per_binade, dtype=np.float64)
    positives = [
        np.ldexp(step, e - fmt.precision + 1) for e in range(fmt.emin, fmt.emax + 1)
    ]
    if fmt.subnormals:
        positives.insert(
            0, np.ldexp(np.arange(1, per_binade, dtype=np.float64), fmt.emin - fmt.precision + 1)
        )
    pos = np.concatenate(positives)
    return np.concatenate([-pos[::-1], [0.0], pos])
