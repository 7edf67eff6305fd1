"""
Rounding schemes onto a FloatFormat.

Deterministic modes (RN, RD, RU) delegate to softfloat. The stochastic
modes (SR, SR_eps, signed-SR_eps) pick floor_fl(x) with probability p and
ceil_fl(x) otherwise, drawing one uniform number per element from an
explicit RandomStream.
"""

import enum
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from . import softfloat
from .errors import (
    ConfigError,
    DivisionByZero,
    InvalidInput,
    MissingBiasSign,
    UnsupportedMode,
)
from .softfloat import ArrayLike, FloatFormat

logger = logging.getLogger(__name__)


class Kind(enum.Enum):
    NEAREST_EVEN = "rn"
    DOWN = "rd"
    UP = "ru"
    SR = "sr"
    SR_EPS = "sr_eps"
    SIGNED_SR_EPS = "ssr_eps"


_STOCHASTIC = (Kind.SR, Kind.SR_EPS, Kind.SIGNED_SR_EPS)
_BIASED = (Kind.SR_EPS, Kind.SIGNED_SR_EPS)


@dataclass(frozen=True)
class RoundingMode:
    """A rounding scheme plus its epsilon for the biased stochastic kinds."""

    kind: Kind
    epsilon: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind in _BIASED:
            if self.epsilon is None:
                raise InvalidInput(f"{self.kind.value} requires epsilon")
            if not 0.0 < self.epsilon < 1.0:
                raise InvalidInput(
                    f"epsilon must lie in (0, 1), got {self.epsilon}; use 'sr' for the unbiased limit"
                )
        elif self.epsilon is not None:
            raise InvalidInput(f"{self.kind.value} takes no epsilon")

    @property
    def is_stochastic(self) -> bool:
        return self.kind in _STOCHASTIC

    @property
    def needs_bias_sign(self) -> bool:
        return self.kind is Kind.SIGNED_SR_EPS

    def __str__(self) -> str:
        if self.epsilon is None:
            return self.kind.value
        return f"{self.kind.value}:{self.epsilon:g}"


RN = RoundingMode(Kind.NEAREST_EVEN)
RD = RoundingMode(Kind.DOWN)
RU = RoundingMode(Kind.UP)
SR = RoundingMode(Kind.SR)


def sr_eps(epsilon: float) -> RoundingMode:
    return RoundingMode(Kind.SR_EPS, epsilon)


def signed_sr_eps(epsilon: float) -> RoundingMode:
    return RoundingMode(Kind.SIGNED_SR_EPS, epsilon)


def parse_mode(text: str, default_eps: Optional[float] = None) -> RoundingMode:
    """Parse "rn", "rd", "ru", "sr", "sr_eps:0.25" or "ssr_eps:0.25".

    A bare "sr_eps"/"ssr_eps" takes ``default_eps``.
    """
    if isinstance(text, RoundingMode):
        return text
    name, _, param = str(text).strip().lower().partition(":")
    try:
        kind = Kind(name)
    except ValueError:
        raise ConfigError(
            f"unknown rounding mode '{text}'; expected one of {[k.value for k in Kind]}",
            key="mode",
        )
    epsilon: Optional[float] = None
    if param:
        try:
            epsilon = float(param)
        except ValueError:
            raise ConfigError(f"bad epsilon in mode '{text}'", key="mode")
    elif kind in _BIASED:
        epsilon = default_eps
        if epsilon is None:
            raise ConfigError(f"mode '{text}' needs an epsilon, e.g. '{name}:0.1'", key="mode")
    try:
        return RoundingMode(kind, epsilon)
    except InvalidInput as e:
        raise ConfigError(str(e), key="mode")


class RandomStream:
    """Deterministic uniform source keyed by (seed, stream_id).

    Backed by the counter-based Philox bit generator, so the draw sequence
    depends only on the key, not on the platform or on other streams.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise InvalidInput("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        sequence = np.random.SeedSequence([self.seed, self.stream_id])
        self._generator = np.random.Generator(np.random.Philox(sequence))
        self.draws = 0

    def uniform(self, shape: Union[int, Tuple[int, ...]] = ()) -> np.ndarray:
        """Uniform draws in [0, 1)."""
        out = self._generator.random(shape)
        self.draws += int(np.size(out))
        return out

    def normal(self, shape: Union[int, Tuple[int, ...]], scale: float = 1.0) -> np.ndarray:
        return self._generator.normal(0.0, scale, shape)

    def choice(self, n: int, size: int) -> np.ndarray:
        return self._generator.choice(n, size=size, replace=False)

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id}, draws={self.draws})"


def _restore(arr: np.ndarray, scalar: bool) -> ArrayLike:
    arr = arr + 0.0
    return float(arr) if scalar else arr


def _phi(eta: np.ndarray) -> np.ndarray:
    return np.clip(eta, 0.0, 1.0)


def _p0(arr: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    gap = hi - lo
    safe_gap = np.where(gap == 0.0, 1.0, gap)
    return np.where(gap == 0.0, 1.0, 1.0 - (arr - lo) / safe_gap)


def p0(x: ArrayLike, fmt: FloatFormat) -> ArrayLike:
    """Probability that SR rounds x down to floor_fl(x); 1 on members of F."""
    arr = np.asarray(x, dtype=np.float64)
    lo, hi = softfloat.bracket(arr, fmt)
    return _restore(_p0(arr, lo, hi), arr.ndim == 0)


def p_eps(x: ArrayLike, eps: float, fmt: FloatFormat) -> ArrayLike:
    """Round-down probability of SR_eps: clamp(p0(x) - sign(x) eps)."""
    _check_eps(eps)
    arr = np.asarray(x, dtype=np.float64)
    lo, hi = softfloat.bracket(arr, fmt)
    p = np.where(lo == hi, 1.0, _phi(_p0(arr, lo, hi) - np.sign(arr) * eps))
    return _restore(p, arr.ndim == 0)


def p_hat_eps(x: ArrayLike, eps: float, v: ArrayLike, fmt: FloatFormat) -> ArrayLike:
    """Round-down probability of signed-SR_eps: clamp(p0(x) + sign(v) eps)."""
    _check_eps(eps)
    arr = np.asarray(x, dtype=np.float64)
    sv = np.broadcast_to(np.sign(np.asarray(v, dtype=np.float64)), arr.shape)
    lo, hi = softfloat.bracket(arr, fmt)
    p = np.where(lo == hi, 1.0, _phi(_p0(arr, lo, hi) + sv * eps))
    return _restore(p, arr.ndim == 0)


def _check_eps(eps: float) -> None:
    if not 0.0 < eps < 1.0:
        raise InvalidInput(f"epsilon must lie in (0, 1), got {eps}")


def round_fl(
    x: ArrayLike,
    mode: RoundingMode,
    fmt: FloatFormat,
    rng: Optional[RandomStream] = None,
    v: Optional[ArrayLike] = None,
) -> ArrayLike:
    """Round x into fmt under ``mode``.

    Stochastic modes work on |x|: the magnitude is rounded down with
    probability p and the sign reapplied. For signed-SR_eps the shift is
    sign(v) * sign(x) * eps, which makes the expected error carry the sign
    of -v. Exactly one uniform is consumed per element, members included,
    so a stream's position depends only on how many values were rounded.

    Args:
        x: Scalar or array in working precision.
        mode: Rounding scheme.
        fmt: Target format.
        rng: Required for stochastic modes.
        v: Bias sign source, required for signed-SR_eps and broadcast to x.

    Returns:
        Members of fmt with the shape of x.

    Raises:
        MissingBiasSign: signed-SR_eps without ``v``.
        FormatOverflowError: |x| > x_max.
    """
    kind = mode.kind
    if kind is Kind.NEAREST_EVEN:
        return softfloat.round_nearest_even(x, fmt)
    if kind is Kind.DOWN:
        return softfloat.floor_fl(x, fmt)
    if kind is Kind.UP:
        return softfloat.ceil_fl(x, fmt)

    if mode.needs_bias_sign and v is None:
        raise MissingBiasSign("signed-SR_eps needs the bias source v")
    if rng is None:
        raise InvalidInput(f"stochastic mode {mode} needs a RandomStream")

    arr = np.asarray(x, dtype=np.float64)
    mag = np.abs(arr)
    lo, hi = softfloat.bracket(mag, fmt)
    p = _p0(mag, lo, hi)
    if kind is Kind.SR_EPS:
        p = _phi(p - mode.epsilon)
    elif kind is Kind.SIGNED_SR_EPS:
        sv = np.broadcast_to(np.sign(np.asarray(v, dtype=np.float64)), arr.shape)
        p = _phi(p + sv * np.sign(arr) * mode.epsilon)
    p = np.where(lo == hi, 1.0, p)

    # xi in (0, 1] so that p == 1 always rounds down and p == 0 always up.
    xi = 1.0 - rng.uniform(arr.shape)
    out = np.sign(arr) * np.where(xi <= p, lo, hi)
    return _restore(out, arr.ndim == 0)


def expected_abs_error(
    x: ArrayLike, mode: RoundingMode, fmt: FloatFormat, v: Optional[ArrayLike] = None
) -> ArrayLike:
    """Closed-form E[round_fl(x) - x] for the stochastic modes.

    SR_eps keys on eta = p0(x) - sign(x) eps:
        eta > 1       -> floor_fl(x) - x
        0 <= eta <= 1 -> sign(x) eps gap
        eta < 0       -> ceil_fl(x) - x
    signed-SR_eps uses eta = p0(x) + sign(v) eps with middle branch
    -sign(v) eps gap.
    """
    if not mode.is_stochastic:
        raise UnsupportedMode(f"{mode} is deterministic; use round_fl(x) - x")
    arr = np.asarray(x, dtype=np.float64)
    lo, hi = softfloat.bracket(arr, fmt)
    if mode.kind is Kind.SR:
        return _restore(np.zeros_like(arr), arr.ndim == 0)
    if mode.needs_bias_sign and v is None:
        raise MissingBiasSign("signed-SR_eps needs the bias source v")

    eps = float(mode.epsilon)  # type: ignore[arg-type]
    gap = hi - lo
    base = _p0(arr, lo, hi)
    if mode.kind is Kind.SR_EPS:
        shift = -np.sign(arr) * eps
    else:
        shift = np.broadcast_to(np.sign(np.asarray(v, dtype=np.float64)), arr.shape) * eps
    eta = base + shift
    middle = -shift * gap
    err = np.where(eta > 1.0, lo - arr, np.where(eta < 0.0, hi - arr, middle))
    err = np.where(gap == 0.0, 0.0, err)
    return _restore(err, arr.ndim == 0)


_OPS = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
}


def rounded_op(
    a: ArrayLike,
    b: ArrayLike,
    op: str,
    mode: RoundingMode,
    fmt: FloatFormat,
    rng: Optional[RandomStream] = None,
    v: Optional[ArrayLike] = None,
) -> ArrayLike:
    """round_fl(a op b) with the exact result taken in working precision.

    Products of members of formats with s <= 26 are exact in binary64.
    Quotients and widely separated sums are not, but 53 >= 2s + 2 makes the
    double rounding innocuous for the deterministic modes, and the stochastic
    probabilities move by at most one binary64 ulp.
    """
    try:
        func = _OPS[op]
    except KeyError:
        raise InvalidInput(f"unsupported operation '{op}'")
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    if not (np.all(softfloat.is_representable(a_arr, fmt)) and np.all(softfloat.is_representable(b_arr, fmt))):
        raise InvalidInput(f"operands of rounded_op must be members of {fmt}")
    if op == "/" and np.any(b_arr == 0.0):
        raise DivisionByZero("division by zero in rounded_op")
    return round_fl(func(a_arr, b_arr), mode, fmt, rng, v)
