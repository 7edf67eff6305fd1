"""
Closed-form convergence bounds and thresholds for rounded gradient descent.

Evaluators return values even when a precondition fails; such cases emit a
:class:`PreconditionViolated` warning and a log line instead of raising.
Range errors on the parameters themselves raise ParameterOutOfRange.

chi, zeta and theta are not known before a run. When they are measured from
traces (``measure_chi_zeta``) the resulting curves are diagnostic, not
predictive.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ParameterOutOfRange, PreconditionViolated

logger = logging.getLogger(__name__)

Number = Union[float, np.ndarray]

SR_VARIANTS = ("sr_i", "sr_ii", "sr_eps_i", "sr_eps_ii")


def _report(message: str) -> None:
    logger.warning(message)
    warnings.warn(message, PreconditionViolated, stacklevel=3)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ParameterOutOfRange(message)


@dataclass
class BoundParams:
    """Inputs shared by the bound evaluators.

    ``theta`` holds the measured f(x_{j+1}) - f(z_{j+1}) per iteration and
    ``b`` the SR_eps bias coefficient in (0, 2 eps u].
    """

    L: float
    t: float
    u: float
    c: float = 0.0
    a: float = 0.25
    eps: float = 0.0
    n: int = 1
    chi: Optional[float] = None
    zeta: Optional[float] = None
    theta: Sequence[float] = field(default_factory=list)
    b: Optional[float] = None

    def alpha(self) -> np.ndarray:
        """alpha_j = 2 chi^2 theta_j / (t (1 - 2a) zeta^2)."""
        chi, zeta = self._chi_zeta()
        _require(0.0 < self.a < 0.5, f"a must lie in (0, 1/2), got {self.a}")
        theta = np.asarray(self.theta, dtype=np.float64)
        return 2.0 * chi**2 * theta / (self.t * (1.0 - 2.0 * self.a) * zeta**2)

    def _chi_zeta(self) -> Tuple[float, float]:
        if self.chi is None or self.zeta is None:
            raise ParameterOutOfRange("chi and zeta are required; measure them from a trace")
        _require(self.chi > 0.0, f"chi must be positive, got {self.chi}")
        _require(self.zeta > 0.0, f"zeta must be positive, got {self.zeta}")
        return self.chi, self.zeta


def max_stepsize(L: float, u: float) -> float:
    """Largest stepsize 1 / (L (1 + 2u)^2) the rounded analysis admits."""
    _require(L > 0.0, f"L must be positive, got {L}")
    return 1.0 / (L * (1.0 + 2.0 * u) ** 2)


def check_stepsize(L: float, t: float, u: float) -> bool:
    limit = max_stepsize(L, u)
    if t > limit:
        _report(f"stepsize t = {t:g} exceeds 1/(L(1+2u)^2) = {limit:g}")
        return False
    return True


def exact_rate_bound(L: float, t: float, k: Number, dist0_sq: float) -> Number:
    """2L / (4 + L t k) * ||x0 - x*||^2 for exact-arithmetic GD."""
    _require(L > 0.0 and t > 0.0, "L and t must be positive")
    if t > 1.0 / L:
        _report(f"exact rate bound needs t <= 1/L, got t = {t:g}, 1/L = {1.0 / L:g}")
    k_arr = np.asarray(k, dtype=np.float64)
    value = 2.0 * L / (4.0 + L * t * k_arr) * dist0_sq
    return float(value) if k_arr.ndim == 0 else value


def u_budget(a: float, c: float) -> float:
    """Largest unit roundoff a / (c + 4a + 4) for which rounded GD stays monotone."""
    _require(0.0 < a < 1.0, f"a must lie in (0, 1), got {a}")
    _require(c >= 0.0, f"c must be non-negative, got {c}")
    return a / (c + 4.0 * a + 4.0)


def monotone_u_limit(
    t: float, a: float, grad_prev_norm: float, grad_norm: float, z_norm: float
) -> float:
    """Upper bound on u from one step: (1 - 2a) t ||g_{k-1}||^2 / (4 ||g_k|| ||z_k||)."""
    _require(0.0 < a < 0.5, f"a must lie in (0, 1/2), got {a}")
    denom = 4.0 * grad_norm * z_norm
    if denom == 0.0:
        return math.inf
    return (1.0 - 2.0 * a) * t * grad_prev_norm**2 / denom


def rate_u_limit(
    t: float, a: float, zeta: float, chi: float, grad_norm: float, z_norm: float
) -> float:
    """Per-iteration u limit of the alpha_j rate bound: (1-2a) t zeta^2 / (4 chi^2 ||g|| ||z||)."""
    _require(0.0 < a < 0.5, f"a must lie in (0, 1/2), got {a}")
    denom = 4.0 * chi**2 * grad_norm * z_norm
    if denom == 0.0:
        return math.inf
    return (1.0 - 2.0 * a) * t * zeta**2 / denom


def gradient_error_constant(
    n: int, u: float, diagonal: bool, a_inf_norm: float = 0.0, iterate_bound: float = 0.0
) -> float:
    """Constant c in |sigma_1,i| <= c u (|grad_i| + 1) for quadratic gradients.

    Diagonal A gives c = 2. Dense A needs the iterate bound M (usually the
    max ||x||_inf over a run): c = 2 n u ||A||_inf M / (1 - 2 n u).
    """
    if diagonal:
        return 2.0
    _require(2.0 * n * u < 1.0, f"dense constant needs 2nu < 1, got {2.0 * n * u:g}")
    return 2.0 * n * u * a_inf_norm * iterate_bound / (1.0 - 2.0 * n * u)


def grad_threshold_general(n: int, c: float, u: float, a: float) -> float:
    """(1 - a)^-1 (2 + 4u + sqrt(1 - a)) sqrt(n) c u, valid for u <= u_budget(a, c)."""
    _require(0.0 < a < 1.0, f"a must lie in (0, 1), got {a}")
    if u > u_budget(a, c):
        _report(f"u = {u:g} exceeds the budget a/(c+4a+4) = {u_budget(a, c):g}")
    return (2.0 + 4.0 * u + math.sqrt(1.0 - a)) * math.sqrt(n) * c * u / (1.0 - a)


def grad_threshold_monotone(n: int, c: float, u: float, a: float) -> float:
    """a^-1 (2 + 4u + sqrt(a)) sqrt(n) c u."""
    _require(0.0 < a < 0.5, f"a must lie in (0, 1/2), got {a}")
    return (2.0 + 4.0 * u + math.sqrt(a)) * math.sqrt(n) * c * u / a


def grad_threshold_sr(n: int, c: float, u: float, a: float, condition: str = "i") -> float:
    """Gradient threshold when both rounded steps use SR.

    Condition "i" (general sigma_1) gives (2 + sqrt(a)) sqrt(n) c u / a,
    condition "ii" (E[sigma_1 grad] = 0) gives 3 sqrt(n) c u / a.
    """
    _require(0.0 < a < 1.0, f"a must lie in (0, 1), got {a}")
    if condition == "i":
        return (2.0 + math.sqrt(a)) * math.sqrt(n) * c * u / a
    if condition == "ii":
        return 3.0 * math.sqrt(n) * c * u / a
    raise ParameterOutOfRange(f"condition must be 'i' or 'ii', got '{condition}'")


def grad_threshold_sr_eps(
    n: int, c: float, u: float, a: float, eps: float, condition: str = "i"
) -> float:
    """SR_eps counterpart of grad_threshold_sr: condition "i" adds 4 eps u to the numerator."""
    _require(0.0 <= eps < 1.0, f"eps must lie in [0, 1), got {eps}")
    if condition == "i":
        _require(0.0 < a < 1.0, f"a must lie in (0, 1), got {a}")
        return (2.0 + math.sqrt(a) + 4.0 * eps * u) * math.sqrt(n) * c * u / a
    return grad_threshold_sr(n, c, u, a, condition)


def scenario2_threshold(
    n: int,
    c: float,
    u: float,
    t: float,
    mean_sq_norm: float,
    condition: str = "i",
    eps: float = 0.0,
    sample_mean: bool = True,
) -> float:
    """Expected gradient norm above which stagnating GD still decreases f on average.

    ``mean_sq_norm`` is E||x||^2; with ``sample_mean`` it came from a finite
    ensemble and the threshold is logged as approximate. ``eps = 0`` is
    the SR case; ``eps > 0`` the signed-SR_eps subtract step, whose extra
    factor is sqrt(1 + 2 eps).
    """
    _require(c * u < 1.0, f"needs c u < 1, got {c * u:g}")
    _require(t > 0.0 and mean_sq_norm >= 0.0, "t must be positive and E||x||^2 non-negative")
    _require(0.0 <= eps < 1.0, f"eps must lie in [0, 1), got {eps}")
    if sample_mean:
        logger.warning("Scenario-2 threshold uses a sample mean for E||x||^2; it is approximate")
    growth = 1.0 + 2.0 * eps
    root_norm = math.sqrt(mean_sq_norm)
    if condition == "i":
        return c * u * math.sqrt(n) / (1.0 - c * u) + (u / t) * math.sqrt(
            growth / (1.0 - c * u)
        ) * root_norm
    if condition == "ii":
        return (u / t) * math.sqrt(growth) * root_norm
    raise ParameterOutOfRange(f"condition must be 'i' or 'ii', got '{condition}'")


def rounded_rate_bound(params: BoundParams, k: int) -> float:
    """2 L chi^2 / (4 + L t (1 - 2a) sum_{j<k} (1 - alpha_j))."""
    chi, _ = params._chi_zeta()
    alpha = params.alpha()
    _require(0 <= k <= len(alpha), f"need theta for {k} iterations, have {len(alpha)}")
    if params.u > u_budget(params.a, params.c):
        _report(f"u = {params.u:g} exceeds a/(c+4a+4) = {u_budget(params.a, params.c):g}")
    denom = 4.0 + params.L * params.t * (1.0 - 2.0 * params.a) * float(np.sum(1.0 - alpha[:k]))
    _require(denom > 0.0, f"bound denominator is {denom:g}; theta is too large for this bound")
    return 2.0 * params.L * chi**2 / denom


def sr_rate_bound(params: BoundParams, k: Number, variant: str = "sr_i") -> Number:
    """Expected-gap bounds for SR and SR_eps subtract steps.

    sr_i:       2 L chi^2 / (4 + L t k (1 - 2a)),           a < 1/2
    sr_ii:      2 L chi^2 / (4 + L t k (1 - 2a^2)),         a < sqrt(2)/2
    sr_eps_i:   2 L chi^2 / (4 + L t k (1 + 2b - 2a)),      b in (0, 2 eps u]
    sr_eps_ii:  2 L chi^2 / (4 + L t k (1 + 2b - 2a^2))
    """
    if params.chi is None:
        raise ParameterOutOfRange("chi is required; measure it from a trace")
    a = params.a
    if variant in ("sr_i", "sr_eps_i"):
        _require(0.0 < a < 0.5, f"{variant} needs a in (0, 1/2), got {a}")
        factor = 1.0 - 2.0 * a
    elif variant in ("sr_ii", "sr_eps_ii"):
        _require(0.0 < a < math.sqrt(2.0) / 2.0, f"{variant} needs a in (0, sqrt(2)/2), got {a}")
        factor = 1.0 - 2.0 * a**2
    else:
        raise ParameterOutOfRange(f"unknown variant '{variant}', expected one of {SR_VARIANTS}")
    if variant.startswith("sr_eps"):
        b = params.b if params.b is not None else 2.0 * params.eps * params.u
        _require(0.0 < b <= 2.0 * params.eps * params.u, f"b must lie in (0, 2 eps u], got {b}")
        factor += 2.0 * b
    k_arr = np.asarray(k, dtype=np.float64)
    value = 2.0 * params.L * params.chi**2 / (4.0 + params.L * params.t * k_arr * factor)
    return float(value) if k_arr.ndim == 0 else value


def measure_chi_zeta(
    distances: Sequence[float], f_values: Sequence[float], f_star: float = 0.0
) -> Tuple[float, float]:
    """chi = max ||x_j - x*||, zeta = min f(x_j) - f*, taken over a trace."""
    dist = np.asarray(distances, dtype=np.float64)
    gaps = np.asarray(f_values, dtype=np.float64) - f_star
    if dist.size == 0 or gaps.size == 0:
        raise ParameterOutOfRange("cannot measure chi/zeta from an empty trace")
    return float(dist.max()), float(gaps.min())


def bound_columns(
    ks: Sequence[int],
    params: BoundParams,
    dist0_sq: float,
) -> Dict[str, np.ndarray]:
    """Bound curves over iteration indices ``ks`` for the aggregate CSV.

    The exact-arithmetic curve is always produced; the SR curves need chi,
    and the alpha curve also needs zeta and theta.
    """
    k_arr = np.asarray(ks, dtype=np.float64)
    columns: Dict[str, np.ndarray] = {
        "bound_exact": np.asarray(exact_rate_bound(params.L, params.t, k_arr, dist0_sq))
    }
    if params.chi is None:
        return columns
    if 0.0 < params.a < 0.5:
        columns["bound_sr_i"] = np.asarray(sr_rate_bound(params, k_arr, "sr_i"))
        if params.eps > 0.0:
            columns["bound_sr_eps_i"] = np.asarray(sr_rate_bound(params, k_arr, "sr_eps_i"))
    if 0.0 < params.a < math.sqrt(2.0) / 2.0:
        columns["bound_sr_ii"] = np.asarray(sr_rate_bound(params, k_arr, "sr_ii"))
    if params.zeta is not None and params.zeta > 0.0 and len(params.theta) and 0.0 < params.a < 0.5:
        values = []
        for k in ks:
            try:
                values.append(rounded_rate_bound(params, min(int(k), len(params.theta))))
            except ParameterOutOfRange:
                values.append(math.nan)
        columns["bound_theta"] = np.asarray(values)
    return columns
