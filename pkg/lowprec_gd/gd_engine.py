"""
Gradient descent with every step rounded into a low-precision format.

One iteration is split into three rounded steps::

    g_hat  = fl_grad(grad f(x_hat))             gradient evaluation (sigma_1)
    upd    = fl_mul(RN(t) * g_hat)              stepsize multiply   (delta_2)
    x_next = fl_sub(x_hat - upd)                subtract            (delta_3)

each with its own rounding mode. For signed-SR_eps the subtract step takes
its bias sign from g_hat, so the expected rounding error points downhill;
the multiply step uses -g_hat, which enlarges the update in expectation.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from . import softfloat
from .errors import ConfigError, MissingBiasSign, NonFiniteGradient
from .lp_arith import LPVector
from .problems import Problem
from .rounding import RN, RandomStream, RoundingMode, round_fl
from .softfloat import FloatFormat

logger = logging.getLogger(__name__)


class Scenario(enum.IntEnum):
    """Per-coordinate regime of one iteration."""

    CONVERGED = 0
    SCENARIO1 = 1  # update reaches past half a neighbouring gap
    SCENARIO2 = 2  # update within half a gap on both sides: stagnation regime


@dataclass
class GDConfig:
    stepsize: float
    max_iters: int
    fmt: FloatFormat
    mode_grad: RoundingMode = RN
    mode_mul: RoundingMode = RN
    mode_sub: RoundingMode = RN
    seed: int = 0
    run_id: int = 0
    debug_shadow: bool = False
    keep_vectors: bool = True

    def __post_init__(self) -> None:
        if not self.stepsize > 0.0:
            raise ConfigError(f"stepsize must be positive, got {self.stepsize}", key="t")
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be non-negative, got {self.max_iters}", key="iters")
        if self.mode_grad.needs_bias_sign:
            raise MissingBiasSign(
                "signed-SR_eps has no bias source inside gradient evaluation; use it for mul/sub"
            )
        if self.rounded_stepsize == 0.0:
            raise ConfigError(f"stepsize {self.stepsize} rounds to zero in {self.fmt}", key="t")

    @property
    def rounded_stepsize(self) -> float:
        return float(round_fl(self.stepsize, RN, self.fmt))

    def stream(self) -> RandomStream:
        return RandomStream(self.seed, self.run_id)


@dataclass
class GDState:
    x: LPVector
    k: int = 0


@dataclass
class IterationTrace:
    """What happened at iteration k, starting from x_hat^(k).

    ``f_value``, ``grad_norm`` and ``metrics`` describe x_hat^(k); ``tau``,
    ``update`` and ``z`` describe the step taken from it. The shadow fields
    (sigma1, delta2, sigma3, delta3, theta, exact_gradient) are only set
    with ``debug_shadow``.
    """

    k: int
    f_value: float
    grad_norm: float
    tau: float = float("nan")
    i_k: int = -1
    stagnating: bool = False
    scenario_flags: Optional[np.ndarray] = None
    gradient: Optional[np.ndarray] = None
    update: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    metrics: Dict[str, float] = field(default_factory=dict)
    exact_gradient: Optional[np.ndarray] = None
    sigma1: Optional[np.ndarray] = None
    delta2: Optional[np.ndarray] = None
    sigma3: Optional[np.ndarray] = None
    delta3: Optional[np.ndarray] = None
    theta: Optional[float] = None
    scenario2_fraction: float = float("nan")

    def compact(self) -> None:
        """Drop the per-coordinate vectors, keeping scalars."""
        for name in ("gradient", "update", "z", "exact_gradient", "sigma1", "delta2", "sigma3", "delta3"):
            setattr(self, name, None)
        self.scenario_flags = None


def tau_from_update(update: np.ndarray, z: np.ndarray, fmt: FloatFormat) -> Tuple[float, int]:
    """tau = max_i |upd_i| / 2^e_i with 2^(e_i - 1) <= |z_i| < 2^e_i.

    Below the normal range e_i is pinned to emin + 1, where the spacing stops
    shrinking.
    """
    if len(update) == 0:
        return 0.0, -1
    _, e = np.frexp(np.abs(z))
    e = np.maximum(e, fmt.emin + 1)
    ratios = np.ldexp(np.abs(update), -e)
    i_k = int(np.argmax(ratios))
    return float(ratios[i_k]), i_k


def is_stagnating(tau: float, i_k: int, x: np.ndarray, fmt: FloatFormat) -> bool:
    """tau < u/2, or tau == u/2 with an even last bit at x_hat[i_k] (RN ties stay put)."""
    half_u = 0.5 * fmt.u
    if tau < half_u:
        return True
    if tau == half_u and i_k >= 0:
        return softfloat.last_bit(x[i_k], fmt) == 0
    return False


def neighbour_gaps(x: np.ndarray, fmt: FloatFormat) -> Tuple[np.ndarray, np.ndarray]:
    """(su(x) - x, x - pr(x)) per coordinate; infinite past +-x_max."""
    up = np.full(x.shape, np.inf)
    down = np.full(x.shape, np.inf)
    has_up = x < fmt.x_max
    has_down = x > -fmt.x_max
    up[has_up] = softfloat.successor(x[has_up], fmt) - x[has_up]
    down[has_down] = x[has_down] - softfloat.predecessor(x[has_down], fmt)
    return up, down


def classify_scenario(
    state: GDState, trace: IterationTrace, config: GDConfig
) -> np.ndarray:
    """Scenario flag per coordinate.

    The realized update equals t (grad f + sigma_1) h_2, so it is compared
    directly with the gaps to su(x_hat) and pr(x_hat): Scenario1 when it
    exceeds half of either, Scenario2 otherwise. Coordinates whose exact
    gradient is zero are Converged (needs the shadow exact gradient).
    """
    if trace.update is None:
        raise ConfigError("trace has no update vector; keep_vectors was off")
    x = state.x.values
    up, down = neighbour_gaps(x, config.fmt)
    magnitude = np.abs(trace.update)
    moving = (magnitude / up > 0.5) | (magnitude / down > 0.5)
    flags = np.where(moving, Scenario.SCENARIO1, Scenario.SCENARIO2).astype(np.int8)
    if trace.exact_gradient is not None:
        flags[trace.exact_gradient == 0.0] = Scenario.CONVERGED
    return flags


def compute_tau(state: GDState, problem: Problem, config: GDConfig) -> Tuple[float, int]:
    """tau_k along the round-to-nearest path: RN(t RN(grad f(x_hat)))."""
    g_hat, _ = problem.gradient(state.x, RN)
    update = np.asarray(round_fl(config.rounded_stepsize * g_hat.values, RN, config.fmt))
    return tau_from_update(update, state.x.values - update, config.fmt)


def step(
    state: GDState, problem: Problem, config: GDConfig, rng: Optional[RandomStream] = None
) -> Tuple[GDState, IterationTrace]:
    """Advance one rounded GD iteration."""
    fmt = config.fmt
    x = state.x.values
    g_lp, _ = problem.gradient(state.x, config.mode_grad, rng)
    g = g_lp.values
    exact = problem.exact_gradient(x)
    if not np.all(np.isfinite(exact)):
        raise NonFiniteGradient(f"exact gradient of {problem.name} is not finite at k={state.k}")

    t_hat = config.rounded_stepsize
    update = np.asarray(
        round_fl(t_hat * g, config.mode_mul, fmt, rng, v=-g if config.mode_mul.needs_bias_sign else None)
    )
    z = x - update
    x_next = np.asarray(
        round_fl(z, config.mode_sub, fmt, rng, v=g if config.mode_sub.needs_bias_sign else None)
    )

    tau, i_k = tau_from_update(update, z, fmt)
    trace = IterationTrace(
        k=state.k,
        f_value=problem.objective(x),
        grad_norm=float(np.linalg.norm(exact)),
        tau=tau,
        i_k=i_k,
        stagnating=is_stagnating(tau, i_k, x, fmt),
        gradient=g,
        update=update,
        z=z,
        metrics=problem.metrics(x),
    )
    if config.debug_shadow:
        _fill_shadow(trace, problem, config, exact, x_next)
    trace.scenario_flags = classify_scenario(state, trace, config)
    if len(trace.scenario_flags):
        trace.scenario2_fraction = float(np.mean(trace.scenario_flags == Scenario.SCENARIO2))

    logger.debug(
        "k=%d f=%.6g |grad|=%.4g tau=%.4g%s",
        state.k,
        trace.f_value,
        trace.grad_norm,
        tau,
        " (stagnating)" if trace.stagnating else "",
    )
    return GDState(LPVector(x_next, fmt, check=False), state.k + 1), trace


def _fill_shadow(
    trace: IterationTrace, problem: Problem, config: GDConfig, exact: np.ndarray, x_next: np.ndarray
) -> None:
    """delta2 is taken against RN(t) g, the product the multiply step actually rounds."""
    g, update, z = trace.gradient, trace.update, trace.z
    assert g is not None and update is not None and z is not None
    exact_update = config.rounded_stepsize * g
    trace.exact_gradient = exact
    trace.sigma1 = g - exact
    with np.errstate(divide="ignore", invalid="ignore"):
        trace.delta2 = np.where(exact_update != 0.0, update / exact_update - 1.0, 0.0)
        trace.sigma3 = x_next - z
        trace.delta3 = np.where(z != 0.0, trace.sigma3 / z, 0.0)
    trace.theta = problem.objective(x_next) - problem.objective(z)


Callback = Callable[[IterationTrace, GDState], Optional[bool]]


class GradientDescent:
    """Stateful driver for one run: owns the iterate and the random stream."""

    def __init__(self, problem: Problem, config: GDConfig, rng: Optional[RandomStream] = None):
        self.problem = problem
        self.config = config
        self.rng = rng if rng is not None else config.stream()
        x0 = LPVector.quantize(problem.initial_point(), config.fmt, RN)
        self.state = GDState(x0, 0)
        self._running = False

    def step(self) -> IterationTrace:
        self.state, trace = step(self.state, self.problem, self.config, self.rng)
        return trace

    def snapshot(self) -> IterationTrace:
        """Trace row for the current iterate without stepping."""
        x = self.state.x.values
        return IterationTrace(
            k=self.state.k,
            f_value=self.problem.objective(x),
            grad_norm=float(np.linalg.norm(self.problem.exact_gradient(x))),
            metrics=self.problem.metrics(x),
        )

    def stop(self) -> None:
        self._running = False

    def run(self, callbacks: Iterable[Callback] = (), include_final: bool = False) -> List[IterationTrace]:
        """Run up to max_iters steps; a callback returning True stops early."""
        callbacks = list(callbacks)
        traces: List[IterationTrace] = []
        self._running = True
        while self._running and self.state.k < self.config.max_iters:
            trace = self.step()
            if not self.config.keep_vectors:
                trace.compact()
            traces.append(trace)
            for callback in callbacks:
                if callback(trace, self.state):
                    logger.info("Run stopped by callback at k=%d", self.state.k)
                    self._running = False
        if include_final:
            traces.append(self.snapshot())
        self._running = False
        return traces


def run(
    problem: Problem,
    config: GDConfig,
    callbacks: Iterable[Callback] = (),
    rng: Optional[RandomStream] = None,
) -> List[IterationTrace]:
    return GradientDescent(problem, config, rng).run(callbacks)
