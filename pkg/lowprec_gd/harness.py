"""
Experiment orchestration: build a problem from an ExperimentConfig, run a
seeded ensemble of GD runs, aggregate them and write CSV files.

Run ``r`` draws from the stream keyed by (seed, r), so results do not
depend on how runs are scheduled across workers.
"""

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import bounds
from .config import ExperimentConfig
from .errors import ConfigError, LengthMismatch, LowPrecisionError, ParameterOutOfRange
from .gd_engine import GDConfig, GradientDescent, IterationTrace
from .lp_arith import CHOP
from .mnist import Dataset, load_mnist
from .problems import (
    MLRProblem,
    Problem,
    QuadraticProblem,
    init_nn,
    quadratic_setting,
    stagnation_example,
)
from .rounding import SR, RandomStream, expected_abs_error, round_fl, signed_sr_eps, sr_eps

logger = logging.getLogger(__name__)

DEFAULT_DIMENSION = 1000
FULL_TRAIN = 60000
FULL_TEST = 10000
NN_DIGITS = (3, 8)

BASE_COLUMNS = (
    "k",
    "f_mean",
    "f_var",
    "test_error_mean",
    "test_error_var",
    "grad_norm_mean",
    "tau_mean",
    "stagnation_fraction",
    "rel_error_mean",
)


@dataclass
class RunResult:
    run: int
    traces: List[IterationTrace]

    @property
    def final(self) -> Dict[str, float]:
        last = self.traces[-1] if self.traces else None
        if last is None:
            return {}
        return {"k": last.k, "f": last.f_value, **last.metrics}


@dataclass
class EnsembleResult:
    """Per-iteration mean and population variance of each traced quantity."""

    columns: Dict[str, np.ndarray]
    runs: List[RunResult] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.columns.get("k", []))

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def final_metrics(self) -> List[Dict[str, float]]:
        return [r.final for r in self.runs]


def _matrix(traces: Sequence[Sequence[IterationTrace]], getter: Any) -> np.ndarray:
    return np.array([[getter(t) for t in run] for run in traces], dtype=np.float64)


def aggregate(traces: Sequence[Sequence[IterationTrace]]) -> EnsembleResult:
    """Pointwise mean and population variance (divide by N) across runs.

    Raises:
        LengthMismatch: The runs have different lengths.
    """
    if not traces:
        raise LengthMismatch("nothing to aggregate")
    lengths = {len(run) for run in traces}
    if len(lengths) != 1:
        raise LengthMismatch(f"traces have different lengths: {sorted(lengths)}")

    columns: Dict[str, np.ndarray] = {"k": np.array([t.k for t in traces[0]], dtype=np.int64)}
    f = _matrix(traces, lambda t: t.f_value)
    columns["f_mean"] = f.mean(axis=0)
    columns["f_var"] = f.var(axis=0)

    metric_names: List[str] = []
    for t in traces[0]:
        for name in t.metrics:
            if name not in metric_names:
                metric_names.append(name)
    for name in metric_names:
        values = _matrix(traces, lambda t, n=name: t.metrics.get(n, math.nan))
        columns[f"{name}_mean"] = values.mean(axis=0)
        if name == "test_error":
            columns["test_error_var"] = values.var(axis=0)

    columns["grad_norm_mean"] = _matrix(traces, lambda t: t.grad_norm).mean(axis=0)
    columns["tau_mean"] = _matrix(traces, lambda t: t.tau).mean(axis=0)
    stagnating = _matrix(traces, lambda t: 1.0 if t.stagnating else 0.0)
    stepped = ~np.isnan(_matrix(traces, lambda t: t.tau))
    columns["stagnation_fraction"] = np.where(
        stepped.any(axis=0), stagnating.sum(axis=0) / np.maximum(stepped.sum(axis=0), 1), math.nan
    )
    columns["scenario2_fraction_mean"] = _matrix(traces, lambda t: t.scenario2_fraction).mean(axis=0)
    if any(t.theta is not None for t in traces[0]):
        theta = _matrix(traces, lambda t: math.nan if t.theta is None else t.theta)
        columns["theta_mean"] = theta.mean(axis=0)
    return EnsembleResult(columns)


def _scaled(full: int, explicit: Optional[int], scale: float) -> int:
    if explicit is not None:
        return explicit
    return max(1, int(round(full * scale)))


def _load_split(cfg: ExperimentConfig, split: str, digits: Optional[Tuple[int, ...]]) -> Dataset:
    dataset = load_mnist(cfg.data_root_path(), split, digits)
    full = FULL_TRAIN if split == "train" else FULL_TEST
    explicit = cfg.train_samples if split == "train" else cfg.test_samples
    wanted = _scaled(min(full, len(dataset)), explicit, cfg.scale)
    if wanted < len(dataset):
        dataset = dataset.subsample(wanted, cfg.seed)
        logger.info("Using a stratified subset of %d %s samples", len(dataset), split)
    return dataset


def build_problem(cfg: ExperimentConfig) -> Problem:
    """Instantiate the objective an experiment runs on."""
    if cfg.experiment in ("quadratic", "round-demo"):
        if cfg.experiment == "round-demo" or cfg.setting == "stagnation":
            return stagnation_example()
        n = cfg.dimension or max(2, int(round(DEFAULT_DIMENSION * cfg.scale)))
        return quadratic_setting(cfg.setting, n, cfg.seed)
    accumulate = cfg.accumulate or CHOP
    if cfg.experiment == "mlr":
        train = _load_split(cfg, "train", None)
        test = _load_split(cfg, "test", None)
        return MLRProblem(train, test, accumulate=accumulate)
    if cfg.experiment == "nn":
        train = _load_split(cfg, "train", NN_DIGITS)
        test = _load_split(cfg, "test", NN_DIGITS)
        return init_nn(cfg.seed, train, test, hidden=cfg.hidden, accumulate=accumulate)
    raise ConfigError(f"experiment '{cfg.experiment}' has no problem", key="experiment")


def gd_config(cfg: ExperimentConfig, problem: Problem, run: int) -> GDConfig:
    stepsize = cfg.t if cfg.t is not None else problem.recommended_stepsize
    if stepsize is None:
        raise ConfigError(f"no stepsize given and {problem.name} recommends none", key="t")
    return GDConfig(
        stepsize=stepsize,
        max_iters=cfg.iters,
        fmt=cfg.format,
        mode_grad=cfg.mode_grad,
        mode_mul=cfg.mode_mul,
        mode_sub=cfg.mode_sub,
        seed=cfg.seed,
        run_id=run,
        debug_shadow=cfg.debug_shadow,
        keep_vectors=False,
    )


def run_single(cfg: ExperimentConfig, problem: Problem, run: int) -> RunResult:
    """One seeded run; numeric errors are re-raised with the run index."""
    config = gd_config(cfg, problem, run)
    driver = GradientDescent(problem, config)
    try:
        traces = driver.run(include_final=True)
    except LowPrecisionError as e:
        logger.error("Run %d failed at k=%d: %s", run, driver.state.k, e)
        raise type(e)(f"run {run}, iteration {driver.state.k}: {e}") from e
    final = traces[-1]
    logger.info(
        "Run %d finished: k=%d f=%.6g %s",
        run,
        final.k,
        final.f_value,
        " ".join(f"{k}={v:.4g}" for k, v in final.metrics.items()),
    )
    return RunResult(run, traces)


def _run_in_worker(args: Tuple[Dict[str, Any], int]) -> RunResult:
    data, run = args
    cfg = ExperimentConfig(data, data["experiment"])
    return run_single(cfg, build_problem(cfg), run)


def run_ensemble(cfg: ExperimentConfig, problem: Optional[Problem] = None) -> EnsembleResult:
    problem = problem if problem is not None else build_problem(cfg)
    stepsize = cfg.t if cfg.t is not None else problem.recommended_stepsize
    if problem.lipschitz and stepsize is not None:
        bounds.check_stepsize(problem.lipschitz, stepsize, cfg.format.u)

    logger.info(
        "Running %s on %s: format=%s modes=%s/%s/%s t=%s iters=%d reps=%d",
        cfg.experiment,
        problem.name,
        cfg.format,
        cfg.mode_grad,
        cfg.mode_mul,
        cfg.mode_sub,
        stepsize,
        cfg.iters,
        cfg.reps,
    )
    if cfg.workers > 1 and cfg.reps > 1:
        jobs = [(cfg.to_dict(), r) for r in range(cfg.reps)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_in_worker, jobs))
    else:
        results = [run_single(cfg, problem, r) for r in range(cfg.reps)]
    results.sort(key=lambda r: r.run)

    ensemble = aggregate([r.traces for r in results])
    ensemble.runs = results
    if cfg.bounds and isinstance(problem, QuadraticProblem):
        ensemble.columns.update(quadratic_bound_columns(cfg, problem, ensemble, stepsize))
    return ensemble


def quadratic_bound_columns(
    cfg: ExperimentConfig, problem: QuadraticProblem, ensemble: EnsembleResult, stepsize: float
) -> Dict[str, np.ndarray]:
    """Bound curves with chi, zeta and theta measured from the ensemble (diagnostic)."""
    assert problem.lipschitz is not None
    distance = ensemble.columns["distance_mean"]
    f_mean = ensemble.columns["f_mean"]
    chi, zeta = bounds.measure_chi_zeta(distance, f_mean, problem.f_star)
    x0 = problem.initial_point()
    try:
        c = problem.gradient_error_constant(cfg.format.u, float(np.abs(x0).max()) + chi)
    except ParameterOutOfRange as e:
        logger.warning("No gradient error constant for %s: %s", problem.name, e)
        c = 0.0
    theta = ensemble.columns.get("theta_mean")
    params = bounds.BoundParams(
        L=problem.lipschitz,
        t=stepsize,
        u=cfg.format.u,
        c=c,
        a=cfg.bound_a,
        eps=cfg.mode_sub.epsilon or 0.0,
        n=problem.dimension,
        chi=chi,
        zeta=zeta if zeta > 0.0 else None,
        theta=[] if theta is None else list(np.nan_to_num(theta[:-1])),
    )
    dist0_sq = float(distance[0]) ** 2
    logger.info("Bound columns use measured chi=%.4g zeta=%.4g (diagnostic)", chi, zeta)
    return bounds.bound_columns(ensemble.columns["k"], params, dist0_sq)


def _fmt(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_columns(path: str, columns: Dict[str, np.ndarray]) -> None:
    names = [n for n in BASE_COLUMNS if n in columns] + [n for n in columns if n not in BASE_COLUMNS]
    rows = len(next(iter(columns.values()))) if columns else 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(names)
        for i in range(rows):
            writer.writerow([_fmt(columns[n][i]) for n in names])


def trace_columns(traces: Sequence[IterationTrace]) -> Dict[str, np.ndarray]:
    columns: Dict[str, Any] = {
        "k": [t.k for t in traces],
        "f": [t.f_value for t in traces],
        "grad_norm": [t.grad_norm for t in traces],
        "tau": [t.tau for t in traces],
        "stagnating": [t.stagnating for t in traces],
        "scenario2_fraction": [t.scenario2_fraction for t in traces],
    }
    for t in traces:
        for name in t.metrics:
            columns.setdefault(name, [])
    for name in list(columns):
        if name not in ("k", "f", "grad_norm", "tau", "stagnating", "scenario2_fraction"):
            columns[name] = [t.metrics.get(name, math.nan) for t in traces]
    if any(t.theta is not None for t in traces):
        columns["theta"] = [math.nan if t.theta is None else t.theta for t in traces]
    return {name: np.asarray(values) for name, values in columns.items()}


def output_dir(cfg: ExperimentConfig) -> str:
    return os.path.join(cfg.out, cfg.preset or cfg.experiment)


def write_ensemble(directory: str, ensemble: EnsembleResult) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    written = []
    for result in ensemble.runs:
        path = os.path.join(directory, f"run_{result.run:03d}.csv")
        write_columns(path, trace_columns(result.traces))
        written.append(path)
    path = os.path.join(directory, "aggregate.csv")
    write_columns(path, ensemble.columns)
    written.append(path)
    logger.info("Wrote %d files to %s", len(written), directory)
    return written


def run_experiment(cfg: ExperimentConfig) -> EnsembleResult:
    """Run an experiment end to end and write its CSV files.

    round-demo runs the 1-D stagnation problem under the configured modes
    and additionally writes a rounding-statistics table.
    """
    if cfg.experiment == "eval-bounds":
        raise ConfigError("eval-bounds works on an existing CSV; use evaluate_bounds()", key="experiment")
    directory = output_dir(cfg)
    if cfg.experiment == "round-demo":
        results = round_demo(cfg)
        for name, ensemble in results.items():
            write_ensemble(os.path.join(directory, name), ensemble)
        write_columns(os.path.join(directory, "rounding_stats.csv"), rounding_statistics(cfg))
        return results["sr"]
    ensemble = run_ensemble(cfg)
    write_ensemble(directory, ensemble)
    return ensemble


def round_demo(cfg: ExperimentConfig) -> Dict[str, EnsembleResult]:
    """The 1-D stagnation problem with an RN subtract step and with an SR one."""
    problem = stagnation_example()
    rn_cfg = cfg.replace(mode_grad="rn", mode_mul="rn", mode_sub="rn", reps=1)
    sr_cfg = cfg.replace(mode_grad="rn", mode_mul="rn", mode_sub="sr")
    return {
        "rn": run_ensemble(rn_cfg, problem),
        "sr": run_ensemble(sr_cfg, problem),
    }


STAT_POINTS = (1.1, -1.1, 1.24, 3.3, 100.5, 1000.0, 0.3)


def rounding_statistics(
    cfg: ExperimentConfig, points: Iterable[float] = STAT_POINTS, epsilon: float = 0.25
) -> Dict[str, np.ndarray]:
    """Empirical vs closed-form mean rounding error for each stochastic mode.

    The signed mode uses v = +1.
    """
    samples = cfg.stats_samples
    rng = RandomStream(cfg.seed, stream_id=samples)
    rows: Dict[str, List[Any]] = {
        "x": [],
        "mode": [],
        "empirical_error": [],
        "expected_error": [],
        "stderr": [],
    }
    modes = (SR, sr_eps(epsilon), signed_sr_eps(epsilon))
    for x in points:
        for mode in modes:
            v = np.ones(samples) if mode.needs_bias_sign else None
            draws = np.asarray(round_fl(np.full(samples, x), mode, cfg.format, rng, v)) - x
            expected = expected_abs_error(x, mode, cfg.format, 1.0 if v is not None else None)
            rows["x"].append(x)
            rows["mode"].append(str(mode))
            rows["empirical_error"].append(float(draws.mean()))
            rows["expected_error"].append(float(expected))
            rows["stderr"].append(float(draws.std() / math.sqrt(samples)))
    return {name: np.asarray(values, dtype=object) for name, values in rows.items()}


def read_columns(path: str) -> Dict[str, np.ndarray]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
        names = reader.fieldnames or []
    if not rows:
        raise LengthMismatch(f"'{path}' has no rows")
    return {name: np.array([float(row[name]) for row in rows]) for name in names}


def evaluate_bounds(
    path: str,
    out_path: str,
    L: float,
    t: float,
    u: float,
    c: float = 0.0,
    a: float = 0.25,
    eps: float = 0.0,
    n: int = 1,
    dist0_sq: Optional[float] = None,
    chi: Optional[float] = None,
    zeta: Optional[float] = None,
) -> Dict[str, np.ndarray]:
    """Append bound columns to a trace or aggregate CSV.

    Missing chi/zeta/dist0_sq are measured from the ``distance``/``f``
    columns (or their ``_mean`` versions) and are diagnostic only.
    """
    columns = read_columns(path)
    distance = columns.get("distance_mean", columns.get("distance"))
    f_values = columns.get("f_mean", columns.get("f"))
    theta = columns.get("theta_mean", columns.get("theta"))
    if distance is not None and f_values is not None:
        measured_chi, measured_zeta = bounds.measure_chi_zeta(distance, f_values)
        chi = measured_chi if chi is None else chi
        zeta = measured_zeta if zeta is None else zeta
        if dist0_sq is None:
            dist0_sq = float(distance[0]) ** 2
    if dist0_sq is None:
        raise ConfigError("dist0_sq is required when the CSV has no distance column", key="dist0_sq")
    params = bounds.BoundParams(
        L=L,
        t=t,
        u=u,
        c=c,
        a=a,
        eps=eps,
        n=n,
        chi=chi,
        zeta=zeta if zeta is not None and zeta > 0.0 else None,
        theta=[] if theta is None else list(np.nan_to_num(theta[:-1])),
    )
    ks = columns["k"].astype(np.int64)
    columns["k"] = ks
    columns.update(bounds.bound_columns(ks, params, dist0_sq))
    write_columns(out_path, columns)
    logger.info("Wrote bound columns to %s", out_path)
    return columns


__all__ = [
    "EnsembleResult",
    "RunResult",
    "aggregate",
    "build_problem",
    "evaluate_bounds",
    "run_ensemble",
    "run_experiment",
    "rounding_statistics",
]
