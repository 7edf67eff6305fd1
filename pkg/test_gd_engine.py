"""Rounded GD iterations, stagnation detection and scenario classification."""

import numpy as np
import pytest

from lowprec_gd import gd_engine, softfloat
from lowprec_gd.errors import ConfigError, MissingBiasSign
from lowprec_gd.gd_engine import GDConfig, GDState, GradientDescent, Scenario
from lowprec_gd.lp_arith import LPVector
from lowprec_gd.problems import QuadraticProblem, stagnation_example
from lowprec_gd.rounding import SR, RandomStream, expected_abs_error, round_fl, signed_sr_eps, sr_eps
from lowprec_gd.softfloat import FORMATS

BINARY8 = FORMATS["binary8"]
STAGNATION_PATH = [-5120.0, -3072.0, -1536.0, -512.0, 0.0, 384.0, 640.0, 768.0, 896.0]


def _stagnation_run(iters=20, **modes):
    problem = stagnation_example()
    config = GDConfig(problem.recommended_stepsize, iters, BINARY8, **modes)
    return GradientDescent(problem, config).run(include_final=True)


def test_stagnation_example_trajectory():
    traces = _stagnation_run()
    # every iterate lies left of the optimum at 1024
    xs = [1024.0 - t.metrics["distance"] for t in traces]
    assert xs[:9] == STAGNATION_PATH
    assert all(x == 896.0 for x in xs[8:])
    assert traces[8].f_value == 128.0**2


def test_stagnation_tau_at_k8():
    traces = _stagnation_run(iters=12)
    trace = traces[8]
    assert trace.k == 8
    assert trace.tau == pytest.approx(48.0 / 1024.0)
    assert trace.tau <= BINARY8.u / 2
    assert trace.stagnating
    assert all(t.stagnating for t in traces[8:-1])
    assert not traces[0].stagnating


def test_stagnation_is_scenario2():
    problem = stagnation_example()
    config = GDConfig(problem.recommended_stepsize, 12, BINARY8)
    driver = GradientDescent(problem, config)
    traces = driver.run()
    for trace in traces[8:]:
        assert trace.scenario_flags.tolist() == [Scenario.SCENARIO2]
        assert trace.scenario2_fraction == 1.0
    assert traces[0].scenario_flags.tolist() == [Scenario.SCENARIO1]
    assert driver.state.x.values.tolist() == [896.0]


def test_sr_subtract_escapes_stagnation():
    escaped = 0
    for run_id in range(20):
        traces = _stagnation_run(iters=200, mode_sub=SR, run_id=run_id)
        # RN stays 128 away from the optimum forever
        if min(t.metrics["distance"] for t in traces) < 128.0:
            escaped += 1
    assert escaped >= 18


def test_zero_gradient_keeps_iterate():
    problem = QuadraticProblem(np.array([1.0, 2.0]), np.array([1.0, -0.5]), x0=np.array([1.0, -0.5]))
    for modes in (
        {},
        {"mode_grad": SR, "mode_mul": SR, "mode_sub": SR},
        {"mode_mul": signed_sr_eps(0.3), "mode_sub": signed_sr_eps(0.3)},
        {"mode_grad": sr_eps(0.2)},
    ):
        config = GDConfig(0.5, 5, BINARY8, **modes)
        driver = GradientDescent(problem, config)
        traces = driver.run()
        assert driver.state.x.values.tolist() == [1.0, -0.5]
        assert all(t.tau == 0.0 and t.stagnating for t in traces)


def test_zero_iterations():
    problem = stagnation_example()
    driver = GradientDescent(problem, GDConfig(0.1875, 0, BINARY8))
    assert driver.run() == []
    assert driver.state.k == 0
    assert driver.state.x.values.tolist() == [-5120.0]


def test_config_validation():
    with pytest.raises(ConfigError):
        GDConfig(0.0, 10, BINARY8)
    with pytest.raises(ConfigError):
        GDConfig(0.1, -1, BINARY8)
    with pytest.raises(MissingBiasSign):
        GDConfig(0.1, 10, BINARY8, mode_grad=signed_sr_eps(0.1))
    with pytest.raises(ConfigError):
        GDConfig(1e-9, 10, BINARY8)
    assert GDConfig(0.1, 1, BINARY8).rounded_stepsize == 0.09375


def test_runs_are_reproducible():
    a = _stagnation_run(iters=30, mode_mul=SR, mode_sub=SR, seed=3, run_id=1)
    b = _stagnation_run(iters=30, mode_mul=SR, mode_sub=SR, seed=3, run_id=1)
    c = _stagnation_run(iters=30, mode_mul=SR, mode_sub=SR, seed=3, run_id=2)
    assert [t.f_value for t in a] == [t.f_value for t in b]
    assert [t.f_value for t in a] != [t.f_value for t in c]


def test_tau_helpers():
    tau, i_k = gd_engine.tau_from_update(np.array([0.0, -48.0]), np.array([3.0, 944.0]), BINARY8)
    assert (tau, i_k) == (48.0 / 1024.0, 1)
    assert gd_engine.tau_from_update(np.array([]), np.array([]), BINARY8) == (0.0, -1)
    half_u = BINARY8.u / 2
    assert gd_engine.is_stagnating(half_u, 0, np.array([1.0]), BINARY8)
    assert not gd_engine.is_stagnating(half_u, 0, np.array([1.25]), BINARY8)
    assert not gd_engine.is_stagnating(0.2, 0, np.array([1.0]), BINARY8)


def test_large_gradient_regime_has_tau_above_half_u():
    problem = QuadraticProblem(np.array([1.0]), np.array([0.0]), x0=np.array([8.0]))
    config = GDConfig(0.5, 1, BINARY8)
    _, trace = gd_engine.step(GDState(LPVector([8.0], BINARY8)), problem, config)
    assert trace.tau > BINARY8.u / 2
    assert not trace.stagnating
    assert gd_engine.compute_tau(GDState(LPVector([8.0], BINARY8)), problem, config)[0] == trace.tau


def test_neighbour_gaps_at_range_edges():
    up, down = gd_engine.neighbour_gaps(np.array([57344.0, -57344.0, 1.0]), BINARY8)
    assert up[0] == np.inf and down[1] == np.inf
    assert up[2] == 0.25 and down[2] == 0.125


def test_shadow_trace_and_converged_flags():
    problem = QuadraticProblem(np.array([1.0, 1.0]), np.array([0.0, 2.0]), x0=np.array([4.0, 2.0]))
    config = GDConfig(0.5, 1, BINARY8, debug_shadow=True)
    _, trace = gd_engine.step(GDState(LPVector([4.0, 2.0], BINARY8)), problem, config)
    np.testing.assert_array_equal(trace.exact_gradient, [4.0, 0.0])
    np.testing.assert_array_equal(trace.sigma1, [0.0, 0.0])
    assert trace.scenario_flags.tolist() == [Scenario.SCENARIO1, Scenario.CONVERGED]
    # x_next = [2, 2] lands exactly on z, so theta is zero
    assert trace.theta == 0.0
    np.testing.assert_array_equal(trace.sigma3, [0.0, 0.0])


def test_callback_stops_run():
    problem = stagnation_example()
    driver = GradientDescent(problem, GDConfig(0.1875, 50, BINARY8))
    traces = driver.run(callbacks=[lambda trace, state: trace.stagnating])
    assert len(traces) == 9
    assert driver.state.k == 9


def test_compact_traces_keep_scalars():
    problem = stagnation_example()
    config = GDConfig(0.1875, 10, BINARY8, keep_vectors=False)
    traces = GradientDescent(problem, config).run()
    assert all(t.update is None and t.scenario_flags is None for t in traces)
    assert traces[9].scenario2_fraction == 1.0


def test_module_run_uses_given_stream():
    problem = stagnation_example()
    config = GDConfig(0.1875, 15, BINARY8, mode_sub=SR)
    rng = RandomStream(9)
    gd_engine.run(problem, config, rng=rng)
    assert rng.draws == 15


def _reconstruct(x, trace, t_hat):
    g = trace.exact_gradient + trace.sigma1
    z = x - t_hat * g * (1.0 + trace.delta2)
    return z * (1.0 + trace.delta3)


@pytest.mark.parametrize(
    "modes",
    [
        {},
        {"mode_grad": SR, "mode_mul": SR, "mode_sub": SR},
        {"mode_grad": sr_eps(0.2), "mode_mul": sr_eps(0.2), "mode_sub": sr_eps(0.2)},
        {"mode_mul": signed_sr_eps(0.3), "mode_sub": signed_sr_eps(0.3)},
    ],
)
def test_shadow_errors_rebuild_next_iterate(modes):
    # t = 0.1 is not a binary8 member; the multiply uses RN(t) = 0.09375
    problem = QuadraticProblem(np.array([1.0, 2.0, 3.0]), np.zeros(3), x0=np.array([3.0, -5.0, 7.0]))
    config = GDConfig(0.1, 6, BINARY8, debug_shadow=True, run_id=4, **modes)
    driver = GradientDescent(problem, config)
    bound = BINARY8.u if not modes else 2.0 * BINARY8.u
    for _ in range(config.max_iters):
        x = driver.state.x.values.copy()
        trace = driver.step()
        assert np.all(np.abs(trace.delta2) <= bound)
        assert np.all(np.abs(trace.delta3) <= bound)
        rebuilt = _reconstruct(x, trace, config.rounded_stepsize)
        np.testing.assert_allclose(rebuilt, driver.state.x.values, rtol=1e-12, atol=0.0)
        np.testing.assert_array_equal(
            softfloat.round_nearest_even(rebuilt, BINARY8), driver.state.x.values
        )


def test_shadow_delta2_under_nearest_with_rounded_stepsize():
    problem = QuadraticProblem(np.array([1.0, 2.0, 3.0]), np.zeros(3), x0=np.array([3.0, -5.0, 7.0]))
    config = GDConfig(0.1, 1, BINARY8, debug_shadow=True)
    x = LPVector([3.0, -5.0, 7.0], BINARY8)
    state, trace = gd_engine.step(GDState(x), problem, config)
    # RN(0.09375 * 3) = 0.28125 -> 0.25 in binary8
    assert trace.update[0] == 0.25
    assert trace.delta2[0] == pytest.approx(0.25 / 0.28125 - 1.0)
    assert np.all(np.abs(trace.delta2) <= BINARY8.u)
    np.testing.assert_array_equal(state.x.values, [3.0, -4.0, 5.0])


BFLOAT16 = FORMATS["bfloat16"]
EXPECTATION_SAMPLES = 100_000


def _scenario2_step(mode_sub):
    """One step of a fixed 5-D diagonal quadratic sitting one gap from its optimum."""
    x_hat = np.array([1.5, -2.25, 3.0, -1.25, 2.5])
    offsets = np.array([2.0**-7, -(2.0**-6), 2.0**-6, 2.0**-7, -(2.0**-6)])
    problem = QuadraticProblem(np.array([1.1, 2.3, 0.7, 1.9, 3.1]), x_hat - offsets, x0=x_hat)
    config = GDConfig(0.1, 1, BFLOAT16, mode_sub=mode_sub, debug_shadow=True)
    state = GDState(LPVector(x_hat, BFLOAT16))
    _, trace = gd_engine.step(state, problem, config, RandomStream(0))
    assert np.all(trace.scenario_flags == Scenario.SCENARIO2)
    draws = np.asarray(
        round_fl(
            np.tile(trace.z, (EXPECTATION_SAMPLES, 1)),
            mode_sub,
            BFLOAT16,
            RandomStream(5, 1),
            v=trace.gradient if mode_sub.needs_bias_sign else None,
        )
    )
    return x_hat, trace, draws


def _descent_samples(x_hat, trace, draws):
    products = (x_hat - draws) @ trace.exact_gradient
    return float(np.mean(products)), float(np.std(products) / np.sqrt(len(products)))


def test_sr_expectation_law_in_scenario2():
    x_hat, trace, draws = _scenario2_step(SR)
    mean, stderr = _descent_samples(x_hat, trace, draws)
    # E[grad f . d] = t grad f . ((grad f + sigma_1) h_2), i.e. grad f . update
    assert abs(mean - trace.exact_gradient @ trace.update) <= 4 * stderr


def test_signed_sr_eps_surplus_in_scenario2():
    eps = 0.4
    mode = signed_sr_eps(eps)
    x_hat, trace, draws = _scenario2_step(mode)
    mean, stderr = _descent_samples(x_hat, trace, draws)
    surplus = mean - trace.exact_gradient @ trace.update
    assert surplus > 4 * stderr
    ceiling = 2 * eps * BFLOAT16.u * np.abs(trace.exact_gradient) @ np.abs(x_hat)
    assert surplus <= ceiling + 4 * stderr
    closed_form = -trace.exact_gradient @ expected_abs_error(trace.z, mode, BFLOAT16, trace.gradient)
    assert abs(surplus - closed_form) <= 4 * stderr


@pytest.mark.parametrize("mode", [SR, sr_eps(0.4), signed_sr_eps(0.4)])
def test_scenario2_moves_at_most_one_gap_without_sign_change(mode):
    x_hat, trace, draws = _scenario2_step(mode)
    up, down = gd_engine.neighbour_gaps(x_hat, BFLOAT16)
    # the realized step is 0 or one neighbouring gap, taken against the gradient
    moved = x_hat - draws
    toward = np.sign(trace.gradient) * np.where(trace.gradient > 0, down, up)
    assert np.all((moved == 0.0) | (moved == toward))
    assert np.all(np.sign(draws) * np.sign(x_hat) >= 0)
