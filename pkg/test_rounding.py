"""Rounding modes: probabilities, closed-form errors and empirical means."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import binary8_members
from lowprec_gd import softfloat
from lowprec_gd.errors import (
    ConfigError,
    DivisionByZero,
    InvalidInput,
    MissingBiasSign,
    UnsupportedMode,
)
from lowprec_gd.rounding import (
    RD,
    RN,
    RU,
    SR,
    Kind,
    RandomStream,
    expected_abs_error,
    p0,
    p_eps,
    p_hat_eps,
    parse_mode,
    round_fl,
    rounded_op,
    signed_sr_eps,
    sr_eps,
)

SAMPLES = 100_000
BINARY8 = softfloat.FORMATS["binary8"]
MEMBERS = binary8_members()


def _mean_and_stderr(draws):
    return float(np.mean(draws)), float(np.std(draws) / math.sqrt(len(draws)))


@pytest.mark.parametrize(
    "text, kind, eps",
    [
        ("rn", Kind.NEAREST_EVEN, None),
        ("RD", Kind.DOWN, None),
        ("ru", Kind.UP, None),
        ("sr", Kind.SR, None),
        ("sr_eps:0.25", Kind.SR_EPS, 0.25),
        ("ssr_eps:0.1", Kind.SIGNED_SR_EPS, 0.1),
    ],
)
def test_parse_mode(text, kind, eps):
    mode = parse_mode(text)
    assert mode.kind is kind
    assert mode.epsilon == eps


def test_parse_mode_default_epsilon():
    assert parse_mode("sr_eps", default_eps=0.4) == sr_eps(0.4)
    assert str(parse_mode("ssr_eps", 0.2)) == "ssr_eps:0.2"


@pytest.mark.parametrize("text", ["nearest", "sr_eps", "sr_eps:0", "sr_eps:1.5", "sr_eps:abc", "rn:0.1"])
def test_parse_mode_rejects(text):
    with pytest.raises(ConfigError) as info:
        parse_mode(text)
    assert info.value.key == "mode"


def test_zero_epsilon_is_rejected():
    with pytest.raises(InvalidInput):
        sr_eps(0.0)
    with pytest.raises(InvalidInput):
        signed_sr_eps(1.0)


def test_p0(binary8):
    assert p0(1.1, binary8) == pytest.approx(0.6)
    assert p0(1.0, binary8) == 1.0
    assert p0(1.125, binary8) == 0.5
    assert p0(-1.1, binary8) == pytest.approx(0.4)


@pytest.mark.parametrize(
    "x, eps, expected",
    [(1.1, 0.25, 0.35), (-1.1, 0.25, 0.65), (1.24, 0.9, 0.0), (1.0, 0.5, 1.0)],
)
def test_p_eps(binary8, x, eps, expected):
    assert p_eps(x, eps, binary8) == pytest.approx(expected)


@pytest.mark.parametrize("v, expected", [(3.0, 0.85), (-3.0, 0.35), (0.0, 0.6)])
def test_p_hat_eps(binary8, v, expected):
    assert p_hat_eps(1.1, 0.25, v, binary8) == pytest.approx(expected)


def test_small_epsilon_approaches_p0(binary8):
    xs = np.linspace(-3.0, 3.0, 101)
    np.testing.assert_allclose(p_eps(xs, 1e-9, binary8), p0(xs, binary8), atol=1e-8)


def test_deterministic_modes(binary8):
    xs = np.array([1.1, -1.1, 944.0])
    np.testing.assert_array_equal(round_fl(xs, RN, binary8), [1.0, -1.0, 896.0])
    np.testing.assert_array_equal(round_fl(xs, RD, binary8), [1.0, -1.25, 896.0])
    np.testing.assert_array_equal(round_fl(xs, RU, binary8), [1.25, -1.0, 1024.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=246), st.sampled_from(["rn", "sr", "sr_eps:0.3", "ssr_eps:0.3"]))
def test_members_are_fixed_points(index, mode_text):
    x = MEMBERS[index]
    out = round_fl(x, parse_mode(mode_text), BINARY8, RandomStream(1), v=-1.0)
    assert out == x


def test_stochastic_results_bracket_x(binary8):
    xs = RandomStream(3).uniform(1000) * 200.0 - 100.0
    lo = softfloat.floor_fl(xs, binary8)
    hi = softfloat.ceil_fl(xs, binary8)
    for mode in (SR, sr_eps(0.4), signed_sr_eps(0.4)):
        out = round_fl(xs, mode, binary8, RandomStream(4), v=np.ones_like(xs))
        assert np.all((out == lo) | (out == hi))


def test_one_draw_per_element(binary8):
    rng = RandomStream(0)
    round_fl(np.array([1.0, 1.1, 2.0]), SR, binary8, rng)
    assert rng.draws == 3


def test_same_key_same_draws(binary8):
    xs = np.full(50, 1.1)
    a = round_fl(xs, SR, binary8, RandomStream(7, 2))
    b = round_fl(xs, SR, binary8, RandomStream(7, 2))
    c = round_fl(xs, SR, binary8, RandomStream(7, 3))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sr_is_unbiased(binary8):
    draws = round_fl(np.full(SAMPLES, 1.1), SR, binary8, RandomStream(11))
    mean, stderr = _mean_and_stderr(draws)
    assert abs(mean - 1.1) <= 4 * stderr


def test_sr_eps_mean_moves_away_from_zero(binary8):
    draws = round_fl(np.full(SAMPLES, 1.1), sr_eps(0.25), binary8, RandomStream(12))
    mean, stderr = _mean_and_stderr(draws)
    assert abs(mean - 1.1625) <= 4 * stderr
    negative = round_fl(np.full(SAMPLES, -1.1), sr_eps(0.25), binary8, RandomStream(13))
    mean, stderr = _mean_and_stderr(negative)
    assert abs(mean + 1.1625) <= 4 * stderr


@pytest.mark.parametrize("x, v", [(1.1, 1.0), (1.1, -1.0), (-1.1, 1.0), (-1.1, -1.0)])
def test_signed_mean_matches_closed_form(binary8, x, v):
    mode = signed_sr_eps(0.25)
    draws = round_fl(np.full(SAMPLES, x), mode, binary8, RandomStream(14), v=v)
    mean, stderr = _mean_and_stderr(draws - x)
    assert abs(mean - expected_abs_error(x, mode, binary8, v)) <= 4 * stderr + 1e-12
    # the expected error carries the sign of -v
    assert np.sign(expected_abs_error(x, mode, binary8, v)) == -np.sign(v)


FUZZ_SAMPLES = 100_000


@settings(max_examples=200, deadline=None, derandomize=True)
@given(
    st.floats(min_value=1e-3, max_value=1e4),
    st.booleans(),
    st.sampled_from(sorted(softfloat.FORMATS)),
    st.floats(min_value=0.01, max_value=0.99),
    st.sampled_from(["sr", "sr_eps", "ssr_eps"]),
    st.sampled_from([1.0, -1.0]),
)
def test_stochastic_means_on_fuzzed_inputs(magnitude, negative, fmt_name, eps, kind, v):
    fmt = softfloat.FORMATS[fmt_name]
    x = -magnitude if negative else magnitude
    mode = {"sr": SR, "sr_eps": sr_eps(eps), "ssr_eps": signed_sr_eps(eps)}[kind]
    gap = float(softfloat.ceil_fl(x, fmt) - softfloat.floor_fl(x, fmt))

    # relative bias of SR_eps lies in [0, 2 eps u]
    bias = expected_abs_error(x, sr_eps(eps), fmt) / x
    assert 0.0 <= bias <= 2.0 * eps * fmt.u * (1.0 + 1e-12)

    draws = round_fl(np.full(FUZZ_SAMPLES, x), mode, fmt, RandomStream(21), v=v)
    assert np.all(np.sign(draws) == np.sign(x))
    mean, stderr = _mean_and_stderr(draws - x)
    expected = expected_abs_error(x, mode, fmt, v)
    # when p sits near 0 or 1 only a handful of draws differ; allow that many gaps
    slack = 4.0 * gap / FUZZ_SAMPLES + 1e-12 * abs(x)
    assert abs(mean - expected) <= 4.0 * stderr + slack


def test_expected_abs_error(binary8):
    assert expected_abs_error(1.1, SR, binary8) == 0.0
    assert expected_abs_error(1.1, sr_eps(0.25), binary8) == pytest.approx(0.0625)
    assert expected_abs_error(1.1, signed_sr_eps(0.25), binary8, 1.0) == pytest.approx(-0.0625)
    # eta < 0: always rounds up
    assert expected_abs_error(1.24, sr_eps(0.9), binary8) == pytest.approx(0.01)
    # eta > 1: always rounds down
    assert expected_abs_error(1.01, signed_sr_eps(0.5), binary8, 1.0) == pytest.approx(-0.01)
    assert expected_abs_error(1.25, sr_eps(0.5), binary8) == 0.0


def test_expected_error_needs_stochastic_mode(binary8):
    with pytest.raises(UnsupportedMode):
        expected_abs_error(1.1, RN, binary8)
    with pytest.raises(MissingBiasSign):
        expected_abs_error(1.1, signed_sr_eps(0.1), binary8)


def test_missing_inputs(binary8):
    with pytest.raises(MissingBiasSign):
        round_fl(1.1, signed_sr_eps(0.1), binary8, RandomStream(0))
    with pytest.raises(InvalidInput):
        round_fl(1.1, SR, binary8)


def test_rounded_op(binary8):
    assert rounded_op(1.0, 0.0, "+", SR, binary8, RandomStream(0)) == 1.0
    assert rounded_op(1.0, 0.09375, "+", RN, binary8) == 1.0
    assert rounded_op(1.5, 2.0, "*", sr_eps(0.3), binary8, RandomStream(0)) == 3.0
    assert rounded_op(1.0, 3.0, "/", RU, binary8) == 0.375
    with pytest.raises(DivisionByZero):
        rounded_op(1.0, 0.0, "/", RN, binary8)
    with pytest.raises(InvalidInput):
        rounded_op(1.1, 1.0, "+", RN, binary8)
    with pytest.raises(InvalidInput):
        rounded_op(1.0, 1.0, "%", RN, binary8)
