"""Shared fixtures: an independent binary8 oracle and the slow/mnist markers."""

import os
from fractions import Fraction
from typing import List

import numpy as np
import pytest

from lowprec_gd.softfloat import FORMATS, FloatFormat

RUN_SLOW_ENV = "LPGD_RUN_SLOW"
DATA_ROOT_ENV = "LPGD_DATA_ROOT"


def decode_e5m2(bits: int) -> Fraction:
    """Decode one E5M2 byte with integer arithmetic; infinities and NaNs raise."""
    sign = -1 if bits & 0x80 else 1
    exponent = (bits >> 2) & 0x1F
    mantissa = bits & 0x03
    if exponent == 0x1F:
        raise ValueError("not finite")
    if exponent == 0:
        return sign * Fraction(mantissa, 1 << 16)
    scale = exponent - 15 - 2
    value = Fraction(4 + mantissa)
    return sign * (value * (1 << scale) if scale >= 0 else value / (1 << -scale))


def binary8_members() -> List[float]:
    values = set()
    for bits in range(256):
        try:
            values.add(float(decode_e5m2(bits)))
        except ValueError:
            continue
    return sorted(values)


@pytest.fixture(scope="session")
def binary8() -> FloatFormat:
    return FORMATS["binary8"]


@pytest.fixture(scope="session")
def binary8_oracle() -> np.ndarray:
    """Every finite binary8 value, decoded from its bit pattern."""
    return np.array(binary8_members())


def pytest_collection_modifyitems(config, items):
    run_slow = os.environ.get(RUN_SLOW_ENV) == "1"
    has_data = bool(os.environ.get(DATA_ROOT_ENV))
    skip_slow = pytest.mark.skip(reason=f"slow; set {RUN_SLOW_ENV}=1 to run")
    skip_data = pytest.mark.skip(reason=f"needs MNIST under {DATA_ROOT_ENV}")
    for item in items:
        if "slow" in item.keywords and not run_slow:
            item.add_marker(skip_slow)
        if "mnist" in item.keywords and not has_data:
            item.add_marker(skip_data)
