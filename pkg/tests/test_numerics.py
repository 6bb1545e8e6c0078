import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uavrelay.numerics import (
    BisectionSpec,
    StepSchedule,
    bisect,
    lambert_w0,
    lambert_w0_exp,
    solve_increasing,
    subgradient_step,
)


def test_lambert_known_values():
    assert lambert_w0(0.0) == 0.0
    assert lambert_w0(math.e) == pytest.approx(1.0, abs=1e-15)
    assert lambert_w0(1.0) == pytest.approx(0.5671432904097838, abs=1e-15)
    assert lambert_w0(-1 / math.e) == -1.0


def test_lambert_identity_on_log_grid():
    x = np.logspace(-12, 12, 200)
    w = lambert_w0(x)
    assert np.all(np.abs(w * np.exp(w) - x) <= 1e-12 * np.maximum(1.0, x))
    assert np.all(w >= 0)


def test_lambert_monotone_concave():
    x = np.linspace(0, 50, 2001)
    w = lambert_w0(x)
    assert np.all(np.diff(w) > 0)
    assert np.all(np.diff(w, 2) < 1e-12)


def test_lambert_branch_region():
    x = np.linspace(-1 / math.e + 1e-12, 0, 50)
    w = lambert_w0(x)
    assert np.allclose(w * np.exp(w), x, atol=1e-12)
    assert np.all(w >= -1)


def test_lambert_domain():
    with pytest.raises(ValueError):
        lambert_w0(-0.5)
    with pytest.raises(ValueError):
        lambert_w0(np.nan)


@given(st.floats(-20, 2000))
def test_lambert_of_exp(a):
    w = lambert_w0_exp(a)
    # w + log w = a is the logarithm of w e^w = e^a
    assert w + math.log(w) == pytest.approx(a, abs=1e-12 * max(1.0, abs(a)))
    if a < 500:
        assert w == pytest.approx(lambert_w0(math.exp(a)), rel=1e-13)


def test_bisect_examples():
    r = bisect(BisectionSpec(0.0, 1.0, 1e-12), lambda x: x, 0.5)
    assert r.root == pytest.approx(0.5) and r.converged and not r.bracket_miss
    r = bisect(BisectionSpec(0.0, 4.0, 1e-12), lambda x: 2.0 ** x, 2.0)
    assert r.root == pytest.approx(1.0, abs=1e-11)


def test_bisect_iteration_bound():
    spec = BisectionSpec(0.0, 10.0, 1e-6)
    r = bisect(spec, lambda x: x ** 3, 7.0)
    assert r.iterations <= math.ceil(math.log2(10.0 / 1e-6))
    assert r.root == pytest.approx(7.0 ** (1 / 3), abs=1e-6)


def test_bisect_decreasing_and_miss():
    r = bisect(BisectionSpec(0.0, 1.0, 1e-10, monotone_direction="decreasing"), lambda x: 1 - x, 0.25)
    assert r.root == pytest.approx(0.75)
    miss = bisect(BisectionSpec(0.0, 1.0, 1e-10), lambda x: x, 3.0)
    assert miss.bracket_miss and miss.root == 1.0


def test_bisect_vectorised():
    targets = np.array([0.1, 0.5, 0.9])
    r = bisect(BisectionSpec(np.zeros(3), np.ones(3), 1e-12), np.sqrt, targets)
    assert np.allclose(r.root, targets ** 2)


def test_bisection_spec_validation():
    with pytest.raises(ValueError):
        BisectionSpec(1.0, 0.0, 1e-3)
    with pytest.raises(ValueError):
        BisectionSpec(0.0, 1.0, 0.0)


@given(st.floats(0.01, 100.0))
def test_solve_increasing_matches_cube_root(t):
    x = solve_increasing(lambda x: (x ** 3, 3 * x ** 2), t, 0.0, 10.0)
    assert float(x) == pytest.approx(t ** (1 / 3), rel=1e-12)


def test_subgradient_step_examples():
    assert subgradient_step(0.0, 1.0, 0.3) == 0.0
    assert subgradient_step(1.0, 0.5, 1.0) == 0.5
    with pytest.raises(ValueError):
        subgradient_step(1.0, 0.5, 0.0)


def test_subgradient_toy_dual():
    # min x1^2 + x2^2 s.t. x1 + x2 >= 1: dual optimum lam* = 1, x* = (1/2, 1/2)
    steps = StepSchedule("diminishing", 1.0, 0.5)
    lam = 0.0
    for j in range(1, 400):
        x = lam / 2.0
        lam = subgradient_step(lam, 2 * x - 1.0, steps(j))
    assert lam == pytest.approx(1.0, abs=1e-3)


def test_step_schedule():
    s = StepSchedule("diminishing", 2.0, 1.0)
    assert s(1) == 2.0 and s(4) == 0.5
    assert StepSchedule("constant", 0.3)(10) == 0.3
    assert s.scaled(0.5)(1) == 1.0
    for bad in (dict(a=0.0), dict(exponent=0.4), dict(exponent=1.5), dict(kind="cyclic")):
        with pytest.raises(ValueError):
            StepSchedule(**bad)
    with pytest.raises(ValueError):
        s(0)
