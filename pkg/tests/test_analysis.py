import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fkspde.analysis import (
    fit_linear,
    fit_loglog,
    holder_variance_curve,
    moment_growth_fit,
    sensitivity_curve,
    theory_exponents,
)
from fkspde.errors import HolderUnavailable, InsufficientSamples, ValidationError
from fkspde.model import HurstParams

from conftest import make_spec


def test_theory_hand_values():
    th = theory_exponents(HurstParams(0.8, (0.8,)))
    assert math.isclose(th.t_exp, 1.75) and math.isclose(th.p_exp, 2.25)
    assert th.rho_prime is None
    with pytest.raises(HolderUnavailable):
        theory_exponents(HurstParams(0.8, (0.8,)), strict=True)
    th = theory_exponents(HurstParams(0.9, (0.9,)))
    assert math.isclose(th.rho, 0.7) and math.isclose(th.rho_prime, 0.5)


@given(st.floats(0.84, 0.98), st.floats(0.84, 0.98))
def test_theory_continuity_and_order(h0, h1):
    a = theory_exponents(HurstParams(h0, (h1,)))
    b = theory_exponents(HurstParams(h0 + 1e-6, (h1 + 1e-6,)))
    for u, v in [(a.rho, b.rho), (a.t_exp, b.t_exp), (a.p_exp, b.p_exp)]:
        assert abs(u - v) < 1e-4
    assert a.rho > 0 and a.t_exp > 0 and a.p_exp > 0
    assert a.rho_prime <= a.rho and a.rho_prime <= (6 * h1 - 5) / (2 * h1 - 1) + 1e-15


@given(st.floats(-3, 3), st.floats(-2, 2))
def test_fits_recover_exact_lines(slope, icpt):
    x = np.array([0.5, 1.0, 2.0, 4.0])
    f = fit_loglog(x, np.exp(icpt) * x ** slope)
    assert math.isclose(f.slope, slope, abs_tol=1e-9) and f.stderr < 1e-8
    g = fit_linear(x, slope * x + icpt)
    assert 0 <= g.r2 <= 1 and math.isclose(g.intercept, icpt, abs_tol=1e-9)
    with pytest.raises(InsufficientSamples):
        fit_loglog([1.0], [1.0])


def test_holder_curve_zero_offset_and_symmetry():
    spec = make_spec((-8.0,), (8.0,), h0=0.9, hs=(0.9,))
    c = holder_variance_curve(spec, 1.0, [0.0], [0.0, 0.1, -0.1], 512, 3, n_steps=100)
    assert c.values[0] == 0.0
    assert abs(c.values[1] - c.values[2]) < 3 * math.hypot(c.se[1], c.se[2])
    with pytest.raises(ValidationError):
        holder_variance_curve(spec, 1.0, [0.0], [0.013], 16, 3, kind="time", n_steps=100)


def test_holder_time_curve_increases():
    spec = make_spec((-8.0,), (8.0,), h0=0.9, hs=(0.9,))
    c = holder_variance_curve(spec, 1.0, [0.0], [0.0, 0.05, 0.2], 512, 4, kind="time", n_steps=100)
    assert c.values[0] == 0.0 and c.values[2] > c.values[1] > 0


def test_sensitivity_scaling_with_time_drift():
    spec = make_spec((-10.0,), (10.0,), drift={"kind": "trig_t", "amplitude": 1.0, "frequency": 1.0}, horizon=2.0)
    c = sensitivity_curve(spec, [0.0], 2.0, [0.0, 0.01, 0.02, 0.04], 200, 1, n_steps=100)
    assert c.values[0] == 0.0
    assert abs(c.fit.slope - 2.0) < 0.3
    auto = make_spec((-10.0,), (10.0,), horizon=2.0)
    assert np.all(sensitivity_curve(auto, [0.0], 2.0, [0.1], 50, 1, n_steps=20).values == 0)


@pytest.mark.slow
def test_moment_growth_runs_and_reports_theory():
    spec = make_spec((-8.0,), (8.0,), horizon=2.0)
    g = moment_growth_fit(spec, [0.0], [0.5, 1.0, 2.0], [2, 3], 300, 1, steps_per_unit=20)
    assert g.t_fit.slope > 0 and g.k_fit.slope > 0
    assert math.isclose(g.theory.t_exp, 1.75) and 0 <= g.sandwich.r2 <= 1
    assert len(g.points) == 4
    with pytest.raises(ValidationError):
        moment_growth_fit(make_spec(product="skorohod"), [0.0], [1.0], [2], 10, 1)
