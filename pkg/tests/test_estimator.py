import io
import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from fkspde.errors import ValidationError
from fkspde.estimator import (
    abs_gauss_moment,
    brownian_functional,
    comparison_check,
    config_digest,
    moment_estimate,
    solve_point_conditional,
    solve_point_fixed_noise,
    write_csv,
)
from fkspde.model import HurstParams
from fkspde.noisefield import MollifierParams, SheetGrid, SmoothedNoise, zero_sheet
from fkspde.pdecheck import FDMesh, fd_solve

from conftest import make_spec


def test_skorohod_mean_is_exactly_one():
    spec = make_spec(product="skorohod")
    for t in (0.5, 1.0):
        e = solve_point_conditional(spec, t, [0.0], 5000, 1, n_steps=50)
        assert e.value == 1.0 and e.std_error == 0.0


def test_stratonovich_mean_exceeds_one():
    spec = make_spec()
    e = solve_point_conditional(spec, 1.0, [0.0], 5000, 1, n_steps=50)
    assert e.value >= 1.0 - 3 * e.std_error and e.value > 1.0
    assert 0 < e.survival < 1 and e.mom_value is not None


def test_conditional_estimate_deterministic_across_workers():
    spec = make_spec()
    a = solve_point_conditional(spec, 1.0, [0.0], 20000, 4, n_steps=20, workers=1)
    b = solve_point_conditional(spec, 1.0, [0.0], 20000, 4, n_steps=20, workers=3)
    assert a.record() == b.record()


def test_zero_noise_matches_heat_equation():
    # With a zero sheet the fixed-noise estimator is plain Feynman-Kac for the heat equation.
    spec = make_spec((0.0,), (1.0,), data={"kind": "bump", "base": 1.0, "amplitude": 0.5}, horizon=0.25)
    m = MollifierParams(0.01, 0.05)
    grid = SheetGrid.covering(0.25, [0.0], [1.0], 0.05, 0.05, m.eps)
    noise = SmoothedNoise(zero_sheet(grid, spec.hurst), m)
    fd = fd_solve(spec, None, FDMesh((200,), 2000), t_end=0.25)
    for x in (0.3, 0.5):
        e = solve_point_fixed_noise(spec, 0.25, [x], noise, 40000, 2, n_steps=200)
        assert abs(e.value - fd.at(0.25, [x])) < 4 * e.std_error + 2e-3
    # Exact solution: 1 + 0.5 exp(-pi^2 t / 2) sin(pi x) to FD accuracy.
    exact = 1 + 0.5 * math.exp(-math.pi ** 2 * 0.25 / 2) * math.sin(math.pi * 0.5)
    assert abs(fd.at(0.25, [0.5]) - exact) < 1e-4


def test_replica_moments():
    spec = make_spec((-8.0,), (8.0,), product="skorohod")
    e = moment_estimate(spec, 1.0, [0.0], 1, 500, 3, n_steps=20)
    assert e.value == 1.0
    strat = make_spec((-8.0,), (8.0,))
    vals = [moment_estimate(strat, 1.0, [0.0], k, 2000, 5, n_steps=20) for k in (1, 2, 3)]
    for lo, hi in zip(vals, vals[1:]):
        assert hi.value >= lo.value - 3 * math.hypot(lo.std_error, hi.std_error)
    with pytest.raises(ValidationError):
        moment_estimate(strat, 1.0, [0.0], 0, 10, 1)


@pytest.mark.parametrize("H", [0.6, 0.8, 0.95])
def test_brownian_functional_against_quadrature(H):
    hurst = HurstParams(0.8, (H,))
    p = 2 * H - 2
    f = lambda z: abs(z) ** p * stats.norm.pdf(z)
    ref = 2 * integrate.quad(f, 0, np.inf)[0] * 0.3 ** (p / 2)
    assert math.isclose(float(brownian_functional(hurst, 0.5, 0.2)), ref, rel_tol=1e-8)
    assert math.isclose(abs_gauss_moment(2.0), 1.0)


def test_comparison_holds_for_brownian_motion_itself():
    spec = make_spec((-10.0,), (10.0,))
    rep = comparison_check(spec, [0.0], [0.1, 0.2], [0.5, 0.6], 20000, 1, 1.0, 1.0, steps_per_unit=100)
    assert rep.ok and np.all(rep.lhs <= rep.rhs + 4 * rep.lhs_se)
    with pytest.raises(ValidationError):
        comparison_check(spec, [0.0], [0.1, 0.5], [0.5], 100, 1, 1.0, 1.0)


def test_digest_and_csv():
    spec = make_spec()
    assert config_digest(spec, a=1) == config_digest(spec, a=1) != config_digest(spec, a=2)
    buf = io.StringIO()
    write_csv([{"a": 1, "x": [0.5]}], buf, {"seed": 3})
    assert buf.getvalue().splitlines() == ["# seed: 3", "a,x", "1,[0.5]"]
