import math

import numpy as np
import pytest

from fkspde.errors import NonRectangularDomain, StabilityViolation
from fkspde.model import DomainSpec
from fkspde.noisefield import MollifierParams, SheetGrid, sample_sheet
from fkspde.pdecheck import CrosscheckBudget, FDMesh, crosscheck, fd_solve

from conftest import make_spec


def test_constant_solution_preserved():
    spec = make_spec((0.0,), (1.0,), drift={"kind": "trig_t", "amplitude": 0.3, "frequency": 2.0})
    sol = fd_solve(spec, None, FDMesh((50,), 200))
    assert np.max(np.abs(sol.final() - 1.0)) < 1e-12


def test_constant_potential_growth():
    spec = make_spec((0.0,), (1.0,))
    c0 = 0.7
    # u = exp(c0 t) solves u_t = 1/2 u'' + c0 u with g(t) = exp(c0 t).
    sol = fd_solve(spec, lambda t, p: np.full(len(p), c0), FDMesh((40,), 2000), t_end=0.5,
                   data_g=lambda t, x: np.full(len(x), math.exp(c0 * t)))
    assert abs(sol.at(0.5, [0.5]) - math.exp(0.35)) < 1e-3


def manufactured(n):
    """u = exp(-t) sin(pi x) + 1 with source chosen to make it exact; returns max error."""
    spec = make_spec((0.0,), (1.0,), data={"kind": "bump", "base": 1.0, "amplitude": 1.0})
    src = lambda t, p: (-1 + math.pi ** 2 / 2) * math.exp(-t) * np.sin(math.pi * p[:, 0])
    sol = fd_solve(spec, None, FDMesh((n,), n * n), t_end=0.5, source=src)
    assert not sol.stability.fallback
    x = sol.axes[0]
    return float(np.max(np.abs(sol.final() - (1 + math.exp(-0.5) * np.sin(math.pi * x)))))


def test_second_order_convergence():
    e = [manufactured(n) for n in (20, 40, 80)]
    rates = [math.log2(a / b) for a, b in zip(e, e[1:])]
    assert all(r > 1.8 for r in rates), (e, rates)


def test_two_dimensional_heat_mode():
    spec = make_spec((0.0, 0.0), (1.0, 1.0), data={"kind": "bump", "base": 0.0, "amplitude": 1.0})
    sol = fd_solve(spec, None, FDMesh((40, 40), 400), t_end=0.1)
    exact = math.exp(-math.pi ** 2 * 0.1)
    assert abs(sol.at(0.1, [0.5, 0.5]) - exact) < 2e-3


def test_stability_guards():
    spec = make_spec((0.0,), (1.0,))
    with pytest.raises(StabilityViolation):
        fd_solve(spec, lambda t, p: np.full(len(p), 100.0), FDMesh((10,), 10))
    sol = fd_solve(spec, None, FDMesh((200,), 10))
    assert sol.stability.fallback and sol.stability.theta == 1.0
    ball = spec.with_(domain=DomainSpec.ball([0.5], 0.5))
    with pytest.raises(NonRectangularDomain):
        fd_solve(ball, None, FDMesh((10,), 10))


@pytest.mark.slow
def test_crosscheck_small_budget():
    spec = make_spec((0.0,), (1.0,), drift={"kind": "trig_t", "amplitude": 0.1, "frequency": 1.0},
                     data={"kind": "bump", "base": 1.0, "amplitude": 0.5}, horizon=0.5)
    m = MollifierParams(0.05, 0.05)
    sheet = sample_sheet(SheetGrid.covering(0.5, [0.0], [1.0], 0.01, 0.04, m.eps), spec.hurst, 11)
    rep = crosscheck(spec, sheet, m, [(0.5, [0.5])], CrosscheckBudget(n_paths=20000, n_steps=200, fd_space=100,
                                                                      fd_time=1000, table_resolution=401))
    r = rep.rows[0]
    assert r["rel_gap"] < 4 * r["mc_se"] / r["fd_value"] + 5e-3
