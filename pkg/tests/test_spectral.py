import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fkspde.errors import BallNotInsideDomain, ValidationError
from fkspde.model import DomainSpec, make_coefficients
from fkspde.spectral import (
    calibrate_eigen_bound,
    eigen_bounds_check,
    principal_eigenpair,
    smallball_eigen,
    smallball_predict,
)


def test_interval_eigenvalue():
    c = make_coefficients(None, None, 1)
    r = principal_eigenpair(c, DomainSpec.box([-1.0], [1.0]), 400)
    assert abs(r.lambda1 / (math.pi ** 2 / 8) - 1) < 1e-3
    assert r.residual < 1e-8
    assert np.all(r.psi1[r.interior] > 0)
    assert math.isclose(float(np.sum(r.psi1 ** 2) * r.h_grid[0]), 1.0, rel_tol=1e-12)


def test_square_eigenvalue():
    c = make_coefficients(None, None, 2)
    r = principal_eigenpair(c, DomainSpec.box([0.0, 0.0], [1.0, 1.0]), 80)
    assert abs(r.lambda1 / math.pi ** 2 - 1) < 1e-2


def test_disk_eigenvalue():
    # First zero of J0 squared over 2 for the unit disk; the staircase boundary converges slowly.
    c = make_coefficients(None, None, 2)
    r = principal_eigenpair(c, DomainSpec.ball([0.0, 0.0], 1.0), 120)
    assert abs(r.lambda1 / (2.404825557695773 ** 2 / 2) - 1) < 0.03


def test_constant_drift_shift():
    # -1/2 u'' - b u' on (-1, 1): lambda1 = pi^2/8 + b^2/2.
    b = 0.7
    c = make_coefficients({"kind": "constant", "value": b}, None, 1)
    r = principal_eigenpair(c, DomainSpec.box([-1.0], [1.0]), 400)
    assert abs(r.lambda1 - (math.pi ** 2 / 8 + b * b / 2)) < 2e-3


@given(st.floats(0.2, 3.0))
def test_eps_scaling_exact_on_uniform_grid(eps):
    c = make_coefficients(None, None, 1)
    a = smallball_eigen(c, [0.0], 1.0, 1.0, n_grid=100).lambda1
    b = smallball_eigen(c, [0.0], eps, 1.0, n_grid=100).lambda1
    assert math.isclose(a, b * eps ** 2, rel_tol=1e-9)


def test_smallball_prediction_value():
    c = make_coefficients(None, None, 1)
    p = smallball_predict(c, [0.0], 1.0, 1.0, n_grid=400)
    assert abs(p - 4 / math.pi * math.exp(-math.pi ** 2 / 8)) < 1e-4
    with pytest.raises(BallNotInsideDomain):
        smallball_predict(c, [0.5], 1.0, 1.0, D=DomainSpec.box([-1.0], [1.0]))


def test_bounds_check_after_calibration():
    c = make_coefficients(None, None, 1)
    D = DomainSpec.box([-3.0], [1.0])
    r = principal_eigenpair(c, D, 200)
    rep = eigen_bounds_check(r, D, c, calibrate_eigen_bound(1, 1.0, 0.0, 200))
    assert rep.ok, rep.violations
    rep2 = eigen_bounds_check(r, D, c, 0.5 * calibrate_eigen_bound(1))
    assert not rep2.ok


def test_time_dependent_rejected():
    c = make_coefficients({"kind": "trig_t"}, None, 1)
    with pytest.raises(ValidationError):
        principal_eigenpair(c, DomainSpec.box([-1.0], [1.0]), 50)
