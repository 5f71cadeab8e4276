import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fkspde.errors import AdmissibilityViolated, DimensionMismatch, HurstOutOfRange, ValidationError
from fkspde.model import (
    DomainSpec,
    HurstParams,
    Location,
    Modulus,
    extend_coefficient,
    make_coefficients,
    make_data,
    time_reflect,
    validate_hurst,
)

from conftest import make_spec

hurst_component = st.floats(0.501, 0.999)


def test_validate_hurst_accepts_admissible():
    validate_hurst(HurstParams(0.8, (0.8,)), 1)
    validate_hurst(HurstParams(0.9, (0.9, 0.9)), 2)


def test_validate_hurst_reports_violated_inequality():
    with pytest.raises(HurstOutOfRange, match="1/2 < H1 < 1"):
        validate_hurst(HurstParams(0.8, (0.4,)), 1)
    # 2*0.6 + 0.6 + 0.6 - 2 - 1 = -0.6
    with pytest.raises(AdmissibilityViolated, match="> 0"):
        validate_hurst(HurstParams(0.6, (0.6, 0.6)), 2)
    with pytest.raises(DimensionMismatch):
        validate_hurst(HurstParams(0.8, (0.8,)), 2)


@given(hurst_component, hurst_component)
def test_admissibility_matches_closed_form(h0, h1):
    h = HurstParams(h0, (h1,))
    assert math.isclose(h.rho, 2 * h0 + h1 - 2, abs_tol=1e-12)
    if h.rho > 0:
        validate_hurst(h, 1)
    else:
        with pytest.raises(ValidationError):
            validate_hurst(h, 1)


def test_alpha_convention():
    h = HurstParams(0.8, (0.8,))
    assert math.isclose(h.alpha, (0.8 * 0.6) ** 2, rel_tol=1e-14)


def test_box_contains_and_distance():
    D = DomainSpec.box([0.0, 0.0], [1.0, 2.0])
    assert D.contains(np.array([0.5, 0.5])) == Location.INTERIOR
    assert D.contains(np.array([1.0, 0.5])) == Location.BOUNDARY
    assert D.contains(np.array([1.5, 0.5])) == Location.EXTERIOR
    assert math.isclose(float(D.signed_distance(np.array([[0.25, 1.0]]))[0]), 0.25)


def test_ball_projection_lands_on_sphere():
    D = DomainSpec.ball([1.0, -1.0], 2.0)
    x = np.random.default_rng(0).normal(size=(50, 2)) * 3
    p = D.project(x)
    assert np.allclose(np.linalg.norm(p - np.array([1.0, -1.0]), axis=1), 2.0)


def test_empty_domains_rejected():
    with pytest.raises(ValidationError):
        DomainSpec.box([1.0], [0.0])
    with pytest.raises(ValidationError):
        DomainSpec.ball([0.0], 0.0)


@given(st.floats(-3, 3), st.floats(0.1, 2.0))
def test_extension_preserves_lipschitz_modulus(x, K):
    D = DomainSpec.box([-1.0], [1.0])
    f = lambda t, p: np.sin(K * p[:, 0])
    ext = extend_coefficient(f, Modulus(K, 1.0), D, resolution=201)
    xs = np.array([[x], [x + 0.3]])
    v = ext(0.0, xs)
    assert abs(v[0] - v[1]) <= K * 0.3 + 1e-9
    if abs(x) <= 1:
        assert math.isclose(v[0], math.sin(K * x), abs_tol=1e-12)


def test_time_reflection_is_even():
    c = time_reflect(make_coefficients({"kind": "trig_t", "amplitude": 1.0, "frequency": 1.0}, None, 1))
    x = np.zeros((1, 1))
    assert np.allclose(c.b(-0.7, x), c.b(0.7, x))


def test_coefficient_constants_hold_on_samples():
    c = make_coefficients({"kind": "trig_x", "amplitude": 0.5, "frequency": 2.0},
                          {"kind": "trig_x", "base": 1.0, "amplitude": 0.3, "frequency": 1.0}, 1)
    pts = np.linspace(-2, 2, 101)[:, None]
    assert c.check_ellipticity([0.0, 1.0], pts)
    assert c.check_lipschitz([0.0, 1.0], pts)
    assert math.isclose(c.ellipticity_delta, 0.49)


def test_incompatible_data_rejected():
    D = DomainSpec.box([0.0], [1.0])
    spec = make_spec((0.0,), (1.0,), data={"kind": "bump", "base": 1.0, "amplitude": 0.5})
    spec.validate()  # bump vanishes on the boundary
    bad = spec.with_(data=make_data({"kind": "constant", "value": 1.0}, D))
    bad = bad.with_(data=type(bad.data)(f=lambda x: np.full(len(x), 2.0), g=lambda t, x: np.ones(len(x))))
    with pytest.raises(ValidationError, match="incompatible"):
        bad.validate()
