import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from fkspde.errors import OutOfCoverage, ValidationError
from fkspde.model import HurstParams
from fkspde.noisefield import (
    MollifierParams,
    SheetGrid,
    SmoothedNoise,
    V_samples,
    abs_moment_gauss,
    fbm_cov,
    load_sheet,
    pathwise_V_regularized,
    sample_sheet,
    sample_sheets,
    save_sheet,
    variance_quadrature,
    window_kernel,
    zero_sheet,
)
from fkspde.pathsim import KilledPath

H = HurstParams(0.75, (0.7,))


def small_grid():
    return SheetGrid(np.linspace(0, 2, 21), (np.linspace(-1, 2, 31),))


def test_sheet_covariance_matches_product_kernel():
    g = small_grid()
    W = sample_sheets(g, H, 1, 20000)
    i1, i2 = 10, 20  # t = 1, 2
    j1, j2 = 20, 30  # x = 1, 2
    cov = np.mean(W[:, i1, j1] * W[:, i2, j2])
    exact = float(fbm_cov(0.75, 1.0, 2.0) * fbm_cov(0.7, 1.0, 2.0))
    sd = math.sqrt((fbm_cov(0.75, 1, 1) * fbm_cov(0.7, 1, 1)) * (fbm_cov(0.75, 2, 2) * fbm_cov(0.7, 2, 2)) + exact ** 2)
    assert abs(cov - exact) < 4 * sd / math.sqrt(20000)
    assert np.all(W[:, 0] == 0)
    # Negative spatial nodes use |x|: R_H(-1, -1) = 1.
    assert abs(np.var(W[:, i1, 0]) - fbm_cov(0.75, 1, 1) * fbm_cov(0.7, -1, -1)) < 0.05


def test_sheet_deterministic_and_roundtrip():
    g = small_grid()
    a, b = sample_sheet(g, H, 4), sample_sheet(g, H, 4)
    assert np.array_equal(a.values, b.values)
    buf = io.BytesIO()
    save_sheet(a, buf)
    buf.seek(0)
    c = load_sheet(buf)
    assert np.array_equal(c.values, a.values) and c.hurst == H and np.array_equal(c.grid.times, g.times)
    with pytest.raises(ValidationError):
        load_sheet(io.BytesIO(b"garbage!"))


def test_grid_validation():
    with pytest.raises(ValidationError):
        SheetGrid(np.linspace(0.1, 1, 5), (np.linspace(0, 1, 5),))


@given(st.floats(-2, 2), st.floats(0.1, 2.0), st.floats(-0.45, -0.05))
def test_abs_moment_gauss_against_quadrature(mu, sigma, p):
    f = lambda z: abs(mu + sigma * z) ** p * stats.norm.pdf(z)
    z0 = -mu / sigma
    ref = integrate.quad(f, -np.inf, z0, limit=200)[0] + integrate.quad(f, z0, np.inf, limit=200)[0]
    assert math.isclose(float(abs_moment_gauss(mu, sigma, p)), ref, rel_tol=1e-6)


def test_window_kernel_reduces_to_kernel_for_small_delta():
    assert math.isclose(float(window_kernel(1.0, 0.5, 0.8, 1e-5)), 0.5 ** -0.4, rel_tol=1e-4)


def test_smoothed_noise_linear_and_zero():
    g = small_grid()
    m = MollifierParams(0.01, 0.1)
    s1, s2 = sample_sheet(g, H, 1), sample_sheet(g, H, 2)
    tau = np.array([0.3, 0.9, 1.5])
    x = np.array([[0.0], [0.5], [1.0]])
    n1, n2, n12 = SmoothedNoise(s1, m)(tau, x), SmoothedNoise(s2, m)(tau, x), SmoothedNoise(s1 + s2.scaled(2.0), m)(tau, x)
    assert np.allclose(n12, n1 + 2 * n2)
    assert np.all(SmoothedNoise(zero_sheet(g, H), m)(tau, x) == 0)
    # Reflection in noise time.
    assert np.allclose(SmoothedNoise(s1, m)(-tau, x), n1)
    with pytest.raises(OutOfCoverage):
        SmoothedNoise(s1, m)(np.array([0.5]), np.array([[1.9]]))


def test_smoothed_noise_of_separable_sheet():
    # W(t, x) = t * x gives Wdot = 1 wherever the kernel mass stays inside the grid.
    g = small_grid()
    vals = g.times[:, None] * g.axes[0][None, :]
    from fkspde.noisefield import SheetSample

    sh = SheetSample(g, vals, 0, H)
    m = MollifierParams(0.01, 0.2)
    out = SmoothedNoise(sh, m)(np.array([0.5, 1.0]), np.array([[0.5], [0.6]]))
    assert np.allclose(out, 1.0, atol=1e-9)
    table = SmoothedNoise(sh, m).tabulate(np.array([0.5, 1.0]), [np.linspace(0.2, 0.8, 7)])
    assert np.allclose(table.at_row(0, np.array([[0.33]])), 1.0)


def test_variance_identity_small():
    rng = np.random.default_rng(0)
    n = 40
    t = np.linspace(0, 1, n + 1)
    path = KilledPath(t, np.cumsum(np.r_[[[0.0]], rng.normal(scale=math.sqrt(1 / n), size=(n, 1))], axis=0))
    hurst = HurstParams(0.8, (0.8,))
    m = MollifierParams(0.05, 0.05)
    grid = SheetGrid.covering(1.0, path.states.min(0), path.states.max(0), 0.01, 0.03, m.eps)
    V = V_samples(path, grid, hurst, m, 1.0, 5, 4000)
    q = variance_quadrature(path, hurst, m, 1.0)
    # Var of the sample variance is about 2 q^2 / n.
    assert abs(np.var(V) / q - 1) < 4 * math.sqrt(2 / 4000) + 0.02
    sh = sample_sheet(grid, hurst, 5)
    assert np.isfinite(pathwise_V_regularized(path, sh, m, 1.0))
