import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from fkspde import kernels as K
from fkspde.errors import DegenerateGrid, GridMismatch
from fkspde.model import HurstParams
from fkspde.pathsim import KilledPath


def brute_energy(mid_a, mid_b, n_a, n_b, hurst, w, floor, self_pair):
    """Direct double loop over cell pairs."""
    total, clipped = 0.0, 0
    ex = hurst.space_exponents
    for k in range(n_a):
        for l in range(n_b):
            gap = np.abs(mid_a[k] - mid_b[l])
            if np.any(gap < floor):
                clipped += 1
            total += w[k, l] * np.prod(np.maximum(gap, floor) ** ex)
    return total, clipped


def test_phi_closed_form():
    assert math.isclose(K.phi(0.75, 4.0), 0.75 * 0.5 * 4.0 ** -0.5)
    assert math.isclose(K.phi(0.75, 0.0, floor=0.25), 0.375 * 2.0)


def lag_quadrature(a, b, c, d, h0):
    """int |u|^beta L(u) du with L(u) the length of {s in [c, d]: s + u in [a, b]}."""
    beta = 2 * h0 - 2
    L = lambda u: max(0.0, min(b, d + u) - max(a, c + u))
    lo, hi = a - d, b - c
    brk = sorted({lo, hi, a - c, b - d} | ({0.0} if lo < 0 < hi else set()))
    total = 0.0
    for u0, u1 in zip(brk[:-1], brk[1:]):
        if u1 > u0:
            total += integrate.quad(lambda u: abs(u) ** beta * L(u), u0, u1, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
    return total


@given(st.floats(0.55, 0.95), st.floats(0.0, 1.0), st.floats(0.05, 1.0), st.floats(0.0, 1.0), st.floats(0.05, 1.0))
def test_cell_integral_matches_quadrature(h0, a, la, c, lc):
    b, d = a + la, c + lc
    ref = lag_quadrature(a, b, c, d, h0)
    assert math.isclose(K.cell_integral(a, b, c, d, h0), ref, rel_tol=1e-7, abs_tol=1e-11)


@given(st.floats(0.55, 0.95), st.floats(0.2, 3.0), st.integers(2, 60))
def test_weights_total_is_square_integral(h0, T, n):
    w = K.temporal_weights(np.linspace(0, T, n + 1), h0)
    beta = 2 * h0 - 2
    exact = 2 * T ** (beta + 2) / ((beta + 1) * (beta + 2))
    assert math.isclose(w.total, exact, rel_tol=1e-10)
    assert np.allclose(w.w, w.w.T) and np.all(w.w > 0)


def test_uniform_toeplitz_equals_general_formula():
    g = np.linspace(0, 1.3, 41)
    w = K.temporal_weights(g, 0.7).w
    a, b = g[:-1], g[1:]
    direct = K.cell_integral(a[:, None], b[:, None], a[None, :], b[None, :], 0.7)
    assert np.allclose(w, direct, rtol=1e-9, atol=1e-14)


def test_degenerate_grid_rejected():
    with pytest.raises(DegenerateGrid):
        K.temporal_weights([0.0, 0.0, 1.0], 0.8)


@pytest.mark.parametrize("d", [1, 2])
def test_self_energy_matches_brute_force(d):
    rng = np.random.default_rng(d)
    n = 30
    hurst = HurstParams(0.8, (0.75,) * d)
    w = K.temporal_weights(np.linspace(0, 1, n + 1), hurst.h0)
    states = np.cumsum(rng.normal(scale=math.sqrt(1 / n), size=(3, n + 1, d)), axis=1)
    mid = K.midpoints(states)
    n_cells = np.array([n, 17, 0])
    e, c = K.self_energies(mid, n_cells, hurst, w)
    floor = K.floor_for(w)
    for p in range(3):
        ref, rc = brute_energy(mid[p], mid[p], n_cells[p], n_cells[p], hurst, w.w, floor, True)
        assert math.isclose(e[p], ref, rel_tol=1e-10, abs_tol=1e-14)
        assert c[p] == rc
    e2, _ = K.cross_energies(mid[:1], mid[1:2], n_cells[:1], n_cells[1:2], hurst, w)
    ref2, _ = brute_energy(mid[0], mid[1], n, 17, hurst, w.w, floor, False)
    assert math.isclose(e2[0], ref2, rel_tol=1e-10)


@pytest.mark.skipif("cython" not in K.BACKENDS, reason="compiled extension not built")
@given(st.integers(0, 10_000), st.integers(2, 40), st.floats(0.55, 0.95))
def test_backends_agree(seed, n, h):
    rng = np.random.default_rng(seed)
    hurst = HurstParams(h, (h,))
    w = K.temporal_weights(np.linspace(0, 1, n + 1), h)
    mid = rng.normal(size=(4, n, 1))
    mid2 = rng.normal(size=(4, n, 1))
    nc = rng.integers(0, n + 1, size=4)
    nc2 = rng.integers(0, n + 1, size=4)
    a = K.self_energies(mid, nc, hurst, w, backend="python")
    b = K.self_energies(mid, nc, hurst, w, backend="cython")
    assert np.allclose(a[0], b[0], rtol=1e-12, atol=0) and np.array_equal(a[1], b[1])
    a = K.cross_energies(mid, mid2, nc, nc2, hurst, w, backend="python")
    b = K.cross_energies(mid, mid2, nc, nc2, hurst, w, backend="cython")
    assert np.allclose(a[0], b[0], rtol=1e-12, atol=0) and np.array_equal(a[1], b[1])


@given(st.integers(0, 1000))
def test_pair_energy_symmetric_and_positive(seed):
    rng = np.random.default_rng(seed)
    n = 20
    t = np.linspace(0, 1, n + 1)
    hurst = HurstParams(0.8, (0.8,))
    w = K.temporal_weights(t, 0.8)
    p = KilledPath(t, np.cumsum(rng.normal(size=(n + 1, 1)) * 0.2, axis=0))
    q = KilledPath(t, np.cumsum(rng.normal(size=(n + 1, 1)) * 0.2, axis=0), 12, 0.6, np.zeros(1))
    e_pq = K.pair_energy(p, q, hurst, w).value
    e_qp = K.pair_energy(q, p, hurst, w).value
    assert e_pq > 0 and math.isclose(e_pq, e_qp, rel_tol=1e-12)


def test_wick_correction_is_half_alpha_self_energy():
    t = np.linspace(0, 1, 11)
    p = KilledPath(t, np.linspace(0, 0.5, 11)[:, None])
    hurst = HurstParams(0.8, (0.8,))
    w = K.temporal_weights(t, 0.8)
    assert math.isclose(K.wick_correction(p, hurst, w), 0.5 * hurst.alpha * K.pair_energy(p, p, hurst, w).value)
    with pytest.raises(GridMismatch):
        K.pair_energy(p, p, hurst, K.temporal_weights(np.linspace(0, 2, 11), 0.8))


def test_constant_path_energy_is_floor_power_times_total():
    # Every gap is 0, so each cell pair contributes w_kl * floor^(2H - 2).
    n = 16
    t = np.linspace(0, 1, n + 1)
    p = KilledPath(t, np.zeros((n + 1, 1)))
    hurst = HurstParams(0.8, (0.8,))
    w = K.temporal_weights(t, 0.8)
    e = K.pair_energy(p, p, hurst, w)
    assert math.isclose(e.value, w.total * K.floor_for(w) ** -0.4, rel_tol=1e-12)
    assert e.clipped_cells == n * n


def test_extension_import_keeps_subnormals():
    # the compiled core is built with fast math; importing it must not flush denormals process-wide
    import fkspde.kernels  # noqa: F401

    assert np.array([1e-310])[0] / 10 > 0
