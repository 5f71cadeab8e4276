"""Fractional kernels and the singular double-time interaction energies.

The energy of two killed paths is the discretized double integral

    sum_{cells k, l} w_kl * prod_m |X^i_m(mid_k) - X^j_m(mid_l)|^(2 H_m - 2)

where ``w_kl`` integrates |r - s|^(2 H_0 - 2) exactly over the cell pair and
the spatial factor is frozen at cell midpoints, with each coordinate gap
floored at ``floor_coef * sqrt(dt)``. The covariance prefactor alpha_H is not
part of the energy.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels_py
from .errors import DegenerateGrid, GridMismatch
from .model import HurstParams

try:
    if os.environ.get("FKSPDE_PURE_PYTHON") == "1":
        raise ImportError("pure Python requested")
    from . import _kernels_c as _core

    BACKEND = "cython"
except ImportError:
    _core = _kernels_py
    BACKEND = "python"

BACKENDS = {"python": _kernels_py}
if BACKEND == "cython":
    BACKENDS["cython"] = _core

DEFAULT_FLOOR_COEF = 0.1


def phi(H: float, x, floor: float = 0.0):
    """H(2H-1)|x|^(2H-2), with |x| floored at ``floor``."""
    a = np.maximum(np.abs(np.asarray(x, dtype=float)), floor)
    with np.errstate(divide="ignore"):
        out = H * (2.0 * H - 1.0) * a ** (2.0 * H - 2.0)
    return out if np.ndim(out) else float(out)


def _second_antiderivative(u, beta):
    return np.abs(u) ** (beta + 2.0) / ((beta + 1.0) * (beta + 2.0))


def cell_integral(a, b, c, d, h0: float):
    """Exact integral of |r - s|^(2 h0 - 2) over [a, b] x [c, d] (vectorized)."""
    beta = 2.0 * h0 - 2.0
    F = lambda u: _second_antiderivative(u, beta)
    return F(np.subtract(b, c)) + F(np.subtract(a, d)) - F(np.subtract(b, d)) - F(np.subtract(a, c))


@dataclass(frozen=True)
class KernelWeights:
    grid: np.ndarray
    w: np.ndarray
    h0: float

    @property
    def n_cells(self) -> int:
        return len(self.grid) - 1

    @property
    def dt(self) -> float:
        return float((self.grid[-1] - self.grid[0]) / self.n_cells)

    @property
    def total(self) -> float:
        return float(self.w.sum())


def temporal_weights(grid, h0: float) -> KernelWeights:
    """Exact cell integrals of |r - s|^(2 h0 - 2) on a strictly increasing grid."""
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
        raise DegenerateGrid("time grid must be strictly increasing with at least two nodes")
    steps = np.diff(g)
    n = steps.size
    if np.allclose(steps, steps[0], rtol=1e-12, atol=0):
        # Uniform grid: Toeplitz in |k - l|, computed in step units to avoid cancellation.
        beta = 2.0 * h0 - 2.0
        m = np.arange(n + 1, dtype=float)
        F = _second_antiderivative(m, beta)
        Fm1 = _second_antiderivative(m - 1.0, beta)
        lag = np.empty(n)
        lag[0] = 2.0 * F[1]
        lag[1:] = F[2:] + Fm1[1:n] - 2.0 * F[1:n]
        lag *= steps[0] ** (2.0 * h0)
        k = np.arange(n)
        w = lag[np.abs(k[:, None] - k[None, :])]
    else:
        a, b = g[:-1], g[1:]
        w = cell_integral(a[:, None], b[:, None], a[None, :], b[None, :], h0)
    return KernelWeights(g, np.ascontiguousarray(w), float(h0))


@dataclass(frozen=True)
class FKExponent:
    value: float
    clipped_cells: int


def _backend(name: Optional[str]):
    if name is None:
        return _core
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


def floor_for(weights: KernelWeights, floor_coef: float = DEFAULT_FLOOR_COEF) -> float:
    return float(floor_coef * np.sqrt(weights.dt))


def midpoints(states: np.ndarray) -> np.ndarray:
    """Cell-midpoint states; (P, n+1, d) -> (P, n, d) contiguous."""
    return np.ascontiguousarray(0.5 * (states[..., :-1, :] + states[..., 1:, :]))


def self_energies(mid, n_cells, hurst: HurstParams, weights: KernelWeights,
                  floor_coef: float = DEFAULT_FLOOR_COEF, backend: Optional[str] = None):
    """Batched self energies; returns (energy, clipped_cells) arrays."""
    core = _backend(backend)
    return core.self_energy_batch(
        np.ascontiguousarray(mid, dtype=float),
        np.ascontiguousarray(n_cells, dtype=np.int64),
        weights.w,
        np.ascontiguousarray(hurst.space_exponents, dtype=float),
        floor_for(weights, floor_coef),
    )


def cross_energies(mid_a, mid_b, n_a, n_b, hurst: HurstParams, weights: KernelWeights,
                   floor_coef: float = DEFAULT_FLOOR_COEF, backend: Optional[str] = None):
    """Batched energies between path a[p] and path b[p]."""
    core = _backend(backend)
    return core.pair_energy_batch(
        np.ascontiguousarray(mid_a, dtype=float),
        np.ascontiguousarray(mid_b, dtype=float),
        np.ascontiguousarray(n_a, dtype=np.int64),
        np.ascontiguousarray(n_b, dtype=np.int64),
        weights.w,
        np.ascontiguousarray(hurst.space_exponents, dtype=float),
        floor_for(weights, floor_coef),
    )


def _check_grid(path, weights: KernelWeights):
    t = np.asarray(path.times)
    if t.shape != weights.grid.shape or not np.allclose(t, weights.grid, rtol=0, atol=1e-12):
        raise GridMismatch("path time grid differs from the weight grid")


def pair_energy(path_i, path_j, hurst: HurstParams, weights: KernelWeights,
                floor_coef: float = DEFAULT_FLOOR_COEF) -> FKExponent:
    """Interaction energy of two killed paths on the same grid."""
    _check_grid(path_i, weights)
    _check_grid(path_j, weights)
    mi = midpoints(path_i.states[None])
    mj = midpoints(path_j.states[None])
    ni, nj = np.array([path_i.n_cells]), np.array([path_j.n_cells])
    if path_i is path_j:
        e, c = self_energies(mi, ni, hurst, weights, floor_coef)
    else:
        e, c = cross_energies(mi, mj, ni, nj, hurst, weights, floor_coef)
    return FKExponent(float(e[0]), int(c[0]))


def wick_correction(path, hurst: HurstParams, weights: KernelWeights, alpha: Optional[float] = None,
                    floor_coef: float = DEFAULT_FLOOR_COEF) -> float:
    """Self-energy term removed from the exponent under the Wick product: alpha/2 * E(p, p)."""
    alpha = hurst.alpha if alpha is None else alpha
    return 0.5 * alpha * pair_energy(path, path, hurst, weights, floor_coef).value
