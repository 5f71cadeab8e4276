"""Fractional Brownian sheets on tensor grids and their space-time mollification.

The sheet W(t, x), t >= 0, x in R^d, has covariance R_{H0}(s, t) prod R_{Hi}(x_i, y_i)
with R_H(s, t) = (|s|^{2H} + |t|^{2H} - |t - s|^{2H}) / 2, two-sided in space.

The smoothed noise is

    Wdot(tau, x) = (1/delta) * int p_eps(x - y) [W(tau, dy) - W(max(tau - delta, 0), dy)],

where p_eps is the Gaussian kernel with variance eps per coordinate. On a grid
W(., dy) is spread uniformly inside each spatial cell, so the kernel enters
through its exact cell averages; in time W is interpolated linearly.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .errors import FactorizationFailure, OutOfCoverage, ValidationError
from .kernels import cell_integral
from .model import HurstParams
from .rng import derive_seed, make_rng

MAX_NODES_PER_AXIS = 4096
JITTER_REL = 1e-12
JITTER_TRIES = 3
# Kernel support cut, in units of sqrt(eps); the mass outside is below 1e-8.
SUPPORT_SIGMAS = 6.0


def fbm_cov(H: float, s, t):
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    return 0.5 * (np.abs(s) ** (2 * H) + np.abs(t) ** (2 * H) - np.abs(t - s) ** (2 * H))


@dataclass(frozen=True)
class SheetGrid:
    times: np.ndarray
    axes: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        for a in (t,) + axes:
            if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
                raise ValidationError("sheet grid axes must be strictly increasing with >= 2 nodes")
            if a.size > MAX_NODES_PER_AXIS:
                raise ValidationError(f"sheet axis has {a.size} nodes; limit is {MAX_NODES_PER_AXIS}")
        if t[0] != 0.0:
            raise ValidationError("sheet time axis must start at 0")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "axes", axes)

    @property
    def d(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return (self.times.size,) + tuple(a.size for a in self.axes)

    @classmethod
    def covering(cls, t_max: float, lo, hi, dt: float, dx: float, eps: float) -> "SheetGrid":
        """Uniform grid on [0, t_max] x prod [lo - 6 sqrt(eps), hi + 6 sqrt(eps)]."""
        nt = max(1, int(math.ceil(t_max / dt - 1e-9)))
        pad = SUPPORT_SIGMAS * math.sqrt(eps) + dx
        axes = []
        for a, b in zip(np.atleast_1d(lo), np.atleast_1d(hi)):
            n = max(2, int(math.ceil((b - a + 2 * pad) / dx)))
            axes.append(np.linspace(a - pad, b + pad, n + 1))
        return cls(np.linspace(0.0, nt * dt, nt + 1), tuple(axes))


@dataclass
class SheetSample:
    grid: SheetGrid
    values: np.ndarray
    seed: int
    hurst: Optional[HurstParams] = None

    def scaled(self, a: float) -> "SheetSample":
        return SheetSample(self.grid, a * self.values, self.seed, self.hurst)

    def __add__(self, other: "SheetSample") -> "SheetSample":
        return SheetSample(self.grid, self.values + other.values, self.seed, self.hurst)


def _axis_factor(nodes: np.ndarray, H: float) -> np.ndarray:
    """Lower factor L with L L^T = R_H on the nodes; rows of zero nodes are 0."""
    nz = nodes != 0.0
    x = nodes[nz]
    C = fbm_cov(H, x[:, None], x[None, :])
    jitter = JITTER_REL * np.trace(C) / max(len(x), 1)
    for k in range(JITTER_TRIES + 1):
        try:
            Lnz = np.linalg.cholesky(C + (k * jitter) * np.eye(len(x)) if k else C)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise FactorizationFailure(f"covariance not positive definite after {JITTER_TRIES} jitter attempts")
    L = np.zeros((nodes.size, Lnz.shape[1]))
    L[nz] = Lnz
    return L


@lru_cache(maxsize=32)
def _factors_cached(key):
    times, axes, hs = key
    return tuple(_axis_factor(np.array(a), h) for a, h in zip((times,) + axes, hs))


def sheet_factors(grid: SheetGrid, hurst: HurstParams) -> tuple:
    if grid.d != hurst.d:
        raise ValidationError(f"sheet grid has d={grid.d}, Hurst vector has d={hurst.d}")
    key = (tuple(grid.times), tuple(tuple(a) for a in grid.axes), (hurst.h0,) + tuple(hurst.h_space))
    return _factors_cached(key)


def _apply_factors(factors, Z):
    """W = Z x_0 L_0 x_1 L_1 ...; Z has an optional leading batch axis."""
    W = Z
    off = Z.ndim - len(factors)
    for ax, L in enumerate(factors):
        W = np.moveaxis(np.tensordot(L, W, axes=([1], [off + ax])), 0, off + ax)
    return W


def sample_sheet(grid: SheetGrid, hurst: HurstParams, seed: int) -> SheetSample:
    """Exact Gaussian sample via per-axis Cholesky factors (Kronecker structure)."""
    factors = sheet_factors(grid, hurst)
    Z = make_rng(seed).standard_normal(tuple(L.shape[1] for L in factors))
    return SheetSample(grid, _apply_factors(factors, Z), int(seed), hurst)


def sample_sheets(grid: SheetGrid, hurst: HurstParams, seed: int, n: int) -> np.ndarray:
    """n independent sheet value arrays, shape (n,) + grid.shape."""
    factors = sheet_factors(grid, hurst)
    Z = make_rng(seed).standard_normal((n,) + tuple(L.shape[1] for L in factors))
    return _apply_factors(factors, Z)


def zero_sheet(grid: SheetGrid, hurst: Optional[HurstParams] = None) -> SheetSample:
    return SheetSample(grid, np.zeros(grid.shape), 0, hurst)


# ---------------------------------------------------------------------------
# Mollification


@dataclass(frozen=True)
class MollifierParams:
    eps: float
    delta: float

    def __post_init__(self):
        if not (self.eps > 0 and self.delta > 0):
            raise ValidationError("mollifier eps and delta must be positive")

    @property
    def support(self) -> float:
        return SUPPORT_SIGMAS * math.sqrt(self.eps)


def _cell_kernel(x: np.ndarray, edges: np.ndarray, eps: float) -> np.ndarray:
    """Cell averages of the 1-d heat kernel: (n_points, n_cells)."""
    s = math.sqrt(eps)
    cdf = special.ndtr((x[:, None] - edges[None, :]) / s)
    return (cdf[:, :-1] - cdf[:, 1:]) / np.diff(edges)[None, :]


def _cell_increments(values: np.ndarray, d: int) -> np.ndarray:
    """Mixed spatial increments per cell; trailing d axes are spatial."""
    out = values
    for ax in range(values.ndim - d, values.ndim):
        out = np.diff(out, axis=ax)
    return out


def _time_rows(values: np.ndarray, times: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Linear interpolation of values[i, ...] at times tau (first axis)."""
    i = np.clip(np.searchsorted(times, tau, side="right") - 1, 0, times.size - 2)
    w = (tau - times[i]) / (times[i + 1] - times[i])
    w = w.reshape(w.shape + (1,) * (values.ndim - 1))
    return (1 - w) * values[i] + w * values[i + 1]


def _check_coverage(grid: SheetGrid, m: MollifierParams, tau: np.ndarray, x: np.ndarray):
    if tau.size and (np.max(tau) > grid.times[-1] * (1 + 1e-12) + 1e-12):
        raise OutOfCoverage(f"noise time {np.max(tau):.6g} beyond sheet horizon {grid.times[-1]:.6g}")
    for k, a in enumerate(grid.axes):
        if x.size and (np.min(x[:, k]) - m.support < a[0] - 1e-12 or np.max(x[:, k]) + m.support > a[-1] + 1e-12):
            raise OutOfCoverage(f"point outside sheet coverage on axis {k} (kernel support {m.support:.3g})")


class SmoothedNoise:
    """Wdot^{eps,delta} for a fixed sheet; pure and thread-safe after construction.

    Negative time arguments are reflected (tau -> |tau|), the even extension
    used for the coefficients.
    """

    def __init__(self, sheet: SheetSample, m: MollifierParams):
        self.sheet = sheet
        self.m = m
        self.grid = sheet.grid
        self.incr = _cell_increments(sheet.values, self.grid.d)

    def _time_part(self, tau: np.ndarray) -> np.ndarray:
        tau = np.abs(np.asarray(tau, dtype=float))
        g = self.grid
        hi = _time_rows(self.incr, g.times, tau)
        lo = _time_rows(self.incr, g.times, np.maximum(tau - self.m.delta, 0.0))
        return (hi - lo) / self.m.delta

    def __call__(self, tau, x) -> np.ndarray:
        """Evaluate at paired arrays tau (N,) and x (N, d)."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        x = np.asarray(x, dtype=float).reshape(len(tau), self.grid.d)
        _check_coverage(self.grid, self.m, np.abs(tau), x)
        G = self._time_part(tau)  # (N, c1, ..., cd)
        for k, a in enumerate(self.grid.axes):
            K = _cell_kernel(x[:, k], a, self.m.eps)
            G = np.einsum("nc...,nc->n...", G, K)
        return G

    def tabulate(self, taus, axes: Sequence[np.ndarray]) -> "NoiseTable":
        """Values on taus x tensor(axes), for fast interpolated evaluation."""
        taus = np.asarray(taus, dtype=float)
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        corners = np.array([[a[0] for a in axes], [a[-1] for a in axes]])
        _check_coverage(self.grid, self.m, np.abs(taus), corners)
        T = self._time_part(taus)  # (nt, c1, ..., cd)
        for k, a in enumerate(self.grid.axes):
            K = _cell_kernel(axes[k], a, self.m.eps)  # (n_k, c_k)
            # Consumes the leading cell axis and appends n_k, so axes end up ordered.
            T = np.tensordot(T, K, axes=([1], [1]))
        return NoiseTable(taus, axes, T)


@dataclass
class NoiseTable:
    """Gridded Wdot values; multilinear interpolation in space, exact rows in time."""

    taus: np.ndarray
    axes: tuple
    values: np.ndarray  # (n_tau, n_1, ..., n_d)

    def at_row(self, i: int, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = len(self.axes)
        idx, frac = [], []
        for k, a in enumerate(self.axes):
            if np.any(x[:, k] < a[0] - 1e-12) or np.any(x[:, k] > a[-1] + 1e-12):
                raise OutOfCoverage(f"point outside tabulated range on axis {k}")
            j = np.clip(np.searchsorted(a, x[:, k], side="right") - 1, 0, a.size - 2)
            idx.append(j)
            frac.append((x[:, k] - a[j]) / (a[j + 1] - a[j]))
        row = self.values[i]
        out = np.zeros(len(x))
        for corner in range(1 << d):
            w = np.ones(len(x))
            ii = []
            for k in range(d):
                bit = (corner >> k) & 1
                w = w * (frac[k] if bit else 1 - frac[k])
                ii.append(idx[k] + bit)
            out += w * row[tuple(ii)]
        return out


def smoothed_noise(sheet: SheetSample, m: MollifierParams) -> SmoothedNoise:
    return SmoothedNoise(sheet, m)


def _trapezoid_weights(times: np.ndarray, n_cells: int) -> np.ndarray:
    w = np.zeros(times.size)
    if n_cells > 0:
        h = np.diff(times[: n_cells + 1])
        w[:n_cells] += 0.5 * h
        w[1:n_cells + 1] += 0.5 * h
    return w


def pathwise_V_regularized(path, sheet: SheetSample, m: MollifierParams, t_eval: float,
                           noise: Optional[SmoothedNoise] = None) -> float:
    """Trapezoid rule for int_0^{t ^ tau} Wdot(t_eval - s, X_s) ds on the path grid."""
    noise = noise or SmoothedNoise(sheet, m)
    n = path.n_cells
    if n == 0:
        return 0.0
    s = np.asarray(path.times)[: n + 1]
    vals = noise(t_eval - s, np.asarray(path.states)[: n + 1])
    return float(np.dot(_trapezoid_weights(np.asarray(path.times), n)[: n + 1], vals))


def V_batch_from_table(batch, table: NoiseTable) -> np.ndarray:
    """Trapezoid V for every path in a batch; table rows align with the path grid."""
    times = batch.times
    if table.taus.size != times.size:
        raise ValidationError("noise table rows must align with the path time grid")
    h = np.diff(times)
    ncell = batch.n_cells
    V = np.zeros(len(batch))
    for i in range(times.size):
        alive_l = ncell > i  # node i is the left end of a live cell
        alive_r = (ncell >= i) & (i > 0)  # node i closes cell i-1
        use = alive_l | alive_r
        if not np.any(use):
            break
        vals = table.at_row(i, batch.states[use, i])
        wt = np.where(alive_l[use], 0.5 * h[i] if i < h.size else 0.0, 0.0)
        wt = wt + np.where(alive_r[use], 0.5 * h[i - 1] if i > 0 else 0.0, 0.0)
        V[use] += wt * vals
    return V


def V_samples(path, grid: SheetGrid, hurst: HurstParams, m: MollifierParams, t_eval: float,
              seed: int, n_samples: int, block: int = 256) -> np.ndarray:
    """V^{eps,delta} for one frozen path across independent sheet samples."""
    n = path.n_cells
    s = np.asarray(path.times)[: n + 1]
    X = np.asarray(path.states)[: n + 1]
    tau = t_eval - s
    _check_coverage(grid, m, np.abs(tau), X)
    wts = _trapezoid_weights(np.asarray(path.times), n)[: n + 1]
    # Linear functional of the increments: time interpolation matrix minus its lag.
    nt = grid.times.size
    eye = np.eye(nt)
    Tm = (_time_rows(eye, grid.times, np.abs(tau)) - _time_rows(eye, grid.times, np.maximum(np.abs(tau) - m.delta, 0.0))) / m.delta
    Ks = [_cell_kernel(X[:, k], a, m.eps) for k, a in enumerate(grid.axes)]
    out = np.empty(n_samples)
    for b0 in range(0, n_samples, block):
        nb = min(block, n_samples - b0)
        W = sample_sheets(grid, hurst, derive_seed(seed, b0 // block), nb)
        G = _cell_increments(W, grid.d)  # (nb, nt, c...)
        G = np.tensordot(G, Tm, axes=([1], [1]))  # (nb, c..., N)
        G = np.moveaxis(G, -1, 1)  # (nb, N, c...)
        for K in Ks:
            G = np.einsum("bnc...,nc->bn...", G, K)
        out[b0:b0 + nb] = G @ wts
    return out


# ---------------------------------------------------------------------------
# Variance oracle


def abs_moment_gauss(mu, sigma: float, p: float):
    """E|mu + sigma Z|^p for p > -1 via the confluent hypergeometric function."""
    mu = np.asarray(mu, dtype=float)
    c = sigma ** p * 2 ** (p / 2) * special.gamma((p + 1) / 2) / math.sqrt(math.pi)
    return c * special.hyp1f1(-p / 2, 0.5, -mu ** 2 / (2 * sigma ** 2))


def window_kernel(u, v, h0: float, delta: float):
    """(1/delta^2) int int over [u-delta, u] x [v-delta, v], clipped at 0, of |r - s|^{2 h0 - 2}."""
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    return cell_integral(np.maximum(u - delta, 0), u, np.maximum(v - delta, 0), v, h0) / delta ** 2


def variance_quadrature(path, hurst: HurstParams, m: MollifierParams, t_eval: float,
                        alpha: Optional[float] = None) -> float:
    """<A, A>_H for the trapezoid-discretized V of a frozen path, continuum sheet."""
    alpha = hurst.alpha if alpha is None else alpha
    n = path.n_cells
    if n == 0:
        return 0.0
    s = np.asarray(path.times)[: n + 1]
    X = np.asarray(path.states)[: n + 1]
    wts = _trapezoid_weights(np.asarray(path.times), n)[: n + 1]
    tau = t_eval - s
    M = window_kernel(tau[:, None], tau[None, :], hurst.h0, m.delta)
    sig = math.sqrt(2 * m.eps)
    for k, H in enumerate(hurst.h_space):
        M = M * abs_moment_gauss(X[:, None, k] - X[None, :, k], sig, 2 * H - 2)
    return float(alpha * wts @ M @ wts)


# ---------------------------------------------------------------------------
# Persistence

SHEET_MAGIC = b"FKSHEET1"


def save_sheet(sheet: SheetSample, fh) -> None:
    """Binary blob: magic, u32 header length, JSON header, then float64 arrays."""
    header = {
        "version": 1,
        "shape": list(sheet.values.shape),
        "d": sheet.grid.d,
        "seed": int(sheet.seed),
        "hurst": None if sheet.hurst is None else [sheet.hurst.h0] + list(sheet.hurst.h_space),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    fh.write(SHEET_MAGIC)
    fh.write(len(hb).to_bytes(4, "little"))
    fh.write(hb)
    for a in (sheet.grid.times,) + sheet.grid.axes + (sheet.values,):
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_sheet(fh) -> SheetSample:
    if fh.read(len(SHEET_MAGIC)) != SHEET_MAGIC:
        raise ValidationError("not a sheet blob")
    n = int.from_bytes(fh.read(4), "little")
    header = json.loads(fh.read(n))
    if header.get("version") != 1:
        raise ValidationError(f"unsupported sheet blob version {header.get('version')}")
    shape = header["shape"]
    read = lambda k: np.frombuffer(fh.read(8 * k), dtype="<f8").copy()
    times = read(shape[0])
    axes = tuple(read(k) for k in shape[1:])
    values = read(int(np.prod(shape))).reshape(shape)
    h = header["hurst"]
    hurst = None if h is None else HurstParams(h[0], tuple(h[1:]))
    return SheetSample(SheetGrid(times, axes), values, header["seed"], hurst)
