"""Exponent extraction: Holder curves, moment growth fits, closed-form exponents."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import HolderUnavailable, InsufficientSamples, NonPositiveEstimate, ValidationError
from .estimator import moment_estimate
from .kernels import DEFAULT_FLOOR_COEF, KernelWeights, cross_energies, midpoints, self_energies, temporal_weights
from .model import HurstParams, Product, ProblemSpec, validate_hurst
from .pathsim import PathConfig, simulate_batch, simulate_coupled
from .rng import Moments, chunk_sizes, derive_seed, merge_all, parallel_map


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    stderr: float
    r2: float
    window: tuple

    def within(self, target: float, tol: float) -> bool:
        return abs(self.slope - target) <= tol


def fit_loglog(x, y) -> ExponentFit:
    """Least-squares slope of log y against log x."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise InsufficientSamples("log-log fit needs >= 2 strictly positive points")
    return fit_linear(np.log(x), np.log(y), window=(float(x.min()), float(x.max())))


def fit_linear(u, v, window: Optional[tuple] = None) -> ExponentFit:
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    A = np.column_stack([u, np.ones_like(u)])
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    resid = v - A @ coef
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    if u.size > 2:
        s2 = float(resid @ resid) / (u.size - 2)
        stderr = math.sqrt(s2 / float(np.sum((u - u.mean()) ** 2)))
    else:
        stderr = 0.0
    return ExponentFit(float(coef[0]), float(coef[1]), stderr, min(max(r2, 0.0), 1.0),
                       window or (float(u.min()), float(u.max())))


@dataclass(frozen=True)
class TheoryExponents:
    rho: float
    rho_prime: Optional[float]
    t_exp: float
    p_exp: float


def theory_exponents(hurst: HurstParams, d: Optional[int] = None, strict: bool = False) -> TheoryExponents:
    """Closed-form exponents. rho' needs min H_i > 5/6; otherwise it is None,
    or HolderUnavailable is raised when ``strict``."""
    d = hurst.d if d is None else d
    validate_hurst(hurst, d)
    sh = hurst.total_space
    rho = 2 * hurst.h0 + sh - d - 1
    t_exp = (2 * hurst.h0 + sh - d) / (sh + 1 - d)
    p_exp = (sh + 2 - d) / (sh + 1 - d)
    if min(hurst.h_space) > 5.0 / 6.0:
        rho_p = min([rho] + [(6 * h - 5) / (2 * h - 1) for h in hurst.h_space])
    else:
        if strict:
            raise HolderUnavailable(f"rho' needs min H_i > 5/6, got {min(hurst.h_space)}")
        rho_p = None
    return TheoryExponents(rho, rho_p, t_exp, p_exp)


# ---------------------------------------------------------------------------
# Holder curves


@dataclass
class HolderCurve:
    kind: str
    offsets: list
    values: np.ndarray
    se: np.ndarray
    n_paths: int
    fit: Optional[ExponentFit] = None

    def rows(self) -> list:
        return [{"kind": self.kind, "offset": float(o), "value": float(v), "se": float(s)}
                for o, v, s in zip(self.offsets, self.values, self.se)]


def _offset_norm(o) -> float:
    return float(np.linalg.norm(np.atleast_1d(o)))


def holder_variance_curve(spec: ProblemSpec, t: float, x, offsets: Sequence, n_paths: int, seed: int,
                          kind: str = "space", n_steps: int = 800, floor_coef: float = DEFAULT_FLOOR_COEF,
                          chunk: int = 1024, workers: int = 1) -> HolderCurve:
    """E|V(t, x) - V(s, y)|^2 through the conditional variance identity.

    Given the Brownian paths, V(t, x) - V(s, y) is centered Gaussian with
    variance alpha * (E(X, X) + E(Y, Y) - 2 C(X, Y)), where C uses the kernel
    |(t - u) - (s - v)|^{2 H0 - 2} of the two noise clocks. X and Y share the
    Brownian increments. ``kind="space"``: offsets are displacements of x
    (scalars move along the first axis), s = t. ``kind="time"``: offsets are
    t - s > 0 and must be multiples of the step t / n_steps.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if kind not in ("space", "time"):
        raise ValidationError(f"kind must be 'space' or 'time', got {kind!r}")
    cfg = PathConfig(n_steps, t, tuple(x), seed)
    W = temporal_weights(cfg.times(), spec.hurst.h0)
    dt = cfg.dt
    alpha = spec.alpha
    sizes = chunk_sizes(n_paths, chunk)
    coeffs = spec.path_coefficients()

    plans = []
    for o in offsets:
        if kind == "space":
            v = np.atleast_1d(np.asarray(o, dtype=float))
            y = x + (v if v.size == x.size else np.eye(x.size)[0] * float(v[0]))
            plans.append((_offset_norm(o) == 0.0, y, 0))
        else:
            m = int(round(float(o) / dt))
            if abs(m * dt - float(o)) > 1e-9 or m < 0 or m >= n_steps - 1:
                raise ValidationError(f"time offset {o} is not a usable multiple of dt={dt}")
            plans.append((m == 0, x, m))

    def run(c):
        sub = derive_seed(seed, c)
        bx = simulate_batch(spec, PathConfig(n_steps, t, tuple(x), sub), sizes[c], coeffs=coeffs)
        mx = midpoints(bx.states)
        sx, _ = self_energies(mx, bx.n_cells, spec.hurst, W, floor_coef)
        out = []
        for zero, y, m in plans:
            if zero:
                out.append(Moments.of(np.zeros(sizes[c])))
                continue
            if kind == "space":
                by = simulate_batch(spec, PathConfig(n_steps, t, tuple(y), sub), sizes[c], coeffs=coeffs)
                wy, Wc = W, W
            else:
                by = simulate_batch(spec, PathConfig(n_steps - m, t - m * dt, tuple(y), sub), sizes[c], coeffs=coeffs)
                wy = temporal_weights(by.times, spec.hurst.h0)
                Wc = KernelWeights(W.grid, np.ascontiguousarray(W.w[:, m:]), W.h0)
            my = midpoints(by.states)
            sy, _ = self_energies(my, by.n_cells, spec.hurst, wy, floor_coef)
            cxy, _ = cross_energies(mx, my, bx.n_cells, by.n_cells, spec.hurst, Wc, floor_coef)
            out.append(Moments.of(alpha * (sx + sy - 2.0 * cxy)))
        return out

    res = parallel_map(run, len(sizes), workers)
    moms = [merge_all([r[j] for r in res]) for j in range(len(plans))]
    vals = np.array([m.mean for m in moms])
    se = np.array([m.se for m in moms])
    mags = [_offset_norm(o) for o in offsets]
    pos = [i for i, mg in enumerate(mags) if mg > 0 and vals[i] > 0]
    fit = fit_loglog([mags[i] for i in pos], vals[pos]) if len(pos) >= 2 else None
    return HolderCurve(kind, list(offsets), vals, se, n_paths, fit)


# ---------------------------------------------------------------------------
# Moment growth


@dataclass
class MomentGrowth:
    t_fit: ExponentFit
    k_fit: ExponentFit
    sandwich: ExponentFit
    sandwich_coef: tuple  # (a_t, b_k, c)
    points: list = field(default_factory=list)
    theory: Optional[TheoryExponents] = None


def moment_growth_fit(spec: ProblemSpec, x, t_grid: Sequence[float], k_grid: Sequence[int], n_batches: int,
                      seed: int, t_fixed: float = 1.0, k_fixed: int = 2, steps_per_unit: int = 100,
                      floor_coef: float = DEFAULT_FLOOR_COEF, min_survival: float = 0.5,
                      workers: int = 1) -> MomentGrowth:
    """Slopes of log log E[u^k] in log t (k fixed) and in log k (t fixed).

    Values are median-of-means replica estimates. Points whose smallest
    replica survival is below ``min_survival`` are dropped from the fits.
    """
    if Product(spec.product) != Product.STRATONOVICH:
        raise ValidationError("moment growth fits need the Stratonovich product")
    pairs = sorted({(float(t), int(k_fixed)) for t in t_grid} | {(float(t_fixed), int(k)) for k in k_grid})
    points = []
    for t, k in pairs:
        n_steps = max(2, int(round(steps_per_unit * t)))
        est = moment_estimate(spec, t, x, k, n_batches, derive_seed(seed, int(round(t * 1e6)), k),
                              n_steps=n_steps, floor_coef=floor_coef, workers=workers)
        val = est.mom_value
        if not (val is not None and val > 1.0):
            raise NonPositiveEstimate(f"log E[u^{k}] at t={t} is not positive (estimate {val})")
        points.append({"t": t, "k": k, "value": val, "mean": est.value, "se": est.std_error,
                       "mom_error": est.mom_error, "loglog": math.log(math.log(val)), "survival": est.survival,
                       "digest": est.config_digest})
    use = [p for p in points if p["survival"] is None or p["survival"] >= min_survival]
    tp = [p for p in use if p["k"] == k_fixed and p["t"] in set(map(float, t_grid))]
    kp = [p for p in use if abs(p["t"] - t_fixed) < 1e-12 and p["k"] in set(map(int, k_grid))]
    if len(tp) < 2 or len(kp) < 2:
        raise InsufficientSamples("not enough surviving points for the growth fits")
    t_fit = fit_linear(np.log([p["t"] for p in tp]), [p["loglog"] for p in tp],
                       window=(min(p["t"] for p in tp), max(p["t"] for p in tp)))
    k_fit = fit_linear(np.log([p["k"] for p in kp]), [p["loglog"] for p in kp],
                       window=(min(p["k"] for p in kp), max(p["k"] for p in kp)))
    # Single-exponent model loglog = a log t + b log k + c over every point.
    A = np.column_stack([np.log([p["t"] for p in use]), np.log([p["k"] for p in use]), np.ones(len(use))])
    v = np.array([p["loglog"] for p in use])
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    resid = v - A @ coef
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    sandwich = ExponentFit(float(coef[0]), float(coef[2]), 0.0, min(max(r2, 0.0), 1.0), (len(use),))
    return MomentGrowth(t_fit, k_fit, sandwich, tuple(map(float, coef)), points,
                        theory_exponents(spec.hurst))


# ---------------------------------------------------------------------------
# Parameter sensitivity


@dataclass
class SensitivityCurve:
    t_ref: float
    gaps: list
    values: np.ndarray  # E sup_r |X_r^{t_ref} - X_r^{t_ref - gap}|^p
    se: np.ndarray
    p: float
    n_paths: int
    fit: Optional[ExponentFit] = None

    def rows(self) -> list:
        return [{"gap": float(g), "value": float(v), "se": float(s)} for g, v, s in zip(self.gaps, self.values, self.se)]


def sensitivity_curve(spec: ProblemSpec, x, t_ref: float, gaps: Sequence[float], n_paths: int, seed: int,
                      n_steps: int = 200, p: float = 2.0, horizon: Optional[float] = None, chunk: int = 8192,
                      workers: int = 1) -> SensitivityCurve:
    """E sup_r |X_r^{t1,x} - X_r^{t2,x}|^p over coupled paths, t1 = t_ref, t2 = t_ref - gap.

    Both paths share Brownian increments and run on [0, horizon] (default
    t_ref - max(gaps)) so that every pair is defined on the same window.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    gaps = [float(g) for g in gaps]
    if any(g < 0 or g >= t_ref for g in gaps):
        raise ValidationError("gaps must lie in [0, t_ref)")
    span = float(horizon) if horizon is not None else t_ref - max(gaps)
    if not span > 0:
        raise ValidationError("coupled window is empty")
    sizes = chunk_sizes(n_paths, chunk)

    def run(c):
        cfg = PathConfig(n_steps, t_ref, tuple(x), derive_seed(seed, c), horizon=span)
        out = []
        for g in gaps:
            a, b = simulate_coupled(spec, cfg, t_ref, t_ref - g, sizes[c])
            diff = np.max(np.linalg.norm(a.states - b.states, axis=-1), axis=1)
            out.append(Moments.of(diff ** p))
        return out

    res = parallel_map(run, len(sizes), workers)
    moms = [merge_all([r[j] for r in res]) for j in range(len(gaps))]
    vals = np.array([m.mean for m in moms])
    se = np.array([m.se for m in moms])
    pos = [i for i, g in enumerate(gaps) if g > 0 and vals[i] > 0]
    fit = fit_loglog([gaps[i] for i in pos], vals[pos]) if len(pos) >= 2 else None
    return SensitivityCurve(t_ref, gaps, vals, se, p, n_paths, fit)
