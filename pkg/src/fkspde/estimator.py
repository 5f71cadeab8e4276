"""Feynman-Kac estimators: conditional mean, fixed noise, replica moments, comparison."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import InsufficientSamples, ValidationError
from .kernels import DEFAULT_FLOOR_COEF, cross_energies, midpoints, self_energies, temporal_weights
from .model import Product, ProblemSpec, validate_hurst
from .noisefield import NoiseTable, SmoothedNoise, V_batch_from_table
from .pathsim import ExitDetection, PathBatch, PathConfig, simulate_batch, simulate_chunked
from .rng import CHUNK, Moments, chunk_sizes, derive_seed, log_mean_jackknife, median_of_means, merge_all, parallel_map


class Mode(str, enum.Enum):
    PATHWISE_FIXED_NOISE = "pathwise_fixed_noise"
    CONDITIONAL_MEAN = "conditional_mean"
    REPLICA_MOMENT = "replica_moment"


@dataclass
class FKEstimate:
    value: float
    std_error: float
    n_paths: int
    mode: Mode
    product: Product
    config_digest: str
    t: float = math.nan
    x: tuple = ()
    k: int = 1
    mom_value: Optional[float] = None
    mom_error: Optional[float] = None
    log_value: Optional[float] = None
    log_se: Optional[float] = None
    survival: Optional[float] = None
    clipped_cells: int = 0

    def record(self) -> dict:
        """JSON-ready record; floats kept at full precision."""
        return {
            "mode": Mode(self.mode).value,
            "product": Product(self.product).value,
            "t": self.t,
            "x": list(self.x),
            "k": self.k,
            "value": self.value,
            "se": self.std_error,
            "n": self.n_paths,
            "digest": self.config_digest,
            "mom_value": self.mom_value,
            "mom_error": self.mom_error,
            "log_value": self.log_value,
            "log_se": self.log_se,
            "survival": self.survival,
            "clipped_cells": self.clipped_cells,
        }


RECORD_FIELDS = ["mode", "product", "t", "x", "k", "value", "se", "n", "digest"]


def spec_fingerprint(spec: ProblemSpec) -> dict:
    """Canonical description used in digests (raw config when loaded from file)."""
    if spec.source:
        return {"source": spec.source}
    D = spec.domain
    return {
        "name": spec.name,
        "domain": [D.kind, D.lo, D.hi, D.center, D.radius],
        "hurst": [spec.hurst.h0, list(spec.hurst.h_space)],
        "coeffs": spec.coeffs.description,
        "data": spec.data.description,
        "product": Product(spec.product).value,
        "horizon": spec.horizon,
        "alpha": spec.alpha,
    }


def config_digest(spec: ProblemSpec, **params) -> str:
    payload = {"spec": spec_fingerprint(spec), "params": params, "version": __version__, "chunk": CHUNK}
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_json(records: Sequence[dict], fh, header: Optional[dict] = None) -> None:
    json.dump({"provenance": header or {}, "records": list(records)}, fh, indent=2, sort_keys=True)
    fh.write("\n")


def write_csv(rows: Sequence[dict], fh, header: Optional[dict] = None, fields: Optional[list] = None) -> None:
    """CSV with '#'-prefixed provenance lines."""
    for k, v in (header or {}).items():
        fh.write(f"# {k}: {v}\n")
    if not rows:
        return
    fields = fields or list(rows[0].keys())
    w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (json.dumps(v) if isinstance(v, (list, tuple)) else v) for k, v in r.items()})


# ---------------------------------------------------------------------------


def _prepare(spec: ProblemSpec, t: float, x) -> np.ndarray:
    validate_hurst(spec.hurst, spec.d)
    if not 0 < t <= spec.horizon * (1 + 1e-12):
        raise ValidationError(f"t={t} outside (0, T={spec.horizon}]")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != spec.d:
        raise ValidationError(f"point has dimension {x.size}, domain has {spec.d}")
    return x


def h_values(spec: ProblemSpec, batch: PathBatch, t: float) -> np.ndarray:
    """h at (t ^ tau, X_{t ^ tau}): f at the final state, g at the exit.

    Boundary data are read at the forward time t - tau of the exit.
    """
    out = np.empty(len(batch))
    ex = batch.exited
    if np.any(~ex):
        out[~ex] = spec.data.h_survived(batch.states[~ex, -1])
    if np.any(ex):
        out[ex] = spec.data.h_exited(t - batch.exit_time[ex], batch.exit_point[ex])
    return out


def _estimate(parts, weights_all, mode, spec, digest, t, x, k=1, survival=None, clipped=0) -> FKEstimate:
    mom = merge_all(parts)
    if mom.n < 2:
        raise InsufficientSamples("at least two paths are required")
    mv, me = median_of_means(weights_all, groups=min(10, len(weights_all)))
    pos = weights_all[weights_all > 0]
    lv, lse = log_mean_jackknife(weights_all) if pos.size == weights_all.size else (None, None)
    return FKEstimate(mom.mean, mom.se, mom.n, mode, Product(spec.product), digest, float(t),
                      tuple(float(v) for v in x), k, mv, me, lv, lse, survival, int(clipped))


def solve_point_conditional(spec: ProblemSpec, t: float, x, n_paths: int, seed: int, n_steps: int = 100,
                            floor_coef: float = DEFAULT_FLOOR_COEF, workers: int = 1,
                            exit_detection: ExitDetection = ExitDetection.BRIDGE_CORRECTED) -> FKEstimate:
    """E[u(t, x)] with the noise integrated out in closed form.

    Stratonovich weight h * exp(alpha/2 * E(p, p)); Skorohod weight h.
    """
    x = _prepare(spec, t, x)
    cfg = PathConfig(n_steps, t, tuple(x), seed, exit_detection)
    w = temporal_weights(cfg.times(), spec.hurst.h0)
    strat = Product(spec.product) == Product.STRATONOVICH
    alpha = spec.alpha

    def chunk(batch):
        h = h_values(spec, batch, t)
        clipped = 0
        if strat:
            e, c = self_energies(midpoints(batch.states), batch.n_cells, spec.hurst, w, floor_coef)
            h = h * np.exp(0.5 * alpha * e)
            clipped = int(c.sum())
        return h, Moments.of(h), int((~batch.exited).sum()), clipped

    res = simulate_chunked(spec, cfg, n_paths, chunk, workers)
    vals = np.concatenate([r[0] for r in res])
    digest = config_digest(spec, op="conditional", t=t, x=list(x), n=n_paths, seed=seed, steps=n_steps,
                           floor=floor_coef, exit=ExitDetection(exit_detection).value)
    return _estimate([r[1] for r in res], vals, Mode.CONDITIONAL_MEAN, spec, digest, t, x,
                     survival=sum(r[2] for r in res) / n_paths, clipped=sum(r[3] for r in res))


def noise_table_for(spec: ProblemSpec, noise: SmoothedNoise, t: float, n_steps: int, resolution: int = 401,
                    horizon: Optional[float] = None) -> NoiseTable:
    """Tabulate Wdot on the path grid (noise time t - s) over the domain's bounding box."""
    span = t if horizon is None else horizon
    s = np.linspace(0.0, span, n_steps + 1)
    lo, hi = spec.domain.bounds()
    axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
    return noise.tabulate(t - s, axes)


def solve_point_fixed_noise(spec: ProblemSpec, t: float, x, noise, n_paths: int, seed: int, n_steps: int = 100,
                            floor_coef: float = DEFAULT_FLOOR_COEF, workers: int = 1, resolution: int = 401,
                            exit_detection: ExitDetection = ExitDetection.BRIDGE_CORRECTED) -> FKEstimate:
    """u^{eps,delta}(t, x) for one noise realization: E^B[h exp(V^{eps,delta})].

    ``noise`` is a SmoothedNoise (tabulated here) or a NoiseTable aligned with
    the path grid. Skorohod mode subtracts alpha/2 * E(p, p) in the exponent.
    """
    x = _prepare(spec, t, x)
    cfg = PathConfig(n_steps, t, tuple(x), seed, exit_detection)
    table = noise if isinstance(noise, NoiseTable) else noise_table_for(spec, noise, t, n_steps, resolution)
    strat = Product(spec.product) == Product.STRATONOVICH
    w = None if strat else temporal_weights(cfg.times(), spec.hurst.h0)
    alpha = spec.alpha

    def chunk(batch):
        h = h_values(spec, batch, t)
        expo = V_batch_from_table(batch, table)
        clipped = 0
        if not strat:
            e, c = self_energies(midpoints(batch.states), batch.n_cells, spec.hurst, w, floor_coef)
            expo = expo - 0.5 * alpha * e
            clipped = int(c.sum())
        v = h * np.exp(expo)
        return v, Moments.of(v), int((~batch.exited).sum()), clipped

    res = simulate_chunked(spec, cfg, n_paths, chunk, workers)
    vals = np.concatenate([r[0] for r in res])
    digest = config_digest(spec, op="fixed_noise", t=t, x=list(x), n=n_paths, seed=seed, steps=n_steps,
                           floor=floor_coef, exit=ExitDetection(exit_detection).value,
                           table=hashlib.sha256(np.ascontiguousarray(table.values).tobytes()).hexdigest()[:16])
    return _estimate([r[1] for r in res], vals, Mode.PATHWISE_FIXED_NOISE, spec, digest, t, x,
                     survival=sum(r[2] for r in res) / n_paths, clipped=sum(r[3] for r in res))


def replica_exponents(batches: Sequence[PathBatch], spec: ProblemSpec, weights, floor_coef: float) -> tuple:
    """(alpha/2) * sum over replica pairs, per batch row; returns (exponent, clipped)."""
    k = len(batches)
    mids = [midpoints(b.states) for b in batches]
    ncs = [b.n_cells for b in batches]
    total = np.zeros(len(batches[0]))
    clipped = 0
    if Product(spec.product) == Product.STRATONOVICH:
        for i in range(k):
            e, c = self_energies(mids[i], ncs[i], spec.hurst, weights, floor_coef)
            total += e
            clipped += int(c.sum())
    for i in range(k):
        for j in range(i + 1, k):
            e, c = cross_energies(mids[i], mids[j], ncs[i], ncs[j], spec.hurst, weights, floor_coef)
            total += 2.0 * e
            clipped += 2 * int(c.sum())
    return 0.5 * spec.alpha * total, clipped


def moment_estimate(spec: ProblemSpec, t: float, x, k: int, n_batches: int, seed: int, n_steps: int = 100,
                    floor_coef: float = DEFAULT_FLOOR_COEF, workers: int = 1,
                    exit_detection: ExitDetection = ExitDetection.BRIDGE_CORRECTED,
                    chunk: int = CHUNK) -> FKEstimate:
    """E[u(t, x)^k] by the replica formula over ``n_batches`` groups of k paths.

    Replica l in chunk c uses seed derive_seed(seed, l, c). Stratonovich sums
    all ordered pairs (i, j); Skorohod keeps i != j only.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    x = _prepare(spec, t, x)
    cfg = PathConfig(n_steps, t, tuple(x), seed, exit_detection)
    w = temporal_weights(cfg.times(), spec.hurst.h0)
    sizes = chunk_sizes(n_batches, chunk)
    coeffs = spec.path_coefficients()

    def run(c):
        batches = [simulate_batch(spec, PathConfig(n_steps, t, tuple(x), derive_seed(seed, l, c), exit_detection),
                                  sizes[c], coeffs=coeffs) for l in range(k)]
        h = np.prod([h_values(spec, b, t) for b in batches], axis=0)
        expo, clipped = replica_exponents(batches, spec, w, floor_coef)
        v = h * np.exp(expo)
        surv = min(float((~b.exited).mean()) for b in batches)
        return v, Moments.of(v), surv * sizes[c], clipped

    res = parallel_map(run, len(sizes), workers)
    vals = np.concatenate([r[0] for r in res])
    digest = config_digest(spec, op="moment", t=t, x=list(x), k=k, n=n_batches, seed=seed, steps=n_steps,
                           floor=floor_coef, exit=ExitDetection(exit_detection).value)
    return _estimate([r[1] for r in res], vals, Mode.REPLICA_MOMENT, spec, digest, t, x, k=k,
                     survival=sum(r[2] for r in res) / n_batches, clipped=sum(r[3] for r in res))


# ---------------------------------------------------------------------------
# Brownian comparison


def abs_gauss_moment(p: float) -> float:
    """E|Z|^p for a standard normal Z, p > -1."""
    return 2 ** (p / 2) * math.gamma((p + 1) / 2) / math.sqrt(math.pi)


def brownian_functional(hurst, s, r, kappa2: float = 1.0) -> np.ndarray:
    """E prod_m |B_{kappa2 s} - B_{kappa2 r}|_m^{2 H_m - 2} in closed form."""
    gap = kappa2 * np.abs(np.subtract(s, r))
    out = np.ones_like(gap, dtype=float)
    for H in hurst.h_space:
        p = 2 * H - 2
        out = out * gap ** (p / 2) * abs_gauss_moment(p)
    return out


@dataclass
class ComparisonReport:
    s_grid: list
    r_grid: list
    kappa1: float
    kappa2: float
    lhs: np.ndarray
    lhs_se: np.ndarray
    rhs: np.ndarray
    violations: list
    n_paths: int
    z: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def rows(self) -> list:
        out = []
        for a, s in enumerate(self.s_grid):
            for b, r in enumerate(self.r_grid):
                out.append({"s": s, "r": r, "lhs": float(self.lhs[a, b]), "lhs_se": float(self.lhs_se[a, b]),
                            "rhs": float(self.rhs[a, b]), "violation": (a, b) in self.violations})
        return out


def comparison_check(spec: ProblemSpec, x, s_grid: Sequence[float], r_grid: Sequence[float], n_paths: int,
                     seed: int, kappa1: float, kappa2: float, steps_per_unit: int = 200, z: float = 3.0,
                     workers: int = 1) -> ComparisonReport:
    """E[prod |X_s - X_r|^{2H-2}] <= kappa1^2 E[same for B_{kappa2 .}] on an (s, r) grid.

    Paths are killed on exit; a killed path contributes 0, which can only lower
    the left side. The tolerance is z standard errors of the Monte Carlo side.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grid = sorted(set(map(float, s_grid)) | set(map(float, r_grid)))
    if grid[0] <= 0:
        raise ValidationError("comparison times must be positive")
    if set(map(float, s_grid)) & set(map(float, r_grid)):
        raise ValidationError("s and r grids must be disjoint (the functional is singular at s = r)")
    T = grid[-1]
    n_steps = max(2, int(round(steps_per_unit * T)))
    dt = T / n_steps
    idx = {g: int(round(g / dt)) for g in grid}
    if any(abs(idx[g] * dt - g) > 1e-9 for g in grid):
        raise ValidationError("comparison times must lie on the simulation grid")
    cfg = PathConfig(n_steps, T, tuple(x), seed, horizon=T)
    exps = spec.hurst.space_exponents

    def chunk(batch):
        m = np.empty((len(s_grid), len(r_grid)), dtype=object)
        for a, s in enumerate(s_grid):
            for b, r in enumerate(r_grid):
                i, j = idx[float(s)], idx[float(r)]
                alive = batch.alive_at(max(i, j))
                diff = np.abs(batch.states[:, i] - batch.states[:, j])
                with np.errstate(divide="ignore"):
                    f = np.prod(diff ** exps, axis=1)
                m[a, b] = Moments.of(np.where(alive, f, 0.0))
        return m

    parts = simulate_chunked(spec, cfg, n_paths, chunk, workers)
    lhs = np.empty((len(s_grid), len(r_grid)))
    se = np.empty_like(lhs)
    for a in range(len(s_grid)):
        for b in range(len(r_grid)):
            mom = merge_all([p[a, b] for p in parts])
            lhs[a, b], se[a, b] = mom.mean, mom.se
    S, R = np.meshgrid(np.asarray(s_grid, float), np.asarray(r_grid, float), indexing="ij")
    rhs = kappa1 ** 2 * brownian_functional(spec.hurst, S, R, kappa2)
    viol = [(a, b) for a in range(lhs.shape[0]) for b in range(lhs.shape[1]) if lhs[a, b] - z * se[a, b] > rhs[a, b]]
    return ComparisonReport(list(s_grid), list(r_grid), kappa1, kappa2, lhs, se, rhs, viol, n_paths, z)
