"""Killed time-reversed diffusions: simulation, exit detection, density checks."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import CoefficientEvaluationFailure, InsufficientSamples, StartOutsideDomain, ValidationError
from .model import CoefficientField, ProblemSpec
from .rng import CHUNK, chunk_sizes, derive_seed, make_rng, parallel_map


class ExitDetection(str, enum.Enum):
    GRID_ONLY = "grid_only"
    BRIDGE_CORRECTED = "bridge_corrected"


@dataclass(frozen=True)
class PathConfig:
    """Discretization of X^{t,x} on [0, horizon] with coefficients at time t_eval - s.

    ``horizon`` defaults to ``t_eval``; coupled runs share a horizon while
    their ``t_eval`` differ.
    """

    n_steps: int
    t_eval: float
    x0: tuple
    seed: int
    exit_detection: ExitDetection = ExitDetection.BRIDGE_CORRECTED
    horizon: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        object.__setattr__(self, "exit_detection", ExitDetection(self.exit_detection))
        if self.n_steps < 2:
            raise ValidationError(f"n_steps must be >= 2, got {self.n_steps}")
        if not self.span > 0:
            raise ValidationError("path horizon must be positive")

    @property
    def span(self) -> float:
        return float(self.t_eval if self.horizon is None else self.horizon)

    @property
    def dt(self) -> float:
        return self.span / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.span, self.n_steps + 1)


@dataclass(frozen=True)
class KilledPath:
    times: np.ndarray
    states: np.ndarray
    exit_index: Optional[int] = None
    exit_time: Optional[float] = None
    exit_point: Optional[np.ndarray] = None

    @property
    def n_cells(self) -> int:
        """Cells of the time grid on which the path is alive."""
        return len(self.times) - 1 if self.exit_index is None else int(self.exit_index)

    @property
    def exited(self) -> bool:
        return self.exit_index is not None


@dataclass
class PathBatch:
    """Struct-of-arrays batch; states after exit are frozen at the exit point."""

    times: np.ndarray
    states: np.ndarray  # (P, n+1, d)
    exit_index: np.ndarray  # (P,), -1 when the path survives the horizon
    exit_time: np.ndarray  # (P,), nan when surviving
    exit_point: np.ndarray  # (P, d), nan when surviving
    t_eval: float
    seed: int

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def exited(self) -> np.ndarray:
        return self.exit_index >= 0

    @property
    def n_cells(self) -> np.ndarray:
        return np.where(self.exited, self.exit_index, self.n_steps).astype(np.int64)

    def alive_at(self, i: int) -> np.ndarray:
        """Paths that have not exited by grid index i."""
        return (self.exit_index < 0) | (self.exit_index > i)

    def stop_states(self) -> np.ndarray:
        """X at t ^ tau: exit point if exited, else the final state."""
        return np.where(self.exited[:, None], self.exit_point, self.states[:, -1])

    def stop_times(self) -> np.ndarray:
        return np.where(self.exited, self.exit_time, self.times[-1])

    def path(self, j: int) -> KilledPath:
        e = int(self.exit_index[j])
        if e < 0:
            return KilledPath(self.times, self.states[j])
        return KilledPath(self.times, self.states[j], e, float(self.exit_time[j]), self.exit_point[j].copy())

    @classmethod
    def concat(cls, parts: Sequence["PathBatch"]) -> "PathBatch":
        return cls(
            parts[0].times,
            np.concatenate([p.states for p in parts]),
            np.concatenate([p.exit_index for p in parts]),
            np.concatenate([p.exit_time for p in parts]),
            np.concatenate([p.exit_point for p in parts]),
            parts[0].t_eval,
            parts[0].seed,
        )


def _check_start(spec: ProblemSpec, x0: np.ndarray):
    if np.any(spec.domain.signed_distance(x0) <= spec.domain.default_tol):
        raise StartOutsideDomain(f"start point(s) not in the interior of the domain")


def simulate_batch(spec: ProblemSpec, cfg: PathConfig, n_paths: int, x0s: Optional[np.ndarray] = None,
                   coeffs: Optional[CoefficientField] = None) -> PathBatch:
    """Euler-Maruyama for dX = sigma(t-s, X) dB + b(t-s, X) ds, stopped on exit.

    The random stream (normals and one uniform per path and step) is drawn in
    full whatever the exit mode, so results are a function of (cfg.seed,
    n_paths) only and both exit modes share increments. With bridge correction a surviving
    step is killed with probability 1 - prod_f (1 - exp(-2 d1 d2 / (a_nn dt)))
    over the faces f, where d1, d2 are the distances of both endpoints to f.
    """
    D = spec.domain
    d = D.d
    coeffs = spec.path_coefficients() if coeffs is None else coeffs
    n = cfg.n_steps
    dt = cfg.dt
    sqdt = math.sqrt(dt)
    times = cfg.times()
    x = np.broadcast_to(np.asarray(cfg.x0 if x0s is None else x0s, dtype=float), (n_paths, d)).copy()
    _check_start(spec, x)
    bridge = cfg.exit_detection == ExitDetection.BRIDGE_CORRECTED

    rng = make_rng(cfg.seed)
    # Time-major while stepping: each step writes one contiguous slab.
    tm = np.empty((n + 1, n_paths, d))
    tm[0] = x
    exit_index = np.full(n_paths, -1, dtype=np.int64)
    exit_time = np.full(n_paths, np.nan)
    exit_point = np.full((n_paths, d), np.nan)
    alive = np.arange(n_paths)

    for i in range(n):
        z = rng.standard_normal((n_paths, d))
        u = rng.random(n_paths)
        if alive.size == 0:
            tm[i + 1] = x
            continue
        xa = x[alive]
        tc = cfg.t_eval - times[i]
        try:
            b = np.asarray(coeffs.b(tc, xa), dtype=float)
            s = np.asarray(coeffs.sigma(tc, xa), dtype=float)
        except Exception as exc:  # surfaced with context
            raise CoefficientEvaluationFailure(f"coefficient evaluation failed at t={tc}: {exc}") from exc
        xn = xa + b * dt + np.einsum("nij,nj->ni", s, z[alive]) * sqdt
        if not np.all(np.isfinite(xn)):
            raise CoefficientEvaluationFailure(f"non-finite state at step {i}")
        sd_new = D.signed_distance(xn)
        out = sd_new <= 0.0
        face = None
        if bridge:
            keep = ~out
            if np.any(keep):
                d1 = D.face_distances(xa[keep])
                d2 = D.face_distances(xn[keep])
                var = D.face_normal_variance(xa[keep], np.einsum("nik,njk->nij", s[keep], s[keep]))
                p_face = np.exp(-2.0 * np.maximum(d1, 0) * np.maximum(d2, 0) / (var * dt))
                p_hit = 1.0 - np.prod(1.0 - p_face, axis=1)
                hit = np.zeros(alive.size, dtype=bool)
                hit[keep] = u[alive[keep]] < p_hit
                face = np.full(alive.size, -1)
                face[keep] = np.argmax(p_face, axis=1)
                out = out | hit
        x[alive] = xn
        if np.any(out):
            idx = alive[out]
            exit_index[idx] = i + 1
            grid_exit = sd_new[out] <= 0.0
            d_in = D.signed_distance(xa[out])
            theta = np.where(grid_exit, d_in / np.maximum(d_in - sd_new[out], 1e-300), 0.5)
            exit_time[idx] = times[i] + np.clip(theta, 0.0, 1.0) * dt
            pts = xn[out]
            proj = np.empty_like(pts)
            if np.any(grid_exit):
                proj[grid_exit] = D.project(pts[grid_exit])
            if np.any(~grid_exit):
                f = face[out][~grid_exit] if face is not None else None
                proj[~grid_exit] = D.project(pts[~grid_exit], face=f)
            exit_point[idx] = proj
            x[idx] = proj
            alive = alive[~out]
        tm[i + 1] = x

    # Exited paths keep x frozen at the exit point, so the slabs are already filled.
    states = np.ascontiguousarray(tm.transpose(1, 0, 2))
    return PathBatch(times, states, exit_index, exit_time, exit_point, cfg.t_eval, cfg.seed)


def simulate_path(spec: ProblemSpec, cfg: PathConfig) -> KilledPath:
    """One killed trajectory; deterministic given ``cfg.seed``."""
    return simulate_batch(spec, cfg, 1).path(0)


def simulate_replicas(spec: ProblemSpec, base_cfg: PathConfig, k: int, master_seed: int,
                      workers: int = 1) -> list[KilledPath]:
    """k independent paths; path j uses seed derive_seed(master_seed, j)."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    coeffs = spec.path_coefficients()

    def one(j):
        cfg = replace(base_cfg, seed=derive_seed(master_seed, j))
        return simulate_batch(spec, cfg, 1, coeffs=coeffs).path(0)

    return parallel_map(one, k, workers)


def simulate_chunked(spec: ProblemSpec, cfg: PathConfig, n_paths: int, fn, workers: int = 1,
                     chunk: int = CHUNK, key: tuple = ()):
    """Apply ``fn(batch)`` to fixed-size chunks; chunk c uses seed derive(cfg.seed, *key, c)."""
    sizes = chunk_sizes(n_paths, chunk)
    coeffs = spec.path_coefficients()

    def run(c):
        sub = replace(cfg, seed=derive_seed(cfg.seed, *key, c))
        return fn(simulate_batch(spec, sub, sizes[c], coeffs=coeffs))

    return parallel_map(run, len(sizes), workers)


def simulate_coupled(spec: ProblemSpec, cfg: PathConfig, t1: float, t2: float,
                     n_paths: int = 1) -> tuple[PathBatch, PathBatch]:
    """Paths X^{t1,x} and X^{t2,x} driven by the same Brownian increments.

    Both run on the grid of ``cfg`` (horizon ``cfg.span``); only the time
    origin of the coefficients differs.
    """
    for t in (t1, t2):
        if not 0 < t <= spec.horizon + 1e-12:
            raise ValidationError(f"coupled time {t} outside (0, T]")
    horizon = cfg.span
    coeffs = spec.path_coefficients()
    a = simulate_batch(spec, replace(cfg, t_eval=t1, horizon=horizon), n_paths, coeffs=coeffs)
    b = simulate_batch(spec, replace(cfg, t_eval=t2, horizon=horizon), n_paths, coeffs=coeffs)
    return a, b


# ---------------------------------------------------------------------------
# Killed-density diagnostics


@dataclass
class DensityReport:
    times: list
    edges: list
    counts: list  # per time, histogram counts of surviving paths
    n_paths: int
    survival: list
    C_fit: float
    c_fit: float
    C_cert: float
    fit_violations: int
    kappa1: float
    kappa2: float
    ck_tv: Optional[float]
    ck_r: Optional[float]
    mass_total: float
    mass_se: float

    @property
    def envelope_certified(self) -> bool:
        return bool(np.isfinite(self.C_cert) and self.C_cert > 0 and self.c_fit > 0)

    def as_dict(self) -> dict:
        return {
            "times": list(map(float, self.times)),
            "n_paths": self.n_paths,
            "survival": list(map(float, self.survival)),
            "C_fit": self.C_fit,
            "c_fit": self.c_fit,
            "C_cert": self.C_cert,
            "fit_violations": self.fit_violations,
            "kappa1": self.kappa1,
            "kappa2": self.kappa2,
            "ck_tv": self.ck_tv,
            "ck_r": self.ck_r,
            "mass_total": self.mass_total,
            "mass_se": self.mass_se,
            "envelope_certified": self.envelope_certified,
        }


def _histogram(points: np.ndarray, edges: list) -> np.ndarray:
    h, _ = np.histogramdd(points, bins=edges)
    return h


def _bin_geometry(edges: list):
    centers = np.stack(np.meshgrid(*[0.5 * (e[1:] + e[:-1]) for e in edges], indexing="ij"), axis=-1)
    vol = np.prod(np.meshgrid(*[np.diff(e) for e in edges], indexing="ij"), axis=0)
    return centers, vol


def empirical_density_check(spec: ProblemSpec, x0, times: Sequence[float], n_paths: int, bins: int = 40,
                            seed: int = 0, steps_per_unit: int = 200, ck: bool = True,
                            ck_paths: Optional[int] = None, z: float = 3.0, min_bulk: float = 20.0,
                            workers: int = 1) -> DensityReport:
    """Histogram the killed density from x0 and fit a Gaussian envelope.

    The envelope is C (2 pi s)^(-d/2) exp(-c |x - y|^2 / (2 s)); (log C, c)
    come from least squares on bulk bins across all times, then C is raised to
    the smallest value dominating every bin's lower z-sigma bound. The
    equivalent Aronson pair is kappa2 = 1/c, kappa1 = C c^(-d/2).

    With ``ck`` the last time s is split at r = s/2: paths restarted from
    uniform points in each r-bin are propagated by s - r and the convolution
    is compared with the direct s-histogram in total variation.
    """
    D = spec.domain
    d = D.d
    times = sorted(float(t) for t in times)
    s_max = times[-1]
    n_steps = max(2, int(round(steps_per_unit * s_max)))
    if ck and n_steps % 2:
        n_steps += 1
    dt = s_max / n_steps
    idx = [int(round(t / dt)) for t in times]
    if any(abs(i * dt - t) > 1e-9 * max(1.0, t) for i, t in zip(idx, times)):
        raise ValidationError("density times must lie on the simulation grid")
    lo, hi = D.bounds()
    edges = [np.linspace(lo[m], hi[m], bins + 1) for m in range(d)]
    centers, vol = _bin_geometry(edges)
    x0 = np.asarray(x0, dtype=float)
    cfg = PathConfig(n_steps, t_eval=spec.horizon if spec.horizon >= s_max else s_max, x0=tuple(x0),
                     seed=seed, horizon=s_max)
    r_idx = n_steps // 2

    def collect(batch: PathBatch):
        out = []
        for i in idx + ([r_idx] if ck else []):
            alive = batch.alive_at(i)
            out.append(_histogram(batch.states[alive, i], edges))
        return out, int(batch.exited.sum())

    parts = simulate_chunked(spec, cfg, n_paths, collect, workers=workers)
    hists = [sum(p[0][j] for p in parts) for j in range(len(idx) + (1 if ck else 0))]
    n_exit = sum(p[1] for p in parts)
    counts = hists[: len(idx)]

    nonzero = counts[-1][counts[-1] > 0]
    if nonzero.size == 0 or nonzero.mean() < min_bulk:
        raise InsufficientSamples(f"bulk bins average {nonzero.mean() if nonzero.size else 0:.1f} < {min_bulk} hits")

    # Envelope fit on bulk bins.
    r2 = np.sum((centers - x0) ** 2, axis=-1)
    ys, xs, ws = [], [], []
    for s, c in zip(times, counts):
        m = c >= min_bulk
        p = c[m] / (n_paths * vol[m])
        ys.append(np.log(p) + 0.5 * d * math.log(2 * math.pi * s))
        xs.append(-r2[m] / (2 * s))
        ws.append(np.sqrt(c[m]))
    y, xx, w = np.concatenate(ys), np.concatenate(xs), np.concatenate(ws)
    A = np.column_stack([np.ones_like(xx), xx]) * w[:, None]
    coef, *_ = np.linalg.lstsq(A, y * w, rcond=None)
    C_fit, c_fit = float(math.exp(coef[0])), float(coef[1])

    C_cert, violations = C_fit, 0
    for s, c in zip(times, counts):
        p_lo = np.maximum(c - z * np.sqrt(c * (1 - c / n_paths)), 0.0) / (n_paths * vol)
        env = (2 * math.pi * s) ** (-0.5 * d) * np.exp(-c_fit * r2 / (2 * s))
        ratio = np.where(p_lo > 0, p_lo / env, 0.0)
        violations += int(np.count_nonzero(ratio > C_fit))
        C_cert = max(C_cert, float(ratio.max()))
    kappa2 = 1.0 / c_fit if c_fit > 0 else math.inf
    kappa1 = C_cert * c_fit ** (-0.5 * d) if c_fit > 0 else math.inf

    ck_tv = None
    ck_r = None
    if ck:
        ck_r = r_idx * dt
        h_r = hists[-1] / n_paths
        h_s = counts[-1] / n_paths
        occupied = np.flatnonzero(h_r.ravel() > 0)
        per_bin = max(1, int((ck_paths or n_paths) // max(occupied.size, 1)))
        kcfg = PathConfig(n_steps - r_idx, t_eval=cfg.t_eval - ck_r, x0=tuple(x0), seed=derive_seed(seed, 1),
                          horizon=s_max - ck_r)
        widths = [np.diff(e) for e in edges]
        coeffs = spec.path_coefficients()

        def propagate(jj):
            j = occupied[jj]
            cell = np.unravel_index(j, h_r.shape)
            rng = make_rng(derive_seed(seed, 2, int(j)))
            lo_c = np.array([edges[m][cell[m]] for m in range(d)])
            wd = np.array([widths[m][cell[m]] for m in range(d)])
            starts = lo_c + wd * rng.random((per_bin, d))
            inside = D.signed_distance(starts) > D.default_tol
            starts = starts[inside]
            if len(starts) == 0:
                return np.zeros_like(h_r)
            sub = replace(kcfg, seed=derive_seed(seed, 3, int(j)))
            b = simulate_batch(spec, sub, len(starts), x0s=starts, coeffs=coeffs)
            alive = ~b.exited
            return _histogram(b.states[alive, -1], edges) / per_bin

        kernels = parallel_map(propagate, occupied.size, workers)
        conv = np.zeros_like(h_s)
        for jj, j in enumerate(occupied):
            conv += h_r.ravel()[j] * kernels[jj]
        ck_tv = float(0.5 * np.sum(np.abs(conv - h_s)))

    survival = [float(c.sum() / n_paths) for c in counts]
    mass_total = float((counts[-1].sum() + n_exit) / n_paths)
    p_surv = survival[-1]
    mass_se = math.sqrt(max(p_surv * (1 - p_surv), 1e-300) / n_paths)
    return DensityReport(times, edges, counts, n_paths, survival, C_fit, c_fit, C_cert, violations,
                         kappa1, kappa2, ck_tv, ck_r, mass_total, mass_se)


# ---------------------------------------------------------------------------
# Path dump: text columns with a versioned header.

DUMP_HEADER = "# fkspde-paths v1"


def write_path_dump(batch: PathBatch, fh: io.TextIOBase) -> None:
    """Columns: path, time, x_1..x_d, exited (1 on and after the exit index)."""
    d = batch.states.shape[-1]
    fh.write(f"{DUMP_HEADER} d={d} n_paths={len(batch)} n_steps={batch.n_steps} seed={batch.seed}\n")
    fh.write("path,time," + ",".join(f"x{m + 1}" for m in range(d)) + ",exited\n")
    for j in range(len(batch)):
        e = batch.exit_index[j]
        for i, t in enumerate(batch.times):
            flag = int(e >= 0 and i >= e)
            xs = ",".join(repr(float(v)) for v in batch.states[j, i])
            fh.write(f"{j},{float(t)!r},{xs},{flag}\n")


def read_path_dump(fh: io.TextIOBase) -> dict:
    header = fh.readline().strip()
    if not header.startswith(DUMP_HEADER):
        raise ValidationError(f"not a path dump (header {header!r})")
    meta = dict(kv.split("=") for kv in header[len(DUMP_HEADER):].split())
    fh.readline()
    data = np.loadtxt(fh, delimiter=",", ndmin=2)
    d, P, n = int(meta["d"]), int(meta["n_paths"]), int(meta["n_steps"])
    return {
        "times": data[: n + 1, 1],
        "states": data[:, 2:2 + d].reshape(P, n + 1, d),
        "exited": data[:, 2 + d].reshape(P, n + 1).astype(bool),
        "seed": int(meta["seed"]),
    }
