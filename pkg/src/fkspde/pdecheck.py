"""Finite-difference oracle for du/dt = L_t u + c u with Dirichlet data on boxes.

L_t u = 1/2 a(t, x) : D^2 u + b(t, x) . grad u, centered stencils (cross
stencil for mixed terms). Theta-scheme in the diffusion with coefficients at
step midpoints; the potential c (and an optional source) are explicit at the
midpoint time.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import NonRectangularDomain, StabilityViolation, ValidationError
from .model import ProblemSpec

# Explicit potential: max |c| dt must stay below this.
POTENTIAL_CFL = 0.5


@dataclass
class StabilityReport:
    theta: float
    requested_theta: float
    dt: float
    max_potential_dt: float
    explicit_diffusion_number: float  # (1 - theta) dt max(a_ii / h_i^2)
    max_cell_peclet: float
    fallback: bool

    @property
    def monotone(self) -> bool:
        return self.explicit_diffusion_number <= 1.0 + 1e-12 and self.max_cell_peclet <= 2.0


@dataclass
class FDSolution:
    times: np.ndarray  # stored time levels
    axes: tuple
    values: np.ndarray  # (n_stored, n_1 + 1, ..., n_d + 1)
    scheme: str
    stability: StabilityReport

    def at(self, t: float, x) -> float:
        """Linear in time between stored levels, multilinear in space."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2))
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return float((1 - w) * _multilinear(self.values[i], self.axes, x) + w * _multilinear(self.values[i + 1], self.axes, x))

    def final(self) -> np.ndarray:
        return self.values[-1]


def _multilinear(grid_vals: np.ndarray, axes: tuple, x: np.ndarray) -> float:
    idx, frac = [], []
    for a, xi in zip(axes, x):
        j = int(np.clip(np.searchsorted(a, xi, side="right") - 1, 0, a.size - 2))
        idx.append(j)
        frac.append((xi - a[j]) / (a[j + 1] - a[j]))
    out = 0.0
    for corner in itertools.product((0, 1), repeat=len(axes)):
        w = 1.0
        for f, bit in zip(frac, corner):
            w *= f if bit else 1 - f
        out += w * grid_vals[tuple(j + bit for j, bit in zip(idx, corner))]
    return float(out)


@dataclass(frozen=True)
class FDMesh:
    n_space: tuple  # intervals per axis
    n_time: int
    store_every: Optional[int] = None


class _Operator:
    """Assembles L_t on the full tensor grid, split into interior/boundary columns."""

    def __init__(self, spec: ProblemSpec, n_space: tuple):
        D = spec.domain
        if D.kind != "box":
            raise NonRectangularDomain("the finite-difference oracle needs a hyperrectangle domain")
        if D.d > 2:
            raise ValidationError("finite-difference oracle supports d <= 2")
        self.spec = spec
        self.d = D.d
        lo, hi = D.bounds()
        self.axes = tuple(np.linspace(a, b, n + 1) for a, b, n in zip(lo, hi, n_space))
        self.hs = tuple((b - a) / n for a, b, n in zip(lo, hi, n_space))
        self.shape = tuple(n + 1 for n in n_space)
        mesh = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)
        self.points = mesh.reshape(-1, self.d)
        inner = np.zeros(self.shape, dtype=bool)
        inner[tuple(slice(1, -1) for _ in range(self.d))] = True
        self.inner = inner.ravel()
        self.ii = np.flatnonzero(self.inner)
        self.bi = np.flatnonzero(~self.inner)
        self.strides = np.array([int(np.prod(self.shape[k + 1:])) for k in range(self.d)])
        self.multi = np.array(np.unravel_index(self.ii, self.shape)).T

    def coeffs_at(self, t: float):
        pts = self.points[self.ii]
        s = np.asarray(self.spec.coeffs.sigma(t, pts), dtype=float)
        a = np.einsum("nik,njk->nij", s, s)
        b = np.asarray(self.spec.coeffs.b(t, pts), dtype=float).reshape(len(pts), self.d)
        return a, b

    def matrix(self, t: float):
        """(L_II, L_IB) at time t; rows are interior nodes."""
        a, b = self.coeffs_at(t)
        n_all = int(np.prod(self.shape))
        rows, cols, vals = [], [], []
        base = self.ii

        def add(offset, coef):
            rows.append(np.arange(base.size))
            cols.append(base + int(np.dot(offset, self.strides)))
            vals.append(coef)

        diag = np.zeros(base.size)
        for i in range(self.d):
            e = np.eye(self.d, dtype=int)[i]
            h = self.hs[i]
            diag -= a[:, i, i] / h ** 2
            add(e, 0.5 * a[:, i, i] / h ** 2 + 0.5 * b[:, i] / h)
            add(-e, 0.5 * a[:, i, i] / h ** 2 - 0.5 * b[:, i] / h)
        for i, j in itertools.combinations(range(self.d), 2):
            ei, ej = np.eye(self.d, dtype=int)[i], np.eye(self.d, dtype=int)[j]
            c = a[:, i, j] / (4 * self.hs[i] * self.hs[j])  # 1/2 (a_ij + a_ji) = a_ij
            add(ei + ej, c)
            add(-ei - ej, c)
            add(ei - ej, -c)
            add(-ei + ej, -c)
        add(np.zeros(self.d, dtype=int), diag)
        full = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(base.size, n_all))
        return full[:, self.ii].tocsc(), full[:, self.bi].tocsc(), a, b


def fd_solve(spec: ProblemSpec, potential: Optional[Callable], mesh: FDMesh, t_end: Optional[float] = None,
             theta: float = 0.5, source: Optional[Callable] = None, data_f: Optional[Callable] = None,
             data_g: Optional[Callable] = None) -> FDSolution:
    """Solve on [0, t_end] x D with u(0) = f, u = g(t, .) on the boundary.

    ``potential(t, points)`` and ``source(t, points)`` take the midpoint time
    and an (N, d) array of interior nodes. With theta < 1 the explicit
    diffusion part must be monotone; otherwise theta = 1 is used and the
    fallback is recorded.
    """
    t_end = spec.horizon if t_end is None else float(t_end)
    op = _Operator(spec, tuple(mesh.n_space))
    f = data_f or spec.data.f
    g = data_g or spec.data.g
    nt = int(mesh.n_time)
    dt = t_end / nt
    pts_i = op.points[op.ii]
    pts_b = op.points[op.bi]

    # Stability screening at a few times.
    probe = np.linspace(0.0, t_end, 5)
    max_diff, max_pe, max_c = 0.0, 0.0, 0.0
    for tp in probe:
        a, b = op.coeffs_at(tp)
        max_diff = max(max_diff, float(np.max(sum(a[:, i, i] / op.hs[i] ** 2 for i in range(op.d)))))
        for i in range(op.d):
            max_pe = max(max_pe, float(np.max(np.abs(b[:, i]) * op.hs[i] / a[:, i, i])))
    requested = theta
    if theta < 1 and (1 - theta) * dt * max_diff > 1.0:
        theta = 1.0
    report = StabilityReport(theta, requested, dt, 0.0, (1 - theta) * dt * max_diff, max_pe, theta != requested)

    store_every = mesh.store_every or max(1, nt // 400)
    u = np.asarray(f(op.points), dtype=float).copy()
    u[op.bi] = g(0.0, pts_b)
    stored_t, stored = [0.0], [u.reshape(op.shape).copy()]

    cache = None
    autonomous = spec.coeffs.autonomous
    I = sparse.identity(op.ii.size, format="csc")
    for n in range(nt):
        t0, t1 = n * dt, (n + 1) * dt
        tm = 0.5 * (t0 + t1)
        if cache is None or not autonomous:
            L_ii, L_ib, _, _ = op.matrix(tm)
            lu = spla.splu((I - theta * dt * L_ii).tocsc())
            cache = (L_ii, L_ib, lu)
        L_ii, L_ib, lu = cache
        ui, ub0 = u[op.ii], u[op.bi]
        ub1 = np.asarray(g(t1, pts_b), dtype=float)
        rhs = ui + (1 - theta) * dt * (L_ii @ ui + L_ib @ ub0) + theta * dt * (L_ib @ ub1)
        if potential is not None:
            c = np.asarray(potential(tm, pts_i), dtype=float)
            m = float(np.max(np.abs(c))) * dt
            report.max_potential_dt = max(report.max_potential_dt, m)
            if m > POTENTIAL_CFL:
                raise StabilityViolation(f"explicit potential: max|c| dt = {m:.3g} > {POTENTIAL_CFL}")
            rhs = rhs + dt * c * ui
        if source is not None:
            rhs = rhs + dt * np.asarray(source(tm, pts_i), dtype=float)
        u = np.empty_like(u)
        u[op.ii] = lu.solve(rhs)
        u[op.bi] = ub1
        if not np.all(np.isfinite(u)):
            raise StabilityViolation(f"non-finite values at step {n + 1}")
        if (n + 1) % store_every == 0 or n + 1 == nt:
            stored_t.append(t1)
            stored.append(u.reshape(op.shape).copy())
    scheme = f"theta={theta:g} diffusion, explicit potential, midpoint coefficients"
    return FDSolution(np.array(stored_t), op.axes, np.stack(stored), scheme, report)


# ---------------------------------------------------------------------------


@dataclass
class CrosscheckBudget:
    n_paths: int = 200_000
    n_steps: int = 400
    fd_space: int = 200
    fd_time: int = 4000
    table_resolution: int = 801
    seed: int = 0
    workers: int = 1


@dataclass
class CrosscheckReport:
    rows: list
    fd: FDSolution
    budget: CrosscheckBudget

    @property
    def max_gap(self) -> float:
        return max(r["rel_gap"] for r in self.rows)


def crosscheck(spec: ProblemSpec, sheet, mollifier, points: Sequence[tuple], budget: Optional[CrosscheckBudget] = None,
               ) -> CrosscheckReport:
    """Compare FD and fixed-noise FK values of u^{eps,delta} at interior (t, x) points."""
    from .estimator import noise_table_for, solve_point_fixed_noise
    from .noisefield import SmoothedNoise
    from .rng import derive_seed

    budget = budget or CrosscheckBudget()
    noise = SmoothedNoise(sheet, mollifier)
    D = spec.domain
    if D.kind != "box":
        raise NonRectangularDomain("crosscheck needs a hyperrectangle domain")
    t_end = max(float(t) for t, _ in points)
    n_space = (budget.fd_space,) * D.d
    mesh = FDMesh(n_space, budget.fd_time)
    h_min = min((b - a) / budget.fd_space for a, b in zip(*D.bounds()))
    for t, x in points:
        if float(D.signed_distance(np.atleast_1d(np.asarray(x, float))[None])[0]) < 3 * h_min:
            raise ValidationError(f"point {x} is within 3 mesh cells of the boundary")

    # Potential frozen on the FD mesh at midpoint times.
    dt = t_end / budget.fd_time
    tmid = (np.arange(budget.fd_time) + 0.5) * dt
    op_axes = tuple(np.linspace(a, b, n + 1)[1:-1] for a, b, n in zip(*D.bounds(), n_space))
    table = noise.tabulate(tmid, op_axes).values.reshape(budget.fd_time, -1)
    potential = lambda tm, pts: table[int(round(tm / dt - 0.5))]
    fd = fd_solve(spec, potential, mesh, t_end=t_end)

    rows = []
    for j, (t, x) in enumerate(points):
        t = float(t)
        tab = noise_table_for(spec, noise, t, budget.n_steps, budget.table_resolution)
        est = solve_point_fixed_noise(spec, t, x, tab, budget.n_paths, derive_seed(budget.seed, j),
                                      n_steps=budget.n_steps, workers=budget.workers)
        fdv = fd.at(t, x)
        rows.append({"t": t, "x": [float(v) for v in np.atleast_1d(x)], "fd_value": fdv, "fk_value": est.value,
                     "rel_gap": abs(fdv - est.value) / abs(fdv), "mc_se": est.std_error,
                     "digest": est.config_digest})
    return CrosscheckReport(rows, fd, budget)
