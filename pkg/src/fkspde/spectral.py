"""Principal Dirichlet eigenpairs of -1/2 a:D^2 - b.grad and small-ball predictions.

Discretization: centered second differences on a uniform tensor grid, the
four-point cross stencil (u_{++} - u_{+-} - u_{-+} + u_{--}) / (4 h_i h_j) for
mixed derivatives, centered first differences for the drift. Nodes on or
outside the boundary carry the Dirichlet value 0 and are eliminated. Balls
are embedded in their bounding box with exterior nodes set to 0.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import BallNotInsideDomain, IterationDivergence, NonConvergedResidual, ValidationError
from .model import CoefficientField, DomainSpec

RESIDUAL_TOL = 1e-10


@dataclass
class EigenResult:
    lambda1: float
    psi1: np.ndarray  # full grid incl. boundary zeros, L2-normalized
    axes: tuple
    h_grid: tuple
    residual: float
    iterations: int
    interior: np.ndarray  # boolean mask of unknown nodes

    @property
    def d(self) -> int:
        return len(self.axes)

    def value_at(self, x) -> float:
        """psi1 at the nearest grid node."""
        idx = tuple(int(np.argmin(np.abs(a - xi))) for a, xi in zip(self.axes, np.atleast_1d(x)))
        return float(self.psi1[idx])

    def integral(self) -> float:
        return float(self.psi1.sum() * np.prod(self.h_grid))


def _grid(D: DomainSpec, n_grid: int):
    lo, hi = D.bounds()
    axes = tuple(np.linspace(a, b, n_grid + 1) for a, b in zip(lo, hi))
    hs = tuple((b - a) / n_grid for a, b in zip(lo, hi))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    interior = D.signed_distance(mesh.reshape(-1, D.d)).reshape(mesh.shape[:-1]) > D.default_tol
    return axes, hs, mesh, interior


def generator_matrix(coeffs: CoefficientField, D: DomainSpec, n_grid: int, t: float = 0.0):
    """Sparse matrix of -1/2 a:D^2 - b.grad on interior nodes (coefficients at time t)."""
    d = D.d
    axes, hs, mesh, interior = _grid(D, n_grid)
    shape = interior.shape
    nodes = np.argwhere(interior)
    if nodes.size == 0:
        raise ValidationError("no interior grid nodes; increase n_grid")
    number = -np.ones(shape, dtype=np.int64)
    number[tuple(nodes.T)] = np.arange(len(nodes))
    pts = mesh[tuple(nodes.T)]
    a = np.einsum("nik,njk->nij", coeffs.sigma(t, pts), coeffs.sigma(t, pts))
    b = np.asarray(coeffs.b(t, pts), dtype=float).reshape(len(pts), d)

    rows, cols, vals = [], [], []

    def add(offset, coef):
        nb = nodes + np.asarray(offset)
        ok = np.all((nb >= 0) & (nb < np.array(shape)), axis=1)
        idx = np.full(len(nodes), -1)
        idx[ok] = number[tuple(nb[ok].T)]
        keep = idx >= 0  # Dirichlet neighbours drop out
        rows.append(np.arange(len(nodes))[keep])
        cols.append(idx[keep])
        vals.append(coef[keep])

    diag = np.zeros(len(nodes))
    for i in range(d):
        e = np.zeros(d, dtype=int)
        e[i] = 1
        h2 = hs[i] ** 2
        diag += a[:, i, i] / h2
        add(e, -0.5 * a[:, i, i] / h2 - 0.5 * b[:, i] / hs[i])
        add(-e, -0.5 * a[:, i, i] / h2 + 0.5 * b[:, i] / hs[i])
    for i, j in itertools.combinations(range(d), 2):
        ei, ej = np.eye(d, dtype=int)[i], np.eye(d, dtype=int)[j]
        c = -0.5 * 2 * a[:, i, j] / (4 * hs[i] * hs[j])  # a_ij + a_ji = 2 a_ij
        add(ei + ej, c)
        add(-ei - ej, c)
        add(ei - ej, -c)
        add(-ei + ej, -c)
    rows.append(np.arange(len(nodes)))
    cols.append(np.arange(len(nodes)))
    vals.append(diag)
    A = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(len(nodes), len(nodes)))
    return A, axes, hs, interior, nodes


def principal_eigenpair(coeffs: CoefficientField, D: DomainSpec, n_grid: int = 200, shift: float = 0.0,
                        tol: float = RESIDUAL_TOL, max_iter: int = 2000, seed: int = 0) -> EigenResult:
    """Smallest eigenpair by shifted inverse power iteration (sparse LU)."""
    if not coeffs.autonomous:
        raise ValidationError("principal_eigenpair needs time-independent coefficients")
    A, axes, hs, interior, nodes = generator_matrix(coeffs, D, n_grid)
    n = A.shape[0]
    lu = spla.splu((A - shift * sparse.identity(n, format="csc")).tocsc())
    v = np.random.default_rng(seed).random(n) + 1.0
    v /= np.linalg.norm(v)
    lam, res = math.nan, math.inf
    for it in range(1, max_iter + 1):
        w = lu.solve(v)
        nw = np.linalg.norm(w)
        if not np.isfinite(nw) or nw == 0:
            raise IterationDivergence("inverse iteration produced a non-finite iterate")
        v = w / nw
        Av = A @ v
        lam = float(v @ Av)
        res = float(np.linalg.norm(Av - lam * v))
        if res < tol:
            break
    else:
        raise NonConvergedResidual(f"residual {res:.3g} above {tol:g} after {max_iter} iterations")
    if not (np.isfinite(lam) and lam > 0):
        raise IterationDivergence(f"principal eigenvalue estimate {lam} is not positive")
    if v.sum() < 0:
        v = -v
    psi = np.zeros(interior.shape)
    psi[tuple(nodes.T)] = v
    psi /= math.sqrt(float(np.sum(psi ** 2)) * float(np.prod(hs)))
    return EigenResult(lam, psi, axes, hs, res, it, interior)


# ---------------------------------------------------------------------------


@dataclass
class EigenBoundsReport:
    lambda1: float
    radius: float
    scaled: float  # lambda1 * R^2
    C_fit: float
    psi_max_over_center: float
    K: float
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def calibrate_eigen_bound(d: int, kappa: float = 1.0, drift_sup: float = 0.0, n_grid: int = 200) -> float:
    """lambda1 * R^2 of the reference operator a = kappa I, b = |b|_inf e_1 on the unit box."""
    from .model import make_coefficients

    drift = {"kind": "constant", "value": [drift_sup] + [0.0] * (d - 1)}
    coeffs = make_coefficients(drift, {"kind": "constant", "scale": math.sqrt(kappa)}, d)
    D = DomainSpec.box([-1.0] * d, [1.0] * d)
    return principal_eigenpair(coeffs, D, n_grid).lambda1


def eigen_bounds_check(result: EigenResult, D: DomainSpec, coeffs: CoefficientField, C_fit: float,
                       K: float = 1.0, rtol: float = 1e-2) -> EigenBoundsReport:
    """lambda1 R^2 <= C_fit (1 + rtol) and psi1 / psi1(center) <= K (1 + rtol)."""
    center, R = D.inscribed_ball()
    scaled = result.lambda1 * R ** 2
    pc = result.value_at(center)
    ratio = float(result.psi1.max() / pc) if pc > 0 else math.inf
    viol = []
    if scaled > C_fit * (1 + rtol):
        viol.append(f"lambda1 R^2 = {scaled:.6g} exceeds C = {C_fit:.6g}")
    if ratio > K * (1 + rtol):
        viol.append(f"max psi1 / psi1(center) = {ratio:.6g} exceeds K = {K:g}")
    if np.any(result.psi1[result.interior] <= 0):
        viol.append("psi1 is not positive at every interior node")
    return EigenBoundsReport(result.lambda1, R, scaled, C_fit, ratio, K, viol)


@dataclass
class SmallBallPrediction:
    eps: float
    t: float
    lambda1: float
    psi_x: float
    psi_integral: float

    @property
    def value(self) -> float:
        return math.exp(-self.lambda1 * self.t) * self.psi_x * self.psi_integral


def small_ball_domain(x, eps: float, d: int) -> DomainSpec:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if d == 1:
        return DomainSpec.box(x - eps, x + eps)
    return DomainSpec.ball(x, eps)


def smallball_eigen(coeffs: CoefficientField, x, eps: float, t: float, D: Optional[DomainSpec] = None,
                    n_grid: int = 200) -> SmallBallPrediction:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if D is not None and float(D.signed_distance(x[None])[0]) < eps - D.default_tol:
        raise BallNotInsideDomain(f"ball of radius {eps} around {x.tolist()} leaves the domain")
    if n_grid % 2:
        n_grid += 1  # the center must be a grid node
    res = principal_eigenpair(coeffs, small_ball_domain(x, eps, len(x)), n_grid)
    return SmallBallPrediction(eps, t, res.lambda1, res.value_at(x), res.integral())


def smallball_predict(coeffs: CoefficientField, x, eps: float, t: float, D: Optional[DomainSpec] = None,
                      n_grid: int = 200) -> float:
    """One-term prediction exp(-lambda1 t) psi1(x) int psi1 for P(sup_{s<=t} |X_s - x| < eps)."""
    return smallball_eigen(coeffs, x, eps, t, D, n_grid).value
