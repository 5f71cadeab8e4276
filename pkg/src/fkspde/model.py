"""Problem definition: Hurst parameters, domains, coefficients and data."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    AdmissibilityViolated,
    DimensionMismatch,
    EmptyDomainMesh,
    HurstOutOfRange,
    ValidationError,
)

# Vectorized field signatures: t is a float, x has shape (n, d).
VectorField = Callable[[float, np.ndarray], np.ndarray]
ScalarField = Callable[[float, np.ndarray], np.ndarray]


class Product(str, enum.Enum):
    STRATONOVICH = "stratonovich"
    SKOROHOD = "skorohod"


class Location(str, enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    EXTERIOR = "exterior"


# ---------------------------------------------------------------------------
# Hurst parameters


@dataclass(frozen=True)
class HurstParams:
    h0: float
    h_space: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "h0", float(self.h0))
        object.__setattr__(self, "h_space", tuple(float(h) for h in self.h_space))

    @property
    def d(self) -> int:
        return len(self.h_space)

    @property
    def total_space(self) -> float:
        return float(sum(self.h_space))

    @property
    def rho(self) -> float:
        """Admissibility margin 2*h0 + sum(h_space) - d - 1."""
        return 2.0 * self.h0 + self.total_space - self.d - 1.0

    @property
    def alpha(self) -> float:
        """Covariance prefactor H0(2H0-1) * prod Hi(2Hi-1).

        This is the package convention for the constant multiplying the
        conditional variance; ``ProblemSpec.alpha_override`` replaces it.
        """
        out = self.h0 * (2.0 * self.h0 - 1.0)
        for h in self.h_space:
            out *= h * (2.0 * h - 1.0)
        return out

    @property
    def space_exponents(self) -> np.ndarray:
        """Exponents 2*Hi - 2 of the spatial kernel factors."""
        return 2.0 * np.asarray(self.h_space) - 2.0


def validate_hurst(h: HurstParams, d: int) -> None:
    """Raise unless every component lies in (1/2, 1) and rho > 0."""
    if d < 1:
        raise ValidationError(f"dimension must be >= 1, got {d}")
    if len(h.h_space) != d:
        raise DimensionMismatch(f"expected {d} spatial Hurst parameters, got {len(h.h_space)}")
    names = ["H0"] + [f"H{i + 1}" for i in range(d)]
    for name, val in zip(names, (h.h0,) + h.h_space):
        if not 0.5 < val < 1.0:
            raise HurstOutOfRange(f"{name}={val!r} violates 1/2 < {name} < 1")
    if not h.rho > 0:
        raise AdmissibilityViolated(
            f"2*H0 + sum(Hi) - d - 1 = {h.rho:.6g} violates 2*H0 + sum(Hi) - d - 1 > 0"
        )


# ---------------------------------------------------------------------------
# Domains


@dataclass(frozen=True)
class DomainSpec:
    """Hyperrectangle ``[lo, hi]`` or Euclidean ball ``B(center, radius)``."""

    kind: str
    lo: Optional[tuple[float, ...]] = None
    hi: Optional[tuple[float, ...]] = None
    center: Optional[tuple[float, ...]] = None
    radius: Optional[float] = None

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float]) -> "DomainSpec":
        lo_t = tuple(float(v) for v in np.atleast_1d(lo))
        hi_t = tuple(float(v) for v in np.atleast_1d(hi))
        if len(lo_t) != len(hi_t) or not lo_t:
            raise DimensionMismatch("lo and hi must have the same positive length")
        if any(h <= l for l, h in zip(lo_t, hi_t)):
            raise ValidationError(f"empty box: lo={lo_t}, hi={hi_t}")
        return cls("box", lo=lo_t, hi=hi_t)

    @classmethod
    def ball(cls, center: Sequence[float], radius: float) -> "DomainSpec":
        c = tuple(float(v) for v in np.atleast_1d(center))
        if not radius > 0:
            raise ValidationError(f"ball radius must be positive, got {radius}")
        return cls("ball", center=c, radius=float(radius))

    @property
    def d(self) -> int:
        return len(self.lo) if self.kind == "box" else len(self.center)

    @property
    def diam(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(np.subtract(self.hi, self.lo)))
        return 2.0 * self.radius

    @property
    def default_tol(self) -> float:
        return 1e-9 * self.diam

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            return np.array(self.lo), np.array(self.hi)
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise DimensionMismatch(f"point dimension {x.shape[-1]} != domain dimension {self.d}")
        return x

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        """Euclidean distance to the boundary, positive inside."""
        x = self._check(x)
        if self.kind == "box":
            lo, hi = np.array(self.lo), np.array(self.hi)
            inner = np.minimum(x - lo, hi - x)
            excess = np.maximum(np.maximum(lo - x, x - hi), 0.0)
            outside = np.linalg.norm(excess, axis=-1)
            return np.where(outside > 0, -outside, inner.min(axis=-1))
        r = np.linalg.norm(x - np.array(self.center), axis=-1)
        return self.radius - r

    def face_distances(self, x: np.ndarray) -> np.ndarray:
        """Distances to each supporting face, shape (..., n_faces).

        Boxes have 2d faces ordered (lo_1, hi_1, lo_2, ...); a ball has one.
        """
        x = self._check(x)
        if self.kind == "box":
            lo, hi = np.array(self.lo), np.array(self.hi)
            out = np.empty(x.shape[:-1] + (2 * self.d,))
            out[..., 0::2] = x - lo
            out[..., 1::2] = hi - x
            return out
        return (self.radius - np.linalg.norm(x - np.array(self.center), axis=-1))[..., None]

    def face_normal_variance(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Diffusivity n' a n across each face at x; a has shape (n, d, d)."""
        if self.kind == "box":
            diag = np.diagonal(a, axis1=-2, axis2=-1)
            return np.repeat(diag, 2, axis=-1)
        v = x - np.array(self.center)
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        n = np.where(nrm > 0, v / np.where(nrm > 0, nrm, 1.0), 0.0)
        n[nrm[:, 0] == 0, 0] = 1.0
        return np.einsum("ni,nij,nj->n", n, a, n)[:, None]

    def project(self, x: np.ndarray, face: Optional[np.ndarray] = None) -> np.ndarray:
        """Map points onto the boundary.

        Exterior points go to their nearest boundary point. Interior points go
        to ``face`` (box face index) when given, else to the nearest face.
        """
        x = self._check(x).copy()
        if self.kind == "ball":
            c = np.array(self.center)
            v = x - c
            nrm = np.linalg.norm(v, axis=-1, keepdims=True)
            safe = np.where(nrm > 0, nrm, 1.0)
            u = np.where(nrm > 0, v / safe, 0.0)
            u[nrm[:, 0] == 0, 0] = 1.0
            return c + self.radius * u
        lo, hi = np.array(self.lo), np.array(self.hi)
        inside = np.all((x > lo) & (x < hi), axis=-1)
        out = np.clip(x, lo, hi)
        if np.any(inside):
            xi = x[inside]
            if face is None:
                f = np.argmin(self.face_distances(xi), axis=-1)
            else:
                f = np.asarray(face)[inside]
            axis = f // 2
            rows = np.arange(len(xi))
            target = np.where(f % 2 == 0, lo[axis], hi[axis])
            xi = xi.copy()
            xi[rows, axis] = target
            out[inside] = xi
        return out

    def contains(self, x: np.ndarray, tol: Optional[float] = None):
        """Classify points as interior, boundary (within tol) or exterior."""
        tol = self.default_tol if tol is None else tol
        x = np.asarray(x, dtype=float)
        sd = self.signed_distance(x)
        if np.ndim(sd) == 0:
            return _classify(float(sd), tol)
        return np.array([_classify(float(s), tol) for s in sd.ravel()], dtype=object).reshape(sd.shape)

    def inscribed_ball(self) -> tuple[np.ndarray, float]:
        if self.kind == "ball":
            return np.array(self.center), self.radius
        lo, hi = np.array(self.lo), np.array(self.hi)
        return 0.5 * (lo + hi), float(0.5 * np.min(hi - lo))

    def mesh(self, resolution: int) -> np.ndarray:
        """Uniform mesh of the closure of D with ``resolution`` nodes per axis."""
        if resolution < 2:
            raise EmptyDomainMesh(f"mesh resolution must be >= 2, got {resolution}")
        lo, hi = self.bounds()
        axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        if self.kind == "ball":
            pts = pts[self.signed_distance(pts) >= -self.default_tol]
            if self.d >= 2:
                # Boundary nodes keep the infimum exact near the sphere.
                pts = np.vstack([pts, self._sphere_points(4 * resolution)])
        if len(pts) == 0:
            raise EmptyDomainMesh("domain mesh is empty")
        return pts

    def _sphere_points(self, n: int) -> np.ndarray:
        c = np.array(self.center)
        if self.d == 2:
            th = np.linspace(0, 2 * np.pi, n, endpoint=False)
            return c + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)
        rng = np.random.default_rng(0)
        v = rng.standard_normal((n * self.d, self.d))
        return c + self.radius * v / np.linalg.norm(v, axis=-1, keepdims=True)

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo, hi = self.bounds()
        if self.kind == "box":
            return lo + (hi - lo) * rng.random((n, self.d))
        out = np.empty((0, self.d))
        while len(out) < n:
            cand = lo + (hi - lo) * rng.random((2 * n, self.d))
            out = np.vstack([out, cand[self.signed_distance(cand) > 0]])
        return out[:n]


def _classify(sd: float, tol: float) -> Location:
    if sd > tol:
        return Location.INTERIOR
    if sd >= -tol:
        return Location.BOUNDARY
    return Location.EXTERIOR


def contains(D: DomainSpec, x, tol: Optional[float] = None):
    """Module-level alias of :meth:`DomainSpec.contains`."""
    return D.contains(x, tol)


# ---------------------------------------------------------------------------
# Moduli of continuity and the infimal-convolution extension


@dataclass(frozen=True)
class Modulus:
    """omega(r) = K * r**alpha with alpha in (0, 1]."""

    K: float
    alpha: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValidationError(f"modulus exponent must lie in (0, 1], got {self.alpha}")
        if self.K < 0:
            raise ValidationError("modulus constant must be nonnegative")

    def __call__(self, r):
        return self.K * np.power(r, self.alpha)


def extend_coefficient(f: ScalarField, omega: Modulus, D: DomainSpec, resolution: int = 65) -> ScalarField:
    """Extend a scalar field from D to R^d with the same modulus.

    Outside D the extension is ``min_y f(t, y) + omega(|x - y|)`` over a
    uniform mesh of the closure of D. A finite mesh gives an upper bound of the
    exact infimum which decreases under refinement. On D the field is returned
    unchanged.
    """
    mesh = D.mesh(resolution)
    tol = D.default_tol

    def extended(t: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(len(x))
        inside = D.signed_distance(x) >= -tol
        if np.any(inside):
            out[inside] = f(t, x[inside])
        if np.any(~inside):
            fy = np.asarray(f(t, mesh), dtype=float)
            xe = x[~inside]
            vals = np.empty(len(xe))
            for start in range(0, len(xe), 256):
                blk = xe[start:start + 256]
                dist = np.linalg.norm(blk[:, None, :] - mesh[None, :, :], axis=-1)
                vals[start:start + 256] = np.min(fy[None, :] + omega(dist), axis=1)
            out[~inside] = vals
        return out

    extended.mesh = mesh
    return extended


# ---------------------------------------------------------------------------
# Coefficients


@dataclass(frozen=True)
class CoefficientField:
    """Drift ``b(t, x) -> (n, d)`` and diffusion ``sigma(t, x) -> (n, d, d)``.

    ``lipschitz`` is the spatial Lipschitz constant K1 and ``time_holder`` the
    pair (K2, gamma) of the Holder bound in time. ``autonomous`` marks fields
    that ignore t.
    """

    b: VectorField
    sigma: Callable[[float, np.ndarray], np.ndarray]
    d: int
    ellipticity_delta: float
    lipschitz: float
    time_holder: tuple[float, float] = (0.0, 1.0)
    autonomous: bool = False
    drift_sup: float = math.inf
    kappa: float = 1.0
    description: str = ""
    reflected: bool = False

    def a(self, t: float, x: np.ndarray) -> np.ndarray:
        s = self.sigma(t, x)
        return np.einsum("nik,njk->nij", s, s)

    def check_ellipticity(self, times: Sequence[float], points: np.ndarray, n_dirs: int = 16, seed: int = 0) -> bool:
        """Check xi' a xi >= delta |xi|^2 on sampled (t, x, xi)."""
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal((n_dirs, self.d))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        for t in times:
            a = self.a(t, points)
            q = np.einsum("ki,nij,kj->nk", xi, a, xi)
            if np.min(q) < self.ellipticity_delta * (1 - 1e-12):
                return False
        return True

    def check_lipschitz(self, times: Sequence[float], points: np.ndarray, seed: int = 0) -> bool:
        """Check the declared spatial Lipschitz and temporal Holder constants on sampled pairs."""
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(points))
        x, y = points, points[perm]
        dx = np.linalg.norm(x - y, axis=1)
        keep = dx > 1e-12
        slack = 1 + 1e-9
        for t in times:
            db = np.linalg.norm(self.b(t, x) - self.b(t, y), axis=1)
            ds = np.linalg.norm(self.sigma(t, x) - self.sigma(t, y), axis=(1, 2))
            if np.any(db[keep] > slack * self.lipschitz * dx[keep] + 1e-12):
                return False
            if np.any(ds[keep] > slack * self.lipschitz * dx[keep] + 1e-12):
                return False
        K2, gamma = self.time_holder
        ts = np.asarray(times, dtype=float)
        for t1 in ts:
            for t2 in ts:
                if t1 == t2:
                    continue
                bound = K2 * abs(t1 - t2) ** gamma * slack + 1e-12
                if np.max(np.linalg.norm(self.b(t1, x) - self.b(t2, x), axis=1)) > bound:
                    return False
                if np.max(np.linalg.norm(self.sigma(t1, x) - self.sigma(t2, x), axis=(1, 2))) > bound:
                    return False
        return True


def time_reflect(coeffs: CoefficientField) -> CoefficientField:
    """Even extension in time: b(-t, x) = b(t, x), sigma(-t, x) = sigma(t, x)."""
    if coeffs.reflected:
        return coeffs
    b, s = coeffs.b, coeffs.sigma
    return replace(
        coeffs,
        b=lambda t, x: b(abs(t), x),
        sigma=lambda t, x: s(abs(t), x),
        reflected=True,
    )


def extend_coefficients(coeffs: CoefficientField, D: DomainSpec, resolution: int = 33) -> CoefficientField:
    """Componentwise spatial extension of b and sigma beyond D.

    Uses the Lipschitz modulus K1*r. Evaluation on D is untouched, so paths
    that are stopped at the boundary never pay for the mesh infimum.
    """
    d = coeffs.d
    omega = Modulus(max(coeffs.lipschitz, 0.0), 1.0)
    tol = D.default_tol
    b0, s0 = coeffs.b, coeffs.sigma
    b_ext = [extend_coefficient(lambda t, x, i=i: b0(t, x)[:, i], omega, D, resolution) for i in range(d)]
    s_ext = [
        [extend_coefficient(lambda t, x, i=i, j=j: s0(t, x)[:, i, j], omega, D, resolution) for j in range(d)]
        for i in range(d)
    ]

    def b(t, x):
        x = np.atleast_2d(x)
        if np.all(D.signed_distance(x) >= -tol):
            return b0(t, x)
        return np.stack([e(t, x) for e in b_ext], axis=-1)

    def sigma(t, x):
        x = np.atleast_2d(x)
        if np.all(D.signed_distance(x) >= -tol):
            return s0(t, x)
        return np.stack([np.stack([e(t, x) for e in row], axis=-1) for row in s_ext], axis=-2)

    return replace(coeffs, b=b, sigma=sigma)


def _as_matrix(scale, d: int) -> np.ndarray:
    m = np.asarray(scale, dtype=float)
    if m.ndim == 0:
        return float(m) * np.eye(d)
    if m.shape != (d, d):
        raise DimensionMismatch(f"diffusion matrix must be {d}x{d}")
    return m


def _min_eig_a(m: np.ndarray) -> float:
    return float(np.min(np.linalg.eigvalsh(m @ m.T)))


def _const_sigma(m: np.ndarray):
    def sigma(t, x):
        return np.broadcast_to(m, (len(x),) + m.shape)

    return sigma


def make_coefficients(drift: Optional[dict], diffusion: Optional[dict], d: int) -> CoefficientField:
    """Build a coefficient field from preset descriptions.

    Drift kinds: ``constant`` (value), ``affine`` (matrix, offset), ``trig_x``
    (amplitude, frequency: b_i = A sin(w x_i)), ``poly_t`` (coeffs: b_i =
    sum c_k t^k), ``trig_t`` (amplitude, frequency: b_i = A sin(w t)),
    ``tabulated`` (times, points, values; d = 1).

    Diffusion kinds (sigma = s(t, x) * M): ``constant`` (scale or matrix),
    ``poly_t`` (coeffs), ``trig_x`` (base, amplitude, frequency: s = base +
    A sin(w x_1)), ``tabulated`` (times, points, values; d = 1).
    """
    drift = dict(drift or {"kind": "constant", "value": 0.0})
    diffusion = dict(diffusion or {"kind": "constant", "scale": 1.0})
    dk = drift.pop("kind", "constant")
    sk = diffusion.pop("kind", "constant")
    names = []

    autonomous = True
    holder_K, holder_g = 0.0, 1.0

    if dk == "constant":
        v = np.broadcast_to(np.asarray(drift.get("value", 0.0), dtype=float), (d,)).copy()
        b = lambda t, x: np.broadcast_to(v, (len(x), d))
        b_lip, b_sup = 0.0, float(np.linalg.norm(v))
    elif dk == "affine":
        A = np.asarray(drift.get("matrix", np.zeros((d, d))), dtype=float).reshape(d, d)
        c = np.broadcast_to(np.asarray(drift.get("offset", 0.0), dtype=float), (d,)).copy()
        b = lambda t, x: x @ A.T + c
        b_lip, b_sup = float(np.linalg.norm(A, 2)), math.inf
    elif dk == "trig_x":
        amp, freq = float(drift.get("amplitude", 1.0)), float(drift.get("frequency", 1.0))
        b = lambda t, x: amp * np.sin(freq * x)
        b_lip, b_sup = abs(amp * freq), abs(amp) * math.sqrt(d)
    elif dk == "poly_t":
        cs = np.asarray(drift.get("coeffs", [0.0]), dtype=float)
        b = lambda t, x: np.full((len(x), d), np.polynomial.polynomial.polyval(t, cs))
        b_lip, b_sup = 0.0, math.inf
        autonomous = autonomous and len(cs) <= 1
        # Holder constant of the polynomial on [0, 1e3] is not finite; report derivative bound on [0, 10].
        deriv = np.polynomial.polynomial.polyder(cs) if len(cs) > 1 else np.zeros(1)
        holder_K = max(holder_K, float(np.max(np.abs(np.polynomial.polynomial.polyval(np.linspace(0, 10, 201), deriv)))) * math.sqrt(d))
    elif dk == "trig_t":
        amp, freq = float(drift.get("amplitude", 1.0)), float(drift.get("frequency", 1.0))
        b = lambda t, x: np.full((len(x), d), amp * math.sin(freq * t))
        b_lip, b_sup = 0.0, abs(amp) * math.sqrt(d)
        autonomous = False
        holder_K = max(holder_K, abs(amp * freq) * math.sqrt(d))
    elif dk == "tabulated":
        b, b_lip, b_sup, holder = _tabulated_scalar(drift, d)
        b_vec = b
        b = lambda t, x: b_vec(t, x)[:, None]
        autonomous = autonomous and holder[0] == 0.0
        holder_K = max(holder_K, holder[0])
    else:
        raise ValidationError(f"unknown drift preset {dk!r}")
    names.append(f"drift={dk}")

    if sk == "constant":
        M = _as_matrix(diffusion.get("matrix", diffusion.get("scale", 1.0)), d)
        sigma = _const_sigma(M)
        delta, s_lip = _min_eig_a(M), 0.0
        kappa = _kappa(M)
    elif sk == "poly_t":
        cs = np.asarray(diffusion.get("coeffs", [1.0]), dtype=float)
        M = _as_matrix(diffusion.get("matrix", 1.0), d)
        sigma = lambda t, x: np.broadcast_to(np.polynomial.polynomial.polyval(t, cs) * M, (len(x), d, d))
        vals = np.polynomial.polynomial.polyval(np.linspace(0, float(diffusion.get("t_max", 10.0)), 401), cs)
        if np.min(np.abs(vals)) <= 0:
            raise ValidationError("poly_t diffusion vanishes on [0, t_max]")
        delta, s_lip = float(np.min(vals) ** 2) * _min_eig_a(M), 0.0
        kappa = _kappa(M) * float(np.max(vals) ** 2 / np.min(vals) ** 2)
        autonomous = autonomous and len(cs) <= 1
        if len(cs) > 1:
            deriv = np.polynomial.polynomial.polyder(cs)
            holder_K = max(holder_K, float(np.max(np.abs(np.polynomial.polynomial.polyval(np.linspace(0, 10, 201), deriv)))) * float(np.linalg.norm(M)))
    elif sk == "trig_x":
        base = float(diffusion.get("base", 1.0))
        amp, freq = float(diffusion.get("amplitude", 0.0)), float(diffusion.get("frequency", 1.0))
        if base - abs(amp) <= 0:
            raise ValidationError("trig_x diffusion must satisfy base > |amplitude|")
        M = _as_matrix(diffusion.get("matrix", 1.0), d)
        sigma = lambda t, x: (base + amp * np.sin(freq * x[:, 0]))[:, None, None] * M
        delta = (base - abs(amp)) ** 2 * _min_eig_a(M)
        s_lip = abs(amp * freq) * float(np.linalg.norm(M))
        kappa = _kappa(M) * ((base + abs(amp)) / (base - abs(amp))) ** 2
    elif sk == "tabulated":
        s_scalar, s_lip, _, holder = _tabulated_scalar(diffusion, d)
        lo = float(np.min(diffusion["values"]))
        hi = float(np.max(diffusion["values"]))
        if lo <= 0:
            raise ValidationError("tabulated diffusion must be positive")
        sigma = lambda t, x: s_scalar(t, x)[:, None, None] * np.ones((1, 1, 1))
        delta, kappa = lo ** 2, (hi / lo) ** 2
        autonomous = autonomous and holder[0] == 0.0
        holder_K = max(holder_K, holder[0])
    else:
        raise ValidationError(f"unknown diffusion preset {sk!r}")
    names.append(f"diffusion={sk}")

    field = CoefficientField(
        b=b,
        sigma=sigma,
        d=d,
        ellipticity_delta=delta,
        lipschitz=max(b_lip, s_lip),
        time_holder=(holder_K, holder_g),
        autonomous=autonomous,
        drift_sup=b_sup,
        kappa=kappa,
        description=", ".join(names),
    )
    return field


def _kappa(M: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(M @ M.T)
    return float(max(ev.max(), 1.0 / ev.min()))


def _tabulated_scalar(spec: dict, d: int):
    from scipy.interpolate import RegularGridInterpolator

    if d != 1:
        raise DimensionMismatch("tabulated coefficients are supported for d = 1 only")
    times = np.asarray(spec["times"], dtype=float)
    pts = np.asarray(spec["points"], dtype=float)
    vals = np.asarray(spec["values"], dtype=float).reshape(len(times), len(pts))
    interp = RegularGridInterpolator((times, pts), vals, bounds_error=False, fill_value=None)

    def f(t, x):
        tt = np.clip(t, times[0], times[-1])
        q = np.column_stack([np.full(len(x), tt), np.clip(x[:, 0], pts[0], pts[-1])])
        return interp(q)

    lip = float(np.max(np.abs(np.diff(vals, axis=1)) / np.diff(pts)[None, :])) if len(pts) > 1 else 0.0
    tlip = float(np.max(np.abs(np.diff(vals, axis=0)) / np.diff(times)[:, None])) if len(times) > 1 else 0.0
    return f, lip, float(np.max(np.abs(vals))), (tlip, 1.0)


# ---------------------------------------------------------------------------
# Initial/boundary data


@dataclass(frozen=True)
class BoundaryData:
    """Initial data f(x) on D and boundary data g(t, x) on the lateral boundary."""

    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[float, np.ndarray], np.ndarray]
    lower_bound: float = -math.inf
    description: str = ""

    def h_survived(self, x: np.ndarray) -> np.ndarray:
        return self.f(x)

    def h_exited(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))
        out = np.empty(len(x))
        for tv in np.unique(t):
            m = t == tv
            out[m] = self.g(float(tv), x[m])
        return out


def make_data(spec: Optional[dict], domain: DomainSpec) -> BoundaryData:
    """Data presets.

    ``constant`` (value): f = g = value. ``bump`` (base, amplitude): f = base +
    A * prod sin(pi (x - lo)/(hi - lo)) on a box (1 - |x - c|^2/R^2 on a ball),
    g = base. ``linear`` (base, slope): f = g = base + slope . x, time independent.
    """
    spec = dict(spec or {"kind": "constant", "value": 1.0})
    kind = spec.pop("kind", "constant")
    if kind == "constant":
        c = float(spec.get("value", 1.0))
        return BoundaryData(
            f=lambda x: np.full(len(x), c), g=lambda t, x: np.full(len(x), c), lower_bound=c, description=f"constant {c}"
        )
    if kind == "bump":
        base, amp = float(spec.get("base", 1.0)), float(spec.get("amplitude", 0.5))
        if domain.kind == "box":
            lo, hi = np.array(domain.lo), np.array(domain.hi)
            shape = lambda x: np.prod(np.sin(np.pi * np.clip((x - lo) / (hi - lo), 0, 1)), axis=-1)
        else:
            c, R = np.array(domain.center), domain.radius
            shape = lambda x: np.clip(1 - np.sum((x - c) ** 2, axis=-1) / R ** 2, 0, None)
        return BoundaryData(
            f=lambda x: base + amp * shape(x),
            g=lambda t, x: np.full(len(x), base),
            lower_bound=min(base, base + amp),
            description=f"bump base={base} amplitude={amp}",
        )
    if kind == "linear":
        base = float(spec.get("base", 1.0))
        slope = np.broadcast_to(np.asarray(spec.get("slope", 0.0), dtype=float), (domain.d,)).copy()
        lin = lambda x: base + x @ slope
        return BoundaryData(f=lin, g=lambda t, x: lin(x), description=f"linear base={base}")
    raise ValidationError(f"unknown data preset {kind!r}")


# ---------------------------------------------------------------------------
# Problem


@dataclass(frozen=True)
class ProblemSpec:
    domain: DomainSpec
    coeffs: CoefficientField
    hurst: HurstParams
    data: BoundaryData
    product: Product = Product.STRATONOVICH
    horizon: float = 1.0
    alpha_override: Optional[float] = None
    name: str = "problem"
    source: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def alpha(self) -> float:
        return self.hurst.alpha if self.alpha_override is None else float(self.alpha_override)

    def validate(self, n_check: int = 64) -> None:
        validate_hurst(self.hurst, self.d)
        if self.coeffs.d != self.d:
            raise DimensionMismatch(f"coefficients have d={self.coeffs.d}, domain has d={self.d}")
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        if not self.coeffs.ellipticity_delta > 0:
            raise ValidationError("diffusion is not uniformly elliptic")
        # Compatibility g(0, x) = f(x) on the boundary.
        rng = np.random.default_rng(12345)
        x = self.domain.project(self.domain.sample_uniform(rng, n_check))
        gap = np.max(np.abs(self.data.g(0.0, x) - self.data.f(x)))
        if gap > 1e-8:
            raise ValidationError(f"incompatible data: max |g(0,x) - f(x)| = {gap:.3g} on the boundary")

    def path_coefficients(self) -> CoefficientField:
        """Coefficients as used by the simulator: time-reflected and space-extended."""
        return extend_coefficients(time_reflect(self.coeffs), self.domain)

    def with_(self, **kw) -> "ProblemSpec":
        return replace(self, **kw)
