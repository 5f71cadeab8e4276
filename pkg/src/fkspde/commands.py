"""Subcommand runners shared by the CLI and the acceptance suite.

Each runner takes a loaded problem file plus resolved budgets and returns a
CommandResult: table rows, verdict records {name, theory, fitted, stderr,
pass} and the parameters that enter the config digest.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import __version__
from .analysis import holder_variance_curve, moment_growth_fit, sensitivity_curve, theory_exponents
from .config import LoadedSpec, spec_from_dict
from .errors import ValidationError
from .estimator import (
    comparison_check,
    config_digest,
    noise_table_for,
    solve_point_conditional,
    solve_point_fixed_noise,
    write_csv,
)
from .model import Product, ProblemSpec
from .noisefield import MollifierParams, SheetGrid, SmoothedNoise, load_sheet, sample_sheet
from .pathsim import PathConfig, empirical_density_check, simulate_chunked
from .pdecheck import CrosscheckBudget, crosscheck
from .rng import DEFAULT_SEED, default_workers, derive_seed
from .spectral import small_ball_domain, smallball_eigen

SUBCOMMANDS = ("solve", "moments", "smallball", "crosscheck", "holder", "sensitivity", "density", "compare")


@dataclass
class Budgets:
    paths: int
    steps: int
    seed: int
    workers: int = 1

    @classmethod
    def resolve(cls, ls: LoadedSpec, section: str, paths=None, steps=None, seed=None, workers=None) -> "Budgets":
        """Flags override the command's table, which overrides [budgets]."""
        base = ls.budgets()
        sec = ls.section(section)

        def pick(flag, key, default):
            if flag is not None:
                return flag
            return sec.get(key, base.get(key, default))

        b = cls(int(pick(paths, "paths", 10000)), int(pick(steps, "steps", 100)), int(pick(seed, "seed", DEFAULT_SEED)),
                int(workers if workers is not None else default_workers()))
        if b.paths < 2 or b.steps < 2 or b.workers < 1:
            raise ValidationError("paths and steps must be >= 2 and workers >= 1")
        return b

    def digest_params(self) -> dict:
        # Worker count never changes results, so it stays out of the digest.
        return {"paths": self.paths, "steps": self.steps, "seed": self.seed}


@dataclass
class CommandResult:
    command: str
    rows: list
    verdicts: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(v["pass"] for v in self.verdicts)


def verdict(name: str, theory, fitted, ok: bool, stderr=None, **extra) -> dict:
    out = {"name": name, "theory": theory, "fitted": fitted, "stderr": stderr, "pass": bool(ok)}
    out.update(extra)
    return out


def _points(sec: dict, key: str = "x") -> list:
    raw = sec.get(key, [[0.0]])
    if raw and not isinstance(raw[0], (list, tuple)):
        raw = [raw]
    return [[float(v) for v in p] for p in raw]


def _floats(v) -> list:
    return [float(a) for a in (v if isinstance(v, (list, tuple)) else [v])]


# ---------------------------------------------------------------------------


def run_solve(ls: LoadedSpec, b: Budgets) -> CommandResult:
    spec = ls.problem
    sec = ls.section("solve")
    mode = sec.get("mode", "conditional")
    ts = _floats(sec.get("t", spec.horizon))
    xs = _points(sec)
    noise = None
    if mode == "fixed_noise":
        noise = _fixed_noise(spec, sec, max(ts))
    elif mode != "conditional":
        raise ValidationError(f"unknown solve mode {mode!r}")
    rows, verdicts = [], []
    for i, t in enumerate(ts):
        for j, x in enumerate(xs):
            seed = derive_seed(b.seed, i, j)
            if noise is None:
                est = solve_point_conditional(spec, t, x, b.paths, seed, n_steps=b.steps, workers=b.workers)
            else:
                est = solve_point_fixed_noise(spec, t, x, noise, b.paths, seed, n_steps=b.steps, workers=b.workers,
                                              resolution=int(sec.get("table_resolution", 401)))
            rec = est.record()
            rows.append(rec)
            if "expect" in sec:
                target = float(sec["expect"])
                tol = max(3 * est.std_error, 1e-12 * max(1.0, abs(target)))
                verdicts.append(verdict(f"mean t={t} x={x}", target, est.value, abs(est.value - target) <= tol,
                                        est.std_error))
            if "lower" in sec:
                lo = float(sec["lower"])
                verdicts.append(verdict(f"lower bound t={t} x={x}", lo, est.value,
                                        est.value >= lo - 3 * est.std_error, est.std_error))
    return CommandResult("solve", rows, verdicts, {"mode": mode, "t": ts, "x": xs})


def _fixed_noise(spec: ProblemSpec, sec: dict, t_max: float) -> SmoothedNoise:
    m = MollifierParams(float(sec.get("eps", 0.05)), float(sec.get("delta", 0.05)))
    if "sheet" in sec:
        with open(sec["sheet"], "rb") as fh:
            sheet = load_sheet(fh)
    else:
        lo, hi = spec.domain.bounds()
        grid = SheetGrid.covering(t_max, lo, hi, float(sec.get("sheet_dt", 0.005)), float(sec.get("sheet_dx", 0.02)),
                                  m.eps)
        sheet = sample_sheet(grid, spec.hurst, int(sec.get("sheet_seed", 0)))
    return SmoothedNoise(sheet, m)


def run_moments(ls: LoadedSpec, b: Budgets) -> CommandResult:
    spec = ls.problem
    sec = ls.section("moments")
    x = _floats(sec.get("x", [0.0]))
    tol = float(sec.get("tolerance", 0.35))
    g = moment_growth_fit(spec, x, _floats(sec.get("t_grid", [0.5, 1.0, 2.0])),
                          [int(k) for k in sec.get("k_grid", [2, 3, 4])], b.paths, b.seed,
                          t_fixed=float(sec.get("t_fixed", 1.0)), k_fixed=int(sec.get("k_fixed", 2)),
                          steps_per_unit=b.steps, min_survival=float(sec.get("min_survival", 0.5)), workers=b.workers)
    th = g.theory
    verdicts = [
        verdict("t_exponent", th.t_exp, g.t_fit.slope, g.t_fit.within(th.t_exp, tol), g.t_fit.stderr, tolerance=tol),
        verdict("k_exponent", th.p_exp, g.k_fit.slope, g.k_fit.within(th.p_exp, tol), g.k_fit.stderr, tolerance=tol),
        verdict("sandwich_r2", float(sec.get("min_r2", 0.9)), g.sandwich.r2,
                g.sandwich.r2 >= float(sec.get("min_r2", 0.9))),
    ]
    return CommandResult("moments", g.points, verdicts, {"section": sec})


def smallball_mc(spec: ProblemSpec, x, eps: float, times, n_paths: int, steps_per_unit: int, seed: int,
                 workers: int = 1) -> list:
    """Monte Carlo P(sup_{s<=t} |X_s - x| < eps) at each t: (estimate, se) pairs."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sub = spec.with_(domain=small_ball_domain(x, eps, len(x)))
    t_max = max(times)
    n = max(2, int(round(steps_per_unit * t_max)))
    dt = t_max / n
    idx = [int(round(t / dt)) for t in times]
    cfg = PathConfig(n, t_max, tuple(x), seed)
    parts = simulate_chunked(sub, cfg, n_paths, lambda batch: [int(batch.alive_at(i).sum()) for i in idx], workers)
    out = []
    for j in range(len(times)):
        p = sum(pt[j] for pt in parts) / n_paths
        out.append((p, math.sqrt(max(p * (1 - p), 1e-300) / n_paths)))
    return out


def run_smallball(ls: LoadedSpec, b: Budgets, eps=None, times=None) -> CommandResult:
    spec = ls.problem
    sec = ls.section("smallball")
    x = _floats(sec.get("x", [0.0]))
    eps_list = _floats(eps if eps is not None else sec.get("eps", [1.0]))
    ts = _floats(times if times is not None else sec.get("t", [1.0]))
    n_grid = int(sec.get("n_grid", 400))
    rel = float(sec.get("tolerance", 0.10))
    rows, verdicts, lambdas = [], [], {}
    for e_i, eps_v in enumerate(eps_list):
        preds = [smallball_eigen(spec.coeffs, x, eps_v, t, spec.domain, n_grid) for t in ts]
        lambdas[eps_v] = preds[0].lambda1
        mc = smallball_mc(spec, x, eps_v, ts, b.paths, b.steps, derive_seed(b.seed, e_i), b.workers) if b.paths else None
        for j, (t, pr) in enumerate(zip(ts, preds)):
            row = {"eps": eps_v, "t": t, "lambda1": pr.lambda1, "prediction": pr.value}
            if mc:
                row.update(mc=mc[j][0], mc_se=mc[j][1], ratio=mc[j][0] / pr.value,
                           rel_gap=abs(mc[j][0] - pr.value) / pr.value)
                verdicts.append(verdict(f"survival eps={eps_v} t={t}", pr.value, mc[j][0], row["rel_gap"] <= rel,
                                        mc[j][1], tolerance=rel))
            rows.append(row)
        if mc and len(ts) >= 2 and all(m[0] > 0 for m in mc):
            slope = float(np.polyfit(ts, np.log([m[0] for m in mc]), 1)[0])
            lam = lambdas[eps_v]
            verdicts.append(verdict(f"decay rate eps={eps_v}", lam, -slope, abs(-slope - lam) <= 0.03 * lam,
                                    tolerance=0.03))
    if len(eps_list) >= 2:
        scaled = [lambdas[e] * e ** 2 for e in eps_list]
        spread = (max(scaled) - min(scaled)) / min(scaled)
        verdicts.append(verdict("eps scaling lambda1 eps^2", scaled[0], scaled[-1], spread <= 0.01, tolerance=0.01))
    return CommandResult("smallball", rows, verdicts, {"x": x, "eps": eps_list, "t": ts, "n_grid": n_grid})


def run_crosscheck(ls: LoadedSpec, b: Budgets) -> CommandResult:
    spec = ls.problem
    sec = ls.section("crosscheck")
    t = float(sec.get("t", spec.horizon))
    m = MollifierParams(float(sec.get("eps", 0.05)), float(sec.get("delta", 0.05)))
    lo, hi = spec.domain.bounds()
    grid = SheetGrid.covering(t, lo, hi, float(sec.get("sheet_dt", 0.005)), float(sec.get("sheet_dx", 0.02)), m.eps)
    sheet = sample_sheet(grid, spec.hurst, int(sec.get("sheet_seed", 0)))
    budget = CrosscheckBudget(n_paths=b.paths, n_steps=b.steps, fd_space=int(sec.get("fd_space", 200)),
                              fd_time=int(sec.get("fd_time", 4000)),
                              table_resolution=int(sec.get("table_resolution", 801)), seed=b.seed, workers=b.workers)
    rep = crosscheck(spec, sheet, m, [(t, x) for x in _points(sec)], budget)
    tol = float(sec.get("tolerance", 0.03))
    verdicts = [verdict(f"fd vs fk x={r['x']}", r["fd_value"], r["fk_value"], r["rel_gap"] < tol, r["mc_se"],
                        tolerance=tol) for r in rep.rows]
    return CommandResult("crosscheck", rep.rows, verdicts, {"section": sec})


def run_holder(ls: LoadedSpec, b: Budgets) -> CommandResult:
    spec = ls.problem
    sec = ls.section("holder")
    t = float(sec.get("t", spec.horizon))
    x = _floats(sec.get("x", [0.0]))
    margin = float(sec.get("margin", 0.4))
    th = theory_exponents(spec.hurst)
    rows, verdicts = [], []
    plans = [("space", sec.get("space_offsets", []), 2 * th.rho), ("time", sec.get("time_offsets", []), th.rho_prime)]
    for kind, offs, target in plans:
        if not offs:
            continue
        if target is None:
            verdicts.append(verdict(f"{kind} slope", None, None, False, note="rho' unavailable for these Hurst indices"))
            continue
        c = holder_variance_curve(spec, t, x, _floats(offs), b.paths, derive_seed(b.seed, len(rows)), kind=kind,
                                  n_steps=b.steps, workers=b.workers)
        rows.extend(c.rows())
        ok = c.fit is not None and c.fit.slope >= target - margin
        verdicts.append(verdict(f"{kind} slope", target, c.fit.slope if c.fit else None, ok,
                                c.fit.stderr if c.fit else None, bound=target - margin))
    return CommandResult("holder", rows, verdicts, {"section": sec})


def run_sensitivity(ls: LoadedSpec, b: Budgets) -> CommandResult:
    spec = ls.problem
    sec = ls.section("sensitivity")
    c = sensitivity_curve(spec, _floats(sec.get("x", [0.0])), float(sec.get("t_ref", spec.horizon)),
                          _floats(sec.get("gaps", [0.025, 0.05, 0.1, 0.2])), b.paths, b.seed, n_steps=b.steps,
                          p=float(sec.get("p", 2.0)), workers=b.workers)
    target, tol = float(sec.get("target", 2.0)), float(sec.get("tolerance", 0.3))
    ok = c.fit is not None and c.fit.within(target, tol)
    v = verdict("sup-difference slope", target, c.fit.slope if c.fit else None, ok, c.fit.stderr if c.fit else None,
                tolerance=tol)
    return CommandResult("sensitivity", c.rows(), [v], {"section": sec})


def run_density(ls: LoadedSpec, b: Budgets) -> CommandResult:
    spec = ls.problem
    sec = ls.section("density")
    rep = empirical_density_check(spec, _floats(sec.get("x0", [0.0])), _floats(sec.get("times", [spec.horizon])),
                                  b.paths, bins=int(sec.get("bins", 40)), seed=b.seed, steps_per_unit=b.steps,
                                  ck=bool(sec.get("ck", True)), workers=b.workers)
    rows = []
    centers = [0.5 * (e[1:] + e[:-1]) for e in rep.edges]
    for t, c in zip(rep.times, rep.counts):
        for idx in np.ndindex(c.shape):
            rows.append({"time": t, "bin": [float(centers[m][i]) for m, i in enumerate(idx)], "count": int(c[idx])})
    tol = float(sec.get("ck_tolerance", 0.05))
    verdicts = [
        verdict("gaussian envelope", None, {"C": rep.C_cert, "c": rep.c_fit}, rep.envelope_certified,
                kappa1=rep.kappa1, kappa2=rep.kappa2),
        verdict("mass conservation", 1.0, rep.mass_total, abs(rep.mass_total - 1.0) <= 3 * rep.mass_se + 1e-12,
                rep.mass_se),
    ]
    if rep.ck_tv is not None:
        verdicts.append(verdict("chapman-kolmogorov tv", tol, rep.ck_tv, rep.ck_tv < tol, r=rep.ck_r))
    return CommandResult("density", rows, verdicts, {"section": sec, "summary": rep.as_dict()})


def _variant(ls: LoadedSpec, case: dict) -> ProblemSpec:
    raw = json.loads(json.dumps(ls.raw))
    co = raw.setdefault("coefficients", {})
    for key in ("drift", "diffusion"):
        if key in case:
            co[key] = case[key]
    return spec_from_dict(raw)


def run_compare(ls: LoadedSpec, b: Budgets) -> CommandResult:
    sec = ls.section("compare")
    cases = [("base", ls.problem)] + [(name, _variant(ls, c)) for name, c in sorted(sec.get("cases", {}).items())]
    x = _floats(sec.get("x", [0.0]))
    s_grid = _floats(sec.get("s_grid", [0.1, 0.2, 0.3, 0.4, 0.5]))
    r_grid = _floats(sec.get("r_grid", [0.6, 0.7, 0.8, 0.9, 1.0]))
    rows, verdicts = [], []
    for i, (name, spec) in enumerate(cases):
        dens = empirical_density_check(spec, x, _floats(sec.get("density_times", [0.25, 0.5, 1.0])),
                                       int(sec.get("density_paths", 200000)), bins=int(sec.get("density_bins", 80)),
                                       seed=derive_seed(b.seed, i, 0), steps_per_unit=b.steps, ck=False,
                                       workers=b.workers)
        rep = comparison_check(spec, x, s_grid, r_grid, b.paths, derive_seed(b.seed, i, 1), dens.kappa1, dens.kappa2,
                               steps_per_unit=b.steps, z=float(sec.get("z", 3.0)), workers=b.workers)
        for r in rep.rows():
            rows.append({"case": name, **r})
        verdicts.append(verdict(f"comparison {name}", 0, len(rep.violations), rep.ok, kappa1=dens.kappa1,
                                kappa2=dens.kappa2))
    return CommandResult("compare", rows, verdicts, {"section": sec})


RUNNERS: dict[str, Callable] = {
    "solve": run_solve,
    "moments": run_moments,
    "smallball": run_smallball,
    "crosscheck": run_crosscheck,
    "holder": run_holder,
    "sensitivity": run_sensitivity,
    "density": run_density,
    "compare": run_compare,
}


# ---------------------------------------------------------------------------
# Serialization


def provenance(ls: LoadedSpec, res: CommandResult, b: Budgets) -> dict:
    digest = config_digest(ls.problem, command=res.command, budgets=b.digest_params(), params=res.params)
    return {"tool": "fkspde", "version": __version__, "command": res.command, "spec": ls.problem.name,
            "seed": b.seed, "digest": digest}


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(w) for k, w in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(w) for w in v]
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def render(res: CommandResult, header: dict, fmt: str) -> str:
    """Serialized payload; identical inputs give identical bytes."""
    if fmt == "json":
        doc = {"provenance": header, "records": _clean(res.rows), "verdicts": _clean(res.verdicts)}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        write_csv(_clean(res.rows), buf, header)
        return buf.getvalue()
    raise ValidationError(f"unknown format {fmt!r}")


def render_verdicts(res: CommandResult, header: dict) -> str:
    return json.dumps({"provenance": header, "verdicts": _clean(res.verdicts)}, indent=2, sort_keys=True) + "\n"
