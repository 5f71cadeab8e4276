import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from fkspde.errors import StartOutsideDomain, ValidationError
from fkspde.pathsim import (
    ExitDetection,
    PathConfig,
    empirical_density_check,
    read_path_dump,
    simulate_batch,
    simulate_coupled,
    simulate_path,
    simulate_replicas,
    write_path_dump,
)

from conftest import make_spec


def survival_series(t, L=1.0, terms=50):
    """P(BM from 0 stays in (-L, L) up to t), eigenfunction expansion."""
    k = np.arange(terms)
    lam = ((2 * k + 1) * math.pi / (2 * L)) ** 2 / 2
    return float(np.sum(4 / math.pi * (-1) ** k / (2 * k + 1) * np.exp(-lam * t)))


def test_survival_series_oracle_value():
    assert math.isclose(survival_series(1.0), 4 / math.pi * math.exp(-math.pi ** 2 / 8), abs_tol=2e-5)


def test_bridge_corrected_survival_matches_series():
    spec = make_spec()
    b = simulate_batch(spec, PathConfig(200, 1.0, (0.0,), 1), 40000)
    p = float((~b.exited).mean())
    se = math.sqrt(p * (1 - p) / len(b))
    # Residual discretization bias at 200 steps is well under 1 SE here.
    assert abs(p - survival_series(1.0)) < 4 * se


def test_bridge_only_adds_exits():
    spec = make_spec()
    for n in (20, 80):
        g = simulate_batch(spec, PathConfig(n, 1.0, (0.0,), 3, ExitDetection.GRID_ONLY), 5000)
        b = simulate_batch(spec, PathConfig(n, 1.0, (0.0,), 3, ExitDetection.BRIDGE_CORRECTED), 5000)
        assert b.exited.mean() >= g.exited.mean()
        # Same increments: every grid exit is also a bridge exit, no later.
        both = g.exited
        assert np.all(b.exited[both]) and np.all(b.exit_index[both] <= g.exit_index[both])


def test_mean_square_displacement_in_huge_box():
    spec = make_spec((-50.0, -50.0), (50.0, 50.0))
    b = simulate_batch(spec, PathConfig(20, 1.0, (0.0, 0.0), 5), 50000)
    msd = np.sum(b.states[:, -1] ** 2, axis=1)
    assert abs(msd.mean() - 2.0) < 3 * msd.std() / math.sqrt(len(msd))


def test_increments_are_standard_gaussian():
    spec = make_spec((-50.0,), (50.0,))
    b = simulate_batch(spec, PathConfig(10, 1.0, (0.0,), 9), 2000)
    z = (np.diff(b.states[:, :, 0], axis=1) / math.sqrt(0.1)).ravel()
    assert stats.kstest(z, "norm").pvalue > 0.01


def test_killed_path_invariants():
    spec = make_spec()
    b = simulate_batch(spec, PathConfig(100, 1.0, (0.3,), 2), 500)
    D = spec.domain
    for j in range(len(b)):
        p = b.path(j)
        assert p.states[0, 0] == 0.3
        alive = p.states[: p.exit_index if p.exited else len(p.times)]
        assert np.all(D.signed_distance(alive) > -1e-12)
        if p.exited:
            assert abs(float(D.signed_distance(p.exit_point[None])[0])) < 1e-9
            assert 0 < p.exit_time <= 1.0
            assert np.all(p.states[p.exit_index:] == p.exit_point)


def test_ball_exit_points_on_sphere():
    from fkspde.model import DomainSpec

    spec = make_spec((-1.0, -1.0), (1.0, 1.0))
    spec = spec.with_(domain=DomainSpec.ball([0.0, 0.0], 0.5))
    b = simulate_batch(spec, PathConfig(50, 1.0, (0.1, 0.0), 4), 2000)
    pts = b.exit_point[b.exited]
    assert len(pts) > 0 and np.allclose(np.linalg.norm(pts, axis=1), 0.5)


def test_determinism_and_replicas():
    spec = make_spec()
    cfg = PathConfig(50, 1.0, (0.0,), 11)
    a, b = simulate_path(spec, cfg), simulate_path(spec, cfg)
    assert np.array_equal(a.states, b.states)
    reps = simulate_replicas(spec, cfg, 3, 99)
    reps2 = simulate_replicas(spec, cfg, 3, 99, workers=3)
    assert all(np.array_equal(r.states, s.states) for r, s in zip(reps, reps2))
    from dataclasses import replace
    from fkspde.rng import derive_seed

    one = simulate_path(spec, replace(cfg, seed=derive_seed(99, 0)))
    assert np.array_equal(one.states, reps[0].states)


def test_replica_increments_uncorrelated():
    spec = make_spec((-50.0,), (50.0,))
    a = simulate_batch(spec, PathConfig(4, 1.0, (0.0,), 1), 20000)
    b = simulate_batch(spec, PathConfig(4, 1.0, (0.0,), 2), 20000)
    r = np.corrcoef(a.states[:, -1, 0], b.states[:, -1, 0])[0, 1]
    assert abs(r) < 3 / math.sqrt(20000)


def test_start_outside_rejected():
    with pytest.raises(StartOutsideDomain):
        simulate_path(make_spec(), PathConfig(10, 1.0, (1.0,), 0))
    with pytest.raises(ValidationError):
        PathConfig(1, 1.0, (0.0,), 0)


@given(st.floats(0.05, 0.95))
def test_survival_monotone_in_time_and_domain(frac):
    spec = make_spec()
    b = simulate_batch(spec, PathConfig(40, 1.0, (0.0,), 6), 400)
    surv = [b.alive_at(i).mean() for i in range(41)]
    assert all(x >= y for x, y in zip(surv, surv[1:]))
    big = make_spec((-1.0 - frac,), (1.0 + frac,))
    bb = simulate_batch(big, PathConfig(40, 1.0, (0.0,), 6), 400)
    assert (~bb.exited).mean() >= (~b.exited).mean()


def test_coupled_paths():
    auto = make_spec((-10.0,), (10.0,), horizon=2.0)
    cfg = PathConfig(50, 2.0, (0.0,), 3, horizon=1.0)
    a, b = simulate_coupled(auto, cfg, 2.0, 1.5, 10)
    assert np.array_equal(a.states, b.states)
    drift = make_spec((-10.0,), (10.0,), horizon=2.0, drift={"kind": "trig_t", "amplitude": 1.0, "frequency": 1.0})
    a, b = simulate_coupled(drift, cfg, 1.7, 1.7, 10)
    assert np.array_equal(a.states, b.states)
    a, b = simulate_coupled(drift, cfg, 2.0, 1.5, 10)
    assert not np.array_equal(a.states, b.states)
    # Drift difference is deterministic: int_0^1 sin(2 - s) - sin(1.5 - s) ds on the Euler grid.
    s = np.linspace(0, 1, 51)[:-1]
    exact = np.sum(np.sin(2.0 - s) - np.sin(1.5 - s)) * 0.02
    assert np.allclose(a.states[:, -1, 0] - b.states[:, -1, 0], exact, atol=1e-12)


def test_path_dump_roundtrip():
    spec = make_spec()
    b = simulate_batch(spec, PathConfig(8, 1.0, (0.0,), 2), 3)
    buf = io.StringIO()
    write_path_dump(b, buf)
    buf.seek(0)
    assert buf.getvalue().startswith("# fkspde-paths v1")
    got = read_path_dump(buf)
    assert np.array_equal(got["states"], b.states)
    assert np.array_equal(got["exited"][:, -1], b.exited)


def test_density_check_on_free_brownian_motion():
    spec = make_spec((-6.0,), (6.0,))
    rep = empirical_density_check(spec, [0.0], [0.5, 1.0], 200000, bins=48, seed=1, steps_per_unit=40)
    assert rep.envelope_certified
    # Exact heat kernel: C = 1, c = 1.
    assert abs(rep.C_fit - 1) < 0.05 and abs(rep.c_fit - 1) < 0.05
    assert abs(rep.mass_total - 1) <= 3 * rep.mass_se + 1e-12
    assert rep.ck_tv < 0.05


def test_density_check_ck_on_unit_interval():
    spec = make_spec()
    rep = empirical_density_check(spec, [0.0], [0.5, 1.0], 200000, bins=20, seed=2, steps_per_unit=100)
    assert rep.ck_tv < 0.05
    assert abs(rep.survival[-1] - survival_series(1.0)) < 0.01
