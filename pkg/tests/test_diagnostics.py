import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chlab.diagnostics import (
    CHECKS, DiagnosticsSeries, InequalitySuiteConfig, _ratios, delta_of, discrepancy,
    interp_sup_check, modica_mortola_calibrate, modica_mortola_check, monitor_inequalities, record,
)
from chlab.errors import InapplicableError, PreconditionError
from chlab.manifold import build_manifold_point
from chlab.solver import SolverConfig, advance_adaptive, initial_state, make_initial
from chlab.spectral import GridField, TorusGrid


@pytest.fixture(scope="module")
def run(p):
    g = TorusGrid(32.0, 256)
    vbar = build_manifold_point([-8.0, 6.0], 1, p, g)
    u0 = make_initial("manifold_plus_noise", {"zeros": [-8.0, 6.0], "hbar0": 0.05, "j_max": 16}, 5, g, p)
    cfg = SolverConfig(scheme="convex_split_1", dt_max=0.5, t_end=40.0, record_stride=0.05, record_growth=1.2)
    series = DiagnosticsSeries(n_zeros=2)

    def mon(st, log):
        series.append(record(st.field, vbar, p, 3.0, t=st.t))

    advance_adaptive(initial_state(u0, cfg), cfg.t_end, cfg, p, monitor=mon)
    return vbar, series


def test_record_on_the_manifold(p, grid32):
    v = build_manifold_point([-8.0, 6.0], 1, p, grid32)
    r = record(v.field, v, p, 3.0)
    assert not r.degraded
    assert abs(r.gap) < 1e-8 and r.zero_count == 2 and r.zero_dist < 1e-9
    assert r.Hbar == pytest.approx(0.0, abs=1e-20)
    assert r.delta == pytest.approx(delta_of(32.0, v.min_gap, p))


def test_record_degrades_without_zeros(p, grid32):
    v = build_manifold_point([-8.0, 6.0], 1, p, grid32)
    r = record(GridField(grid32, 0.9 * np.ones(grid32.n)), v, p, 3.0)
    assert r.degraded and math.isnan(r.gap)
    assert r.zero_count == 0


def test_discrepancy_on_profile(p, grid32):
    v = build_manifold_point([-8.0, 8.0], 1, p, grid32)
    xi, sup = discrepancy(v.field, p)
    assert sup == pytest.approx(float(p.g(v.amplitudes[0])), abs=1e-6)


def test_delta_formula(p):
    assert delta_of(16.0, 4.0, p) == pytest.approx(0.25 * math.exp(-4 * math.sqrt(2)))


def test_csv_roundtrip(run, tmp_path):
    _, series = run
    path = tmp_path / "s.csv"
    series.to_csv(path)
    back = DiagnosticsSeries.from_csv(path)
    assert len(back) == len(series)
    for name in ("t", "E_u", "gap", "D", "Hbar"):
        assert np.array_equal(back.column(name), series.column(name))
    assert np.array_equal(back[-1].zeros, series[-1].zeros)


def test_csv_rejects_foreign_file(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(PreconditionError):
        DiagnosticsSeries.from_csv(path)


def test_monitor_reports_every_check(run):
    _, series = run
    rep = monitor_inequalities(series, InequalitySuiteConfig(length=32.0, ell=3.0, c_rate=math.sqrt(2)))
    assert set(rep.checks) == set(CHECKS)
    assert rep.passed
    for c in rep.checks.values():
        assert np.isfinite(c.max_ratio)
    tight = {k: 0.5 * v for k, v in rep.max_ratios().items() if v > 0}
    rep2 = monitor_inequalities(series, InequalitySuiteConfig(32.0, 3.0, math.sqrt(2), thresholds=tight))
    assert not rep2.passed and rep2.failed()


def test_monitor_needs_two_records(run):
    with pytest.raises(PreconditionError):
        monitor_inequalities(DiagnosticsSeries(run[1][:1]), InequalitySuiteConfig(32.0, 3.0, 1.4))


def test_ratio_rules():
    r = _ratios([0.0, 1.0, 2.0, np.nan], [0.0, 0.0, 4.0, 1.0], 1e-12)
    assert math.isnan(r[0]) and math.isinf(r[1]) and r[2] == 0.5 and math.isnan(r[3])


def test_modica_mortola(p):
    g = TorusGrid(40.0, 512)
    C = modica_mortola_calibrate(g, p)
    assert 0 < C < 10
    v = build_manifold_point([-10.0, 10.0], 1, p, g)
    assert modica_mortola_check(v.field, p, C).passed
    with pytest.raises(InapplicableError):
        modica_mortola_check(GridField(g, np.ones(512)), p)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 20))
def test_interpolation_inequality_holds_with_unit_constant(seed, modes):
    g = TorusGrid(10.0, 256)
    rng = np.random.default_rng(seed)
    j = np.arange(1, modes + 1)
    a, b = rng.standard_normal(modes), rng.standard_normal(modes)
    k = 2 * np.pi * j / g.length
    f = np.sin(np.outer(g.x, k)) @ a + np.cos(np.outer(g.x, k)) @ b
    res = interp_sup_check(GridField(g, f))
    assert res.passed, res.value
