"""Acceptance criteria 1-14.

Each test records one line ``criterion N: PASS|FAIL ...`` that is printed in
the terminal summary, then asserts.  Criterion 8 runs only with
CHLAB_NIGHTLY=1.
"""

import os

import numpy as np
import pytest

from chlab.experiments import (
    phase_study, rate_scaling, standard_phase_config,
    timescale_sweep,
)
from chlab.io import SweepSpec, load_checkpoint, save_checkpoint
from chlab.linear import (
    dissipation_form_gap, energy_form_gap, hardy_family_check, kernel_check, orthogonal_gap,
)
from chlab.manifold import build_manifold_point, derivative_jumps, interval_profile
from chlab.potential import kink_energy
from chlab.solver import SolverConfig, advance_adaptive, initial_state, make_initial
from chlab.spectral import TorusGrid
from chlab.suites import load_fixture, verify_suite

RESULTS = {}
JOBS = int(os.environ.get("CHLAB_JOBS", "1"))


def report(n, passed, detail):
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert passed, line


# ---------------------------------------------------------------------------
# shared runs


@pytest.fixture(scope="module")
def phases():
    small = phase_study(standard_phase_config(48.0))
    large = phase_study(standard_phase_config(96.0))
    return small, large


@pytest.fixture(scope="module")
def plateau_sweep():
    return timescale_sweep("dissipation_plateau", [8.0, 10.0, 12.0, 14.0], SweepSpec(), master_seed=0, jobs=JOBS)


# ---------------------------------------------------------------------------


def test_c01_conservation(p):
    g = TorusGrid(48.0, 512)
    u0 = make_initial("manifold_plus_noise", {"zeros": [-13.0, 9.0], "hbar0": 0.1, "j_max": 24}, 1, g, p)
    cfg = SolverConfig(scheme="convex_split_1", dt_init=1e-4, dt_max=1e-3, t_end=1e6,
                       record_stride=10.0, max_steps=100000)
    st, log = advance_adaptive(initial_state(u0, cfg), cfg.t_end, cfg, p)
    ok = log.steps == 100000 and log.max_mass_drift <= 1e-11 and log.max_energy_increase <= 1e-10
    report(1, ok, f"steps={log.steps} mass drift={log.max_mass_drift:.2e} "
                  f"max step energy increase={log.max_energy_increase:.2e}")


def test_c02_dissipation_identity(p):
    g = TorusGrid(48.0, 512)
    u0 = make_initial("manifold_plus_noise", {"zeros": [-13.0, 9.0], "hbar0": 0.01, "j_max": 8}, 1, g, p)
    ratios = {}
    for scheme in ("convex_split_1", "imex_bdf2"):
        defects = []
        for dt in (0.02, 0.01):
            # fixed steps: the error test never rejects
            cfg = SolverConfig(scheme=scheme, dt_init=dt, dt_max=dt, error_tol=1e9, t_end=1.0, record_stride=1.0)
            _, log = advance_adaptive(initial_state(u0, cfg), 1.0, cfg, p)
            defects.append(log.defect[-1])
        ratios[scheme] = defects[0] / defects[1]
    ok = 1.7 <= ratios["convex_split_1"] <= 2.3 and 3.4 <= ratios["imex_bdf2"] <= 4.6
    report(2, ok, f"defect ratio first order={ratios['convex_split_1']:.3f} BDF2={ratios['imex_bdf2']:.3f}")


def test_c03_manifold_energetics(p):
    g = TorusGrid(40.0, 512)
    v = build_manifold_point([-10.0, 10.0], 1, p, g)
    e_err = abs(v.energy - 2 * kink_energy(p))
    xi_err = 0.0
    for gap in v.gaps:
        prof = interval_profile(gap, p)
        d = np.linspace(0.0, gap, 401)
        xi = 0.5 * prof.slope(d) ** 2 - p.g(prof.value(d))
        xi_err = max(xi_err, float(np.max(np.abs(xi + p.g(prof.amplitude)))))
    jumps = float(np.max(np.abs(derivative_jumps(v))))
    ok = e_err <= 1e-3 and abs(2 * kink_energy(p) - 1.885618) <= 1e-6 and xi_err <= 1e-8 and jumps <= 1e-8
    report(3, ok, f"E={v.energy:.6f} (2c0={2 * kink_energy(p):.6f}) discrepancy err={xi_err:.1e} "
                  f"max alpha={jumps:.1e}")


def test_c04_phase_one(phases):
    small, _ = phases
    ok = -1.3 <= small.phase1_slope <= -0.7
    report(4, ok, f"log gap vs log t slope={small.phase1_slope:.3f} on window ending at s1={small.s1_estimate:.3g}")


def test_c05_phase_two(phases):
    small, large = phases
    r2 = min(small.phase2_fit["r2"], large.phase2_fit["r2"])
    ratio = rate_scaling(small, large)["ratio"]
    ok = r2 >= 0.98 and 2.8 <= ratio <= 5.7
    report(5, ok, f"rates L=48 {small.phase2_rate:.4g} L=96 {large.phase2_rate:.4g} ratio={ratio:.3f} "
                  f"min R^2={r2:.4f}")


def test_c06_zero_count(phases):
    small, _ = phases
    report(6, bool(small.zero_count_ok),
           f"zero count equals N={small.n_zeros} from t={small.zero_count_settled} onward "
           f"(s1={small.s1_estimate:.3g}, final count {small.zero_count_timeline[-1][1]})")


def test_c07_plateau_scaling(p, plateau_sweep):
    res = plateau_sweep
    slope = res.fit["slope"]
    target = -2 * p.c_g
    ok = abs(slope - target) <= 0.2 * abs(target) and not res.excluded
    vals = ", ".join(f"{pt.ell:g}:{pt.value:.3e}" for pt in res.points)
    report(7, ok, f"ln D_inf slope={slope:.3f} (target {target:.3f} +-20%) D_inf by ell {vals}")


@pytest.mark.nightly
def test_c08_collision_scaling(p):
    res = timescale_sweep("collision_time", [6.0, 8.0, 10.0], SweepSpec(kind="collision_time", max_steps=400000),
                          master_seed=0, jobs=JOBS)
    slope = res.fit["slope"]
    ok = abs(slope - p.c_g) <= 0.25 * p.c_g and not res.excluded
    vals = ", ".join(f"{pt.ell:g}:{pt.value:.4g}" for pt in res.points)
    report(8, ok, f"ln T_coll slope={slope:.3f} (target {p.c_g:.3f} +-25%) T by ell {vals}")


def test_c09_eed_suite():
    rep = verify_suite("eed")
    fx = load_fixture()["constants"]["eed"]
    report(9, rep.passed, f"max weak/(L^2 gap)={rep.stats['weak']:.4g} (2x fixture {2 * fx['weak']:.4g}) "
                          f"max gap/(L^2 D)={rep.stats['diss']:.4g} (2x fixture {2 * fx['diss']:.4g}) "
                          f"samples={rep.samples}")


def test_c10_lipschitz(p):
    rep = verify_suite("lipschitz")
    exp = rep.stats["exponent"]
    ok = abs(exp + p.c_g) <= 0.15 * p.c_g and rep.passed
    report(10, ok, f"fitted exponent={exp:.4f} (target {-p.c_g:.4f} +-15%)")


def test_c11_delta_approximation():
    rep = verify_suite("delta_approx")
    s = rep.stats
    ok = rep.passed and s["rel_error"] <= 0.5 and s["alpha_spread"] <= 10
    report(11, ok, f"max relative error={s['rel_error']:.3f} alpha ratio in [{s['alpha_ratio_min']:.3f}, "
                   f"{s['alpha_ratio_max']:.3f}] zero-distance quotient={s['zero_dist']:.3f}")


def test_c12_linear_analysis(p):
    e20, e40 = energy_form_gap(20.0, p), energy_form_gap(40.0, p)
    orth = {w: orthogonal_gap(w, p, richardson=False) for w in (2.0, 4.0, 8.0)}
    free = [orth[w].extras["unconstrained"] for w in (2.0, 4.0, 8.0)]
    d20, d40 = dissipation_form_gap(20.0, p, n_fd=200), dissipation_form_gap(40.0, p, n_fd=400)
    ker = kernel_check(p)
    hardy = hardy_family_check()
    checks = {
        "energy": min(e20.minimum, e40.minimum) >= 0.05 and abs(e20.minimum - e40.minimum) <= 1e-2,
        "orthogonal": min(o.minimum for o in orth.values()) >= 0.1 and free[0] > free[1] > free[2],
        "dissipation": d20.minimum > 0 and d40.minimum > 0 and 0.5 <= d20.minimum / d40.minimum <= 2,
        "kernel": ker.passed,
        "hardy": hardy.passed,
    }
    report(12, all(checks.values()),
           f"energy gap {e20.minimum:.5f}/{e40.minimum:.5f}; orthogonal min "
           f"{min(o.minimum for o in orth.values()):.3f}, free {free[0]:.2e}>{free[1]:.2e}>{free[2]:.2e}; "
           f"dissipation {d20.minimum:.4f}/{d40.minimum:.4f}; kernel residual {ker.value:.1e}; "
           f"Hardy max {hardy.value:.3f}; failed={[k for k, v in checks.items() if not v]}")


def test_c13_well_prepared_trapping(plateau_sweep):
    pt = next(q for q in plateau_sweep.points if q.ell == 12.0)
    L = pt.length
    gap0, drift = pt.extras["gap0"], pt.extras["max_hminus1_drift"]
    ok = gap0 <= 1e-3 / L ** 2 and drift <= 1.0
    report(13, ok, f"ell=12: gap0={gap0:.2e} (limit {1e-3 / L ** 2:.2e}) max H^-1 drift={drift:.3e} "
                   f"up to t={pt.extras['horizon']:g}")


def test_c14_determinism(p, tmp_path):
    g = TorusGrid(32.0, 256)
    u0 = make_initial("manifold_plus_noise", {"zeros": [-8.0, 6.0], "hbar0": 0.05}, 9, g, p)
    same = True
    for scheme in ("convex_split_1", "imex_bdf2", "linearized_euler"):
        cfg = SolverConfig(scheme=scheme, dt_max=0.5, t_end=6.0, record_stride=1.0)
        full, _ = advance_adaptive(initial_state(u0, cfg), 6.0, cfg, p)
        half, _ = advance_adaptive(initial_state(u0, cfg), 3.0, cfg, p)
        save_checkpoint(half, tmp_path / f"{scheme}.json", config_hash="h")
        resumed, _ = advance_adaptive(load_checkpoint(tmp_path / f"{scheme}.json", "h", g), 6.0, cfg, p)
        same &= bool(np.array_equal(full.field.values, resumed.field.values))
    stats_equal = True
    for name, params in (("eed", {"samples": 20}), ("zero_assoc", {"samples": 20}), ("lipschitz", {})):
        a = verify_suite(name, params, master_seed=11)
        b = verify_suite(name, params, master_seed=11)
        stats_equal &= a.stats == b.stats
    report(14, same and stats_equal, f"checkpoint resume bitwise={same} suite statistics reproduce={stats_equal}")
