import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chlab.errors import FitError, PreconditionError
from chlab.experiments import (
    SWEEP_KINDS, PhaseReport, detect_plateau, fit_line, next_pow2, rate_scaling, reference_point,
    run_sweep_point, standard_phase_config, sweep_point_config, timescale_sweep,
)
from chlab.io import SweepSpec


@settings(max_examples=40)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_fit_line_recovers_exact_lines(a, b):
    x = np.linspace(0, 3, 7)
    f = fit_line(x, a + b * x)
    assert f["slope"] == pytest.approx(b, abs=1e-9)
    assert f["intercept"] == pytest.approx(a, abs=1e-9)
    assert f["n"] == 7


def test_fit_line_needs_three_points():
    assert fit_line([1, 2], [3, 4]) is None


def test_next_pow2():
    assert next_pow2(3) == 16
    assert next_pow2(257) == 512
    assert next_pow2(512) == 512


def test_detect_plateau_synthetic():
    L = 40.0
    t = np.geomspace(0.01, 800, 200)
    D = 1e-9 + np.exp(-t)  # decays onto a constant
    value, window = detect_plateau(t, D, L)
    assert value == pytest.approx(1e-9, rel=1e-3)
    assert window[0] > 15
    v2, w2 = detect_plateau(t, np.exp(-t), L)
    assert math.isnan(v2) and w2 is None


def test_sweep_config_geometry():
    cfg = sweep_point_config("dissipation_plateau", 10.0, SweepSpec(), master_seed=3, index=1)
    grid, p, vbar = reference_point(cfg)
    assert grid.length == 80.0
    assert vbar.min_gap == pytest.approx(10.0)
    assert sorted(np.round(vbar.gaps, 9)) == [10.0, 20.0, 20.0, 30.0]
    with pytest.raises(PreconditionError):
        sweep_point_config("bogus", 10.0, SweepSpec())
    assert set(SWEEP_KINDS) == {"dissipation_plateau", "collision_time"}


def test_sweep_needs_three_points():
    with pytest.raises(FitError):
        timescale_sweep("dissipation_plateau", [8.0, 10.0])


@pytest.mark.slow
def test_plateau_point_runs():
    cfg = sweep_point_config("dissipation_plateau", 6.0, SweepSpec())
    pt = run_sweep_point("dissipation_plateau", cfg)
    assert pt.flag is None and pt.value > 0
    assert pt.extras["max_hminus1_drift"] < 1.0


def test_rate_scaling():
    def rep(L, rate):
        return PhaseReport(L, 10.0, 2, 0, 0, 0, None, None, None, -1.0, None, rate, None, 0, 0, [], None,
                           True, 0, 0, 0, False)
    r = rate_scaling(rep(48.0, 0.08), rep(96.0, 0.02))
    assert r["ratio"] == pytest.approx(4.0)
    assert r["exponent"] == pytest.approx(-2.0)


def test_standard_phase_config_scales():
    a, b = standard_phase_config(48.0), standard_phase_config(96.0)
    assert b.solver.dt_max == pytest.approx(4 * a.solver.dt_max)
    assert b.solver.t_end == pytest.approx(4 * a.solver.t_end)
    assert b.grid.n == 2 * a.grid.n
    assert reference_point(b)[2].min_gap == pytest.approx(2 * reference_point(a)[2].min_gap)
