import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chlab.errors import PreconditionError
from chlab.spectral import (
    DeltaComb, GridField, TorusGrid, delta_comb_tail_bound, delta_comb_weak_norm_sq, derivative,
    dissipation, energy, h1dot_norm_sq, hminus1_norm_sq, integrate, interpolate, l2_norm_sq, mean,
    resample, weak_norm_sq, weak_norm_sq_minus_comb,
)


def _mode(grid, j, phase=0.0):
    return GridField.from_function(grid, lambda x: np.sin(2 * np.pi * j * x / grid.length + phase))


def test_grid_rejects_bad_sizes():
    with pytest.raises(PreconditionError):
        TorusGrid(10.0, 100)
    with pytest.raises(PreconditionError):
        TorusGrid(-1.0, 64)


def test_wrap_into_half_open_interval():
    g = TorusGrid(10.0, 64)
    y = g.wrap(np.array([-5.0, 5.0, 7.0, -13.0]))
    assert np.allclose(y, [5.0, 5.0, -3.0, -3.0])


def test_derivative_of_mode():
    g = TorusGrid(2 * np.pi, 64)
    u = GridField.from_function(g, np.sin)
    assert np.allclose(derivative(u).values, np.cos(g.x), atol=1e-12)
    assert np.allclose(derivative(u, 2).values, -np.sin(g.x), atol=1e-12)


def test_mode_norms_closed_form():
    g = TorusGrid(12.0, 128)
    for j in (1, 3, 7):
        w = _mode(g, j, 0.3)
        k = 2 * np.pi * j / g.length
        assert l2_norm_sq(w) == pytest.approx(g.length / 2, rel=1e-12)
        assert h1dot_norm_sq(w) == pytest.approx(k * k * g.length / 2, rel=1e-12)
        assert hminus1_norm_sq(w) == pytest.approx(g.length / (2 * k * k), rel=1e-12)
        ell = 2.5
        assert weak_norm_sq(w, ell) == pytest.approx(g.length / 2 / (ell ** -2 + k * k), rel=1e-12)


def test_hminus1_needs_mean_zero():
    g = TorusGrid(8.0, 64)
    with pytest.raises(PreconditionError):
        hminus1_norm_sq(GridField(g, np.ones(64)))


def test_energy_of_wells_and_mean(p):
    g = TorusGrid(8.0, 64)
    assert energy(GridField(g, np.ones(64)), p) == 0.0
    assert energy(GridField(g, -np.ones(64)), p) == 0.0
    assert dissipation(GridField(g, np.ones(64)), p) == 0.0
    assert mean(GridField(g, 3 * np.ones(64))) == pytest.approx(3.0)
    assert integrate(GridField(g, np.ones(64))) == pytest.approx(8.0)


def test_interpolate_smooth_function():
    g = TorusGrid(10.0, 256)
    f = GridField.from_function(g, lambda x: np.cos(2 * np.pi * x / 10))
    x = np.linspace(-5, 5, 37)
    assert np.max(np.abs(interpolate(f, x) - np.cos(2 * np.pi * x / 10))) < 1e-6


def test_resample_roundtrip():
    g, G = TorusGrid(10.0, 64), TorusGrid(10.0, 256)
    f = _mode(g, 3) + 0.5 * _mode(g, 5, 1.0)
    up = resample(f, G)
    assert np.allclose(resample(up, g).values, f.values, atol=1e-13)
    assert l2_norm_sq(up) == pytest.approx(l2_norm_sq(f), rel=1e-12)


def test_delta_comb_norm_and_tail():
    g = TorusGrid(40.0, 512)
    comb = DeltaComb([0.3, 7.1], [1.0, -0.5])
    ell = 4.0
    val = delta_comb_weak_norm_sq(comb, ell, g)
    # closed form of the full series: Green's function of ell^-2 - d_xx on the torus
    def green(r):
        m = 1 / ell
        return np.cosh(m * (np.abs(r) - g.length / 2)) / (2 * m * np.sinh(m * g.length / 2))
    full = 1.0 * green(0) + 0.25 * green(0) - 2 * 0.5 * green(6.8)
    assert 0 <= full - val <= delta_comb_tail_bound(ell, g, 1.25)


def test_comb_difference_of_a_narrow_bump_is_small():
    g = TorusGrid(20.0, 1024)
    z, w = 3.3, 0.05
    f = GridField.from_function(g, lambda x: np.exp(-(x - z) ** 2 / (2 * w * w)) / math.sqrt(2 * math.pi * w * w))
    comb = DeltaComb([z], [1.0])
    assert weak_norm_sq_minus_comb(f, comb, 2.0) < 1e-2 * delta_comb_weak_norm_sq(comb, 2.0, g)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.5, 10.0))
def test_norm_ordering(seed, ell):
    # weak norm is dominated by both the H^-1 and ell^2 L^2 norms
    g = TorusGrid(16.0, 128)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(128)
    w = GridField(g, v - v.mean())
    wn = weak_norm_sq(w, ell)
    assert wn <= hminus1_norm_sq(w) * (1 + 1e-12)
    assert wn <= ell * ell * l2_norm_sq(w) * (1 + 1e-12)
    assert l2_norm_sq(w) ** 2 <= hminus1_norm_sq(w) * h1dot_norm_sq(w) * (1 + 1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_parseval(seed):
    g = TorusGrid(7.0, 64)
    v = np.random.default_rng(seed).standard_normal(64)
    assert l2_norm_sq(GridField(g, v)) == pytest.approx(g.spacing * float(v @ v), rel=1e-12)
