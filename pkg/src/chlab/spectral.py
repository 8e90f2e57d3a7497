"""Periodic grid, Fourier calculus and the norms used throughout the lab.

Fourier coefficients follow c_j = (1/L) int w exp(-i k_j x) dx, which on the
grid is ``rfft(w) / n`` (index j = 0..n/2).  Sums over the full symmetric set
j = -n/2+1..n/2 are formed from the half spectrum with weight 2 on the
interior modes and weight 1 on j = 0 and the Nyquist mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import PreconditionError
from .potential import Potential


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the torus (-L/2, L/2] with ``n`` nodes x_m = -L/2 + m h."""

    length: float
    n: int

    def __post_init__(self):
        if not (self.length > 0 and np.isfinite(self.length)):
            raise PreconditionError(f"grid length must be positive, got {self.length}")
        n = int(self.n)
        if n < 16 or n & (n - 1):
            raise PreconditionError(f"n must be a power of two >= 16, got {self.n}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "length", float(self.length))

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @cached_property
    def x(self) -> np.ndarray:
        x = -0.5 * self.length + self.spacing * np.arange(self.n)
        x.flags.writeable = False
        return x

    @cached_property
    def k(self) -> np.ndarray:
        """Nonnegative wavenumbers 2 pi j / L for j = 0..n/2 (rfft layout)."""
        k = 2.0 * np.pi / self.length * np.arange(self.n // 2 + 1)
        k.flags.writeable = False
        return k

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Full set k_j for j = -n/2+1..n/2."""
        j = np.arange(-self.n // 2 + 1, self.n // 2 + 1)
        return 2.0 * np.pi / self.length * j

    @cached_property
    def mode_weight(self) -> np.ndarray:
        """Multiplicity of each rfft mode in the full symmetric sum."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        w.flags.writeable = False
        return w

    def header(self) -> dict:
        return {"length": self.length, "n": self.n}

    def wrap(self, x):
        """Map positions into (-L/2, L/2]."""
        half = 0.5 * self.length
        y = np.asarray(x, dtype=float)
        y = half - np.mod(half - y, self.length)
        return y

    def field(self, values) -> "GridField":
        return GridField(self, values)


class GridField:
    """Samples of a function on a ``TorusGrid``."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values):
        values = np.array(values, dtype=np.float64)
        if values.shape != (grid.n,):
            raise PreconditionError(f"expected {grid.n} samples, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise PreconditionError("field samples must be finite")
        values.flags.writeable = False
        self.grid = grid
        self.values = values

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "GridField":
        return cls(grid, fn(grid.x))

    def _coerce(self, other):
        if isinstance(other, GridField):
            if other.grid != self.grid:
                raise PreconditionError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return GridField(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridField(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return GridField(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other):
        return GridField(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(self.grid, -self.values)

    def __repr__(self):
        return f"GridField(length={self.grid.length}, n={self.grid.n})"

    def coefficients(self) -> np.ndarray:
        return fourier_coefficients(self.values)

    def __call__(self, x):
        return interpolate(self, x)


@dataclass(frozen=True)
class DeltaComb:
    """Weighted point masses sum_i alpha_i delta_{z_i} on the torus."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.points, dtype=float))
        a = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if z.shape != a.shape:
            raise PreconditionError("points and weights must have equal length")
        object.__setattr__(self, "points", z)
        object.__setattr__(self, "weights", a)


def fourier_coefficients(values: np.ndarray) -> np.ndarray:
    return np.fft.rfft(values) / len(values)


def derivative(f: GridField, order: int = 1) -> GridField:
    """Spectral derivative; odd orders zero the Nyquist mode."""
    if order not in (1, 2, 3, 4):
        raise PreconditionError(f"derivative order must be in 1..4, got {order}")
    return GridField(f.grid, _deriv(f.values, f.grid, order))


def _deriv(values: np.ndarray, grid: TorusGrid, order: int) -> np.ndarray:
    mult = (1j * grid.k) ** order
    if order % 2:
        mult = mult.copy()
        mult[-1] = 0.0
    return np.fft.irfft(mult * np.fft.rfft(values), n=grid.n)


def integrate(f) -> float:
    """Trapezoidal rule on the torus (plain sum times h)."""
    if isinstance(f, GridField):
        return float(np.sum(f.values) * f.grid.spacing)
    raise TypeError("integrate expects a GridField")


def mean(f: GridField) -> float:
    return float(np.mean(f.values))


def energy_density(u: GridField, p: Potential) -> np.ndarray:
    ux = _deriv(u.values, u.grid, 1)
    return 0.5 * ux * ux + p.g(u.values)


def energy(u: GridField, p: Potential) -> float:
    """E(u) = int 1/2 u_x^2 + G(u)."""
    return float(np.sum(energy_density(u, p)) * u.grid.spacing)


def chemical_potential(u: GridField, p: Potential) -> np.ndarray:
    """mu = -u_xx + G'(u)."""
    return -_deriv(u.values, u.grid, 2) + p.g1(u.values)


def dissipation(u: GridField, p: Potential) -> float:
    """D(u) = int (mu_x)^2 with mu = -u_xx + G'(u)."""
    mux = _deriv(chemical_potential(u, p), u.grid, 1)
    return float(np.sum(mux * mux) * u.grid.spacing)


def l2_norm_sq(w: GridField) -> float:
    return float(np.sum(w.values ** 2) * w.grid.spacing)


def h1dot_norm_sq(w: GridField) -> float:
    wx = _deriv(w.values, w.grid, 1)
    return float(np.sum(wx * wx) * w.grid.spacing)


def h1_norm_sq(w: GridField) -> float:
    return l2_norm_sq(w) + h1dot_norm_sq(w)


def _mode_sum(w: GridField, multiplier: np.ndarray) -> float:
    c = fourier_coefficients(w.values)
    return float(w.grid.length * np.sum(w.grid.mode_weight * np.abs(c) ** 2 * multiplier))


def hminus1_norm_sq(w: GridField) -> float:
    """sum_{j != 0} L |c_j|^2 / k_j^2 for mean-zero w."""
    m = mean(w)
    scale = 1.0 + float(np.max(np.abs(w.values)))
    if abs(m) > 1e-10 * scale:
        raise PreconditionError(f"H^-1 norm needs a mean-zero field, mean is {m:.3e}")
    k = w.grid.k
    mult = np.zeros_like(k)
    mult[1:] = 1.0 / k[1:] ** 2
    return _mode_sum(w, mult)


def weak_norm_sq(w: GridField, ell: float) -> float:
    """sum_j L |c_j|^2 / (ell^-2 + k_j^2); mean-zero not required."""
    if ell <= 0:
        raise PreconditionError("ell must be positive")
    return _mode_sum(w, 1.0 / (ell ** -2 + w.grid.k ** 2))


def delta_comb_weak_norm_sq(comb: DeltaComb, ell: float, grid: TorusGrid) -> float:
    """Weak norm of a delta comb, truncated at the grid Nyquist frequency.

    Truncation drops sum_{|k| > K} 1/(L k^2) per unit weight, i.e. a relative
    tail of about 2/(pi K ell) with K = pi n / L.
    """
    k = grid.k
    phase = np.exp(-1j * np.outer(k, comb.points))
    s = phase @ comb.weights
    return float(np.sum(grid.mode_weight * np.abs(s) ** 2 / (ell ** -2 + k ** 2)) / grid.length)


def weak_norm_sq_minus_comb(w: GridField, comb: DeltaComb, ell: float) -> float:
    """Weak norm of w minus a delta comb, truncated at the grid Nyquist frequency."""
    g = w.grid
    k = g.k
    # rfft phases are relative to the first node x_0 = -L/2
    s = np.exp(-1j * np.outer(k, comb.points + 0.5 * g.length)) @ comb.weights / g.length
    c = fourier_coefficients(w.values) - s
    return float(g.length * np.sum(g.mode_weight * np.abs(c) ** 2 / (ell ** -2 + k ** 2)))


def delta_comb_tail_bound(ell: float, grid: TorusGrid, total_weight_sq: float = 1.0) -> float:
    """Upper bound on the omitted high-mode part of ``delta_comb_weak_norm_sq``."""
    kmax = np.pi * grid.n / grid.length
    return total_weight_sq * 2.0 / (np.pi * kmax)


def interpolate(f: GridField, x) -> np.ndarray:
    """Local four-point cubic (Lagrange) interpolation at off-grid points."""
    g = f.grid
    x = np.asarray(x, dtype=float)
    s = (x + 0.5 * g.length) / g.spacing
    i0 = np.floor(s).astype(np.int64)
    t = s - i0
    v = f.values
    n = g.n
    ym1 = v[(i0 - 1) % n]
    y0 = v[i0 % n]
    y1 = v[(i0 + 1) % n]
    y2 = v[(i0 + 2) % n]
    return (
        -t * (t - 1) * (t - 2) / 6 * ym1
        + (t + 1) * (t - 1) * (t - 2) / 2 * y0
        - (t + 1) * t * (t - 2) / 2 * y1
        + (t + 1) * t * (t - 1) / 6 * y2
    )


def resample(f: GridField, grid: TorusGrid) -> GridField:
    """Fourier resampling onto a grid of the same length."""
    if grid.length != f.grid.length:
        raise PreconditionError("resampling needs equal lengths")
    c = np.fft.rfft(f.values) / f.grid.n
    m = grid.n // 2 + 1
    out = np.zeros(m, dtype=complex)
    keep = min(m, len(c))
    out[:keep] = c[:keep]
    if grid.n < f.grid.n:
        out[-1] = out[-1].real
    elif grid.n > f.grid.n:
        out[keep - 1] *= 0.5
    return GridField(grid, np.fft.irfft(out * grid.n, n=grid.n))
