"""Energy-optimal layer profiles, the line kink, and zero association.

On an interval of length L between two zeros the optimal profile solves
-v'' + G'(v) = 0 with first integral v_x^2 = 2 (G(v) - G(a)), a being the
value at the midpoint.  We parametrise v = a cos(phi) with phi = 0 at the
midpoint.  Writing m(phi) for the mean of -G' over [a cos(phi), a],

    v_x^2 = 4 a sin^2(phi/2) m(phi),   dx/dphi = cos(phi/2) sqrt(a / m(phi)),

both free of cancellation.  The half gap is the integral of dx/dphi over
[0, pi/2], evaluated with Gauss-Legendre on panels graded towards phi = 0
where the plateau lives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, optimize

from .errors import AssociationError, NoProfileError, NumericalFailure, PreconditionError
from .potential import Potential
from .spectral import GridField, TorusGrid, interpolate

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_T = 0.5 * (_GL_X + 1.0)  # nodes on (0, 1)
_GL_W = 0.5 * _GL_W  # weights summing to 1

_A_MAX = 1.0 - np.finfo(float).epsneg  # largest double below 1


def _mean_force(a: float, phi: np.ndarray, p: Potential) -> np.ndarray:
    """Mean of -G' over [a cos(phi), a]."""
    depth = 2.0 * a * np.sin(0.5 * phi) ** 2
    s = a - np.multiply.outer(depth, _GL_T)
    return -(p.g1(s) @ _GL_W)


def _dxdphi(a: float, phi: np.ndarray, p: Potential) -> np.ndarray:
    return np.cos(0.5 * phi) * np.sqrt(a / _mean_force(a, phi, p))


def _slope_abs(a: float, phi: np.ndarray, p: Potential) -> np.ndarray:
    return 2.0 * np.sin(0.5 * phi) * np.sqrt(a * _mean_force(a, phi, p))


def _panel_edges(a: float, p: Potential) -> np.ndarray:
    m0 = float(-p.g1(np.array(a)))
    if not m0 > 0:
        raise NumericalFailure(f"-G'(a) must be positive inside (0, 1), got {m0} at a={a}")
    lo = min(1e-3, 1e-2 * math.sqrt(m0 / a))
    knee = 0.2
    n_geo = max(1, int(math.ceil(math.log(knee / lo) / math.log(1.1))))
    geo = np.geomspace(lo, knee, n_geo + 1)
    n_lin = int(math.ceil((0.5 * math.pi - knee) / 0.1))
    lin = np.linspace(knee, 0.5 * math.pi, n_lin + 1)
    return np.concatenate(([0.0], geo, lin[1:]))


def _panel_integrals(edges: np.ndarray, fn) -> np.ndarray:
    left, right = edges[:-1], edges[1:]
    width = right - left
    nodes = left[:, None] + width[:, None] * _GL_T[None, :]
    vals = fn(nodes.ravel()).reshape(nodes.shape)
    return width * (vals @ _GL_W)


def half_gap(a: float, p: Potential) -> float:
    """Distance from the zero to the midpoint of the profile with amplitude a."""
    edges = _panel_edges(a, p)
    return float(np.sum(_panel_integrals(edges, lambda ph: _dxdphi(a, ph, p))))


def _check_gap(gap: float, p: Potential) -> None:
    lb = p.bifurcation_length
    if not gap > lb:
        raise NoProfileError(
            f"gap {gap:g} is not above the bifurcation length {lb:g}; no nontrivial profile"
        )


def _amplitude_and_pad(gap: float, p: Potential) -> tuple[float, float]:
    """Largest representable a whose intrinsic gap does not exceed ``gap``.

    The shortfall (pad) is at most the gap change of one ulp in a, except when
    even a = 1 - ulp is too short, in which case the profile carries a flat
    plateau of that length at its midpoint.
    """
    _check_gap(gap, p)
    top = 2.0 * half_gap(_A_MAX, p)
    if gap >= top:
        return _A_MAX, gap - top
    s_max = -math.log1p(-_A_MAX)

    def f(s):
        return 2.0 * half_gap(-math.expm1(-s), p) - gap

    s_lo = 1e-12
    if f(s_lo) >= 0:
        # gap barely above the bifurcation length
        return -math.expm1(-s_lo), 0.0
    s = optimize.brentq(f, s_lo, s_max, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    a = -math.expm1(-s)
    g = 2.0 * half_gap(a, p)
    for _ in range(64):
        if g <= gap:
            break
        a = float(np.nextafter(a, 0.0))
        g = 2.0 * half_gap(a, p)
    else:
        raise NumericalFailure(f"could not bracket amplitude for gap {gap}")
    return a, max(gap - g, 0.0)


def amplitude_for_gap(gap: float, p: Potential) -> float:
    """Midpoint value a in (0, 1) of the optimal profile on an interval of length ``gap``."""
    return _amplitude_and_pad(float(gap), p)[0]


def gap_for_amplitude(a: float, p: Potential) -> float:
    if not 0.0 < a < 1.0:
        raise PreconditionError("amplitude must lie in (0, 1)")
    return 2.0 * half_gap(a, p)


class IntervalProfile:
    """Positive optimal profile on [0, gap] vanishing at both ends."""

    def __init__(self, gap: float, p: Potential):
        self.gap = float(gap)
        self.p = p
        self.amplitude, self.pad = _amplitude_and_pad(self.gap, p)
        a = self.amplitude
        self.edges = _panel_edges(a, p)
        pieces = _panel_integrals(self.edges, lambda ph: _dxdphi(a, ph, p))
        self.cum = np.concatenate(([0.0], np.cumsum(pieces)))
        self.half = float(self.cum[-1])
        kin = _panel_integrals(
            self.edges, lambda ph: a * np.sin(ph) * _slope_abs(a, ph, p)
        )
        # int v_x^2 over the whole interval, plus G(a) per unit length
        self.energy = 2.0 * float(np.sum(kin)) + float(p.g(np.array(a))) * self.gap

    def _phi_of(self, y: np.ndarray) -> np.ndarray:
        """Invert X(phi) = y, X measured from the midpoint."""
        a, p = self.amplitude, self.p
        y = np.clip(y, 0.0, self.half)
        k = np.clip(np.searchsorted(self.cum, y, side="right") - 1, 0, len(self.edges) - 2)
        lo, hi = self.edges[k], self.edges[k + 1]
        base = self.cum[k]
        span = self.cum[k + 1] - base
        frac = np.where(span > 0, (y - base) / np.where(span > 0, span, 1.0), 0.0)
        phi = lo + frac * (hi - lo)
        for _ in range(30):
            width = phi - lo
            nodes = lo[:, None] + width[:, None] * _GL_T[None, :]
            vals = _dxdphi(a, nodes.ravel(), p).reshape(nodes.shape)
            resid = base + width * (vals @ _GL_W) - y
            step = resid / _dxdphi(a, phi, p)
            new = np.clip(phi - step, lo, hi)
            done = np.abs(new - phi) <= 1e-15 * (1.0 + np.abs(phi))
            phi = new
            if np.all(done):
                break
        return phi

    def value(self, d) -> np.ndarray:
        """Profile at distance ``d`` in [0, gap] from the left zero."""
        d = np.asarray(d, dtype=float)
        dist = np.minimum(d, self.gap - d)
        y = self.half - dist
        out = np.full(d.shape, self.amplitude)
        body = y > 0
        if np.any(body):
            out[body] = self.amplitude * np.cos(self._phi_of(y[body]))
        return out

    def slope(self, d) -> np.ndarray:
        """Derivative with respect to the distance from the left zero."""
        d = np.asarray(d, dtype=float)
        dist = np.minimum(d, self.gap - d)
        y = self.half - dist
        out = np.zeros(d.shape)
        body = y > 0
        if np.any(body):
            out[body] = _slope_abs(self.amplitude, self._phi_of(y[body]), self.p)
        return np.where(d <= 0.5 * self.gap, out, -out)

    @cached_property
    def edge_slope(self) -> float:
        """|v_x| at the zeros, sqrt(2 (G(0) - G(a)))."""
        return float(_slope_abs(self.amplitude, np.array(0.5 * math.pi), self.p))


_PROFILE_CACHE: dict = {}


def interval_profile(gap: float, p: Potential) -> IntervalProfile:
    key = (id(p.g), p.label, float(gap))
    prof = _PROFILE_CACHE.get(key)
    if prof is None:
        if len(_PROFILE_CACHE) > 4096:
            _PROFILE_CACHE.clear()
        prof = IntervalProfile(gap, p)
        _PROFILE_CACHE[key] = prof
    return prof


def interval_energy(gap: float, p: Potential) -> float:
    return interval_profile(gap, p).energy


def periodic_gaps(zeros: np.ndarray, length: float) -> np.ndarray:
    z = np.asarray(zeros, dtype=float)
    return np.diff(np.concatenate((z, [z[0] + length])))


def periodic_distance(x, y, length: float):
    d = np.abs(np.asarray(x) - np.asarray(y)) % length
    return np.minimum(d, length - d)


@dataclass(eq=False)
class ManifoldPoint:
    """Alternating-sign optimal profile with zeros ``zeros``.

    ``signs[i]`` is the sign on (zeros[i], zeros[i+1]), the last interval
    wrapping around the torus; ``first_sign`` equals ``signs[0]``.
    """

    zeros: np.ndarray
    signs: np.ndarray
    amplitudes: np.ndarray
    gaps: np.ndarray
    field: GridField
    energy: float
    potential: Potential = field(repr=False)
    profiles: list = field(repr=False, default_factory=list)

    @property
    def grid(self) -> TorusGrid:
        return self.field.grid

    @property
    def first_sign(self) -> int:
        return int(self.signs[0])

    @property
    def n_zeros(self) -> int:
        return len(self.zeros)

    @property
    def min_gap(self) -> float:
        return float(np.min(self.gaps))

    @property
    def alternating(self) -> bool:
        return bool(np.all(self.signs * np.roll(self.signs, -1) < 0))

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        L = self.grid.length
        idx = np.full(x.shape, -1, dtype=np.int64)
        off = np.zeros(x.shape)
        for i, (z, g) in enumerate(zip(self.zeros, self.gaps)):
            r = np.mod(x - z, L)
            mask = (r < g) & (idx < 0)
            idx[mask] = i
            off[mask] = r[mask]
        return idx, off

    def evaluate(self, x) -> np.ndarray:
        """Exact (quadrature-accurate) profile values at arbitrary points."""
        idx, off = self._locate(x)
        out = np.zeros(np.shape(x))
        for i, prof in enumerate(self.profiles):
            m = idx == i
            if np.any(m):
                out[m] = self.signs[i] * prof.value(off[m])
        return out

    def evaluate_slope(self, x) -> np.ndarray:
        idx, off = self._locate(x)
        out = np.zeros(np.shape(x))
        for i, prof in enumerate(self.profiles):
            m = idx == i
            if np.any(m):
                out[m] = self.signs[i] * prof.slope(off[m])
        return out

    def orientations(self) -> np.ndarray:
        """+1 where v rises through the zero, -1 where it falls."""
        return self.signs.copy()

    def to_dict(self) -> dict:
        return {
            "zeros": [float(z) for z in self.zeros],
            "first_sign": self.first_sign,
            "potential": self.potential.label,
            "grid": self.grid.header(),
        }


def _build(zeros, signs, p: Potential, grid: TorusGrid) -> ManifoldPoint:
    z = grid.wrap(np.atleast_1d(np.asarray(zeros, dtype=float)))
    order = np.argsort(z, kind="stable")
    z = z[order]
    signs = np.asarray(signs, dtype=np.int64)[order]
    if len(z) < 2 or len(z) % 2:
        raise PreconditionError(f"number of zeros must be even and positive, got {len(z)}")
    gaps = periodic_gaps(z, grid.length)
    if np.any(gaps <= 0):
        raise PreconditionError("duplicate zeros")
    profiles = [interval_profile(g, p) for g in gaps]
    x = grid.x
    values = np.zeros(grid.n)
    for i, (zi, gi, prof) in enumerate(zip(z, gaps, profiles)):
        r = np.mod(x - zi, grid.length)
        m = r < gi
        values[m] = signs[i] * prof.value(r[m])
    return ManifoldPoint(
        zeros=z,
        signs=signs,
        amplitudes=np.array([pr.amplitude for pr in profiles]),
        gaps=gaps,
        field=GridField(grid, values),
        energy=float(sum(pr.energy for pr in profiles)),
        potential=p,
        profiles=profiles,
    )


def build_manifold_point(zeros, first_sign: int, p: Potential, grid: TorusGrid) -> ManifoldPoint:
    """Alternating optimal profile; ``first_sign`` applies to the interval
    starting at the smallest zero in (-L/2, L/2]."""
    if first_sign not in (1, -1):
        raise PreconditionError("first_sign must be +1 or -1")
    z = grid.wrap(np.atleast_1d(np.asarray(zeros, dtype=float)))
    n = len(z)
    if n % 2:
        raise PreconditionError(f"number of zeros must be even, got {n}")
    order = np.argsort(z, kind="stable")
    signs = np.empty(n, dtype=np.int64)
    signs[order] = first_sign * (-1) ** np.arange(n)
    return _build(z, signs, p, grid)


def derivative_jumps(v: ManifoldPoint) -> np.ndarray:
    """alpha_i = v_x(x_i+) - v_x(x_i-) from the closed-form edge slopes."""
    g0 = float(v.potential.g(np.array(0.0)))
    ga = np.array([float(v.potential.g(np.array(a))) for a in v.amplitudes])
    s = np.sqrt(2.0 * (g0 - ga))
    sig = v.signs
    s_prev, ga_prev, sig_prev = np.roll(s, 1), np.roll(ga, 1), np.roll(sig, 1)
    alt = sig * sig_prev < 0
    # sig*(s - s_prev) without cancellation
    diff = 2.0 * (ga_prev - ga) / (s + s_prev)
    return np.where(alt, sig * diff, sig * s + sig_prev * s_prev)


@dataclass(frozen=True)
class Kink:
    """Monotone transition v_inf on the line with v_inf(0) = 0."""

    potential: Potential
    evaluator: object
    derivative: object
    slope_at_zero: float

    def __call__(self, x):
        return self.evaluator(np.asarray(x, dtype=float))


def kink(p: Potential) -> Kink:
    slope0 = math.sqrt(2.0 * float(p.g(np.array(0.0))))
    if p.label == "quartic":
        r = math.sqrt(2.0)
        return Kink(
            p,
            lambda x: np.tanh(np.asarray(x) / r),
            lambda x: 1.0 / (r * np.cosh(np.asarray(x) / r) ** 2),
            slope0,
        )

    g2, g3 = float(p.g2(np.array(1.0))), float(p.g3(np.array(1.0)))

    # w = 1 - e^{-s} removes the logarithmic singularity at the well, and
    # 2 G(w) = 2 (1 - w) mean(-G' on [w, 1]) avoids cancellation near it;
    # within 1e-5 of the well the mean comes from its Taylor expansion
    def f(s):
        eps = math.exp(-s)
        if eps < 1e-5:
            return 1.0 / math.sqrt(g2 - g3 * eps / 3.0)
        mean = -float(p.g1(1.0 - eps * _GL_T) @ _GL_W)
        return math.sqrt(eps / (2.0 * mean))

    def position(v):
        val, _ = integrate.quad(f, 0.0, -math.log1p(-v), epsabs=1e-14, epsrel=1e-13, limit=200)
        return val

    def scalar(x):
        if x == 0:
            return 0.0
        s = 1.0 if x > 0 else -1.0
        hi = 1.0 - 1e-15
        if position(hi) <= abs(x):
            return s * hi
        return s * optimize.brentq(lambda v: position(v) - abs(x), 0.0, hi, xtol=1e-15)

    vec = np.vectorize(scalar, otypes=[float])

    def deriv(x):
        v = vec(x)
        return np.sqrt(2.0 * np.maximum(p.g(v), 0.0))

    return Kink(p, vec, deriv, slope0)


@dataclass
class ZeroAssociation:
    zeros: np.ndarray
    reference_zeros: np.ndarray
    distance: float
    raw_crossing_count: int
    count: int
    clustered: bool
    orientations: np.ndarray = field(default_factory=lambda: np.zeros(0))


def zero_distance(c, c_ref, length: float) -> float:
    """Min over cyclic alignments of the max periodic distance of paired zeros."""
    c = np.sort(np.asarray(c, dtype=float))
    r = np.sort(np.asarray(c_ref, dtype=float))
    if len(c) != len(r):
        raise PreconditionError(f"zero counts differ: {len(c)} vs {len(r)}")
    if len(c) == 0:
        return 0.0
    best = np.inf
    for s in range(len(c)):
        best = min(best, float(np.max(periodic_distance(np.roll(c, -s), r, length))))
    return best


def _best_shift(c, r, length):
    best, shift = np.inf, 0
    for s in range(len(c)):
        d = float(np.max(periodic_distance(np.roll(c, -s), r, length)))
        if d < best:
            best, shift = d, s
    return best, shift


def find_crossings(u: GridField) -> tuple[np.ndarray, np.ndarray]:
    """Sign changes of the samples, polished on the local cubic interpolant.

    Returns positions and orientations (+1 rising, -1 falling).
    """
    g = u.grid
    v = u.values
    nxt = np.roll(v, -1)
    exact = v == 0
    cross = (v * nxt < 0)
    pos = list(g.x[exact])
    ori = list(np.sign(nxt[exact] - np.roll(v, 1)[exact]))
    idx = np.nonzero(cross)[0]
    if len(idx):
        lo = g.x[idx].copy()
        hi = lo + g.spacing
        flo = v[idx]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            fm = interpolate(u, mid)
            same = np.sign(fm) == np.sign(flo)
            lo = np.where(same, mid, lo)
            flo = np.where(same, fm, flo)
            hi = np.where(same, hi, mid)
        pos.extend(g.wrap(0.5 * (lo + hi)))
        ori.extend(np.sign(nxt[idx] - v[idx]))
    pos = np.asarray(pos, dtype=float)
    ori = np.asarray(ori, dtype=float)
    order = np.argsort(pos)
    return pos[order], ori[order]


def cluster_crossings(pos, ori, radius: float, length: float):
    """Merge crossings closer than ``radius``; odd clusters become their median."""
    n = len(pos)
    if n == 0 or radius <= 0:
        return pos, ori, False
    gaps = periodic_gaps(pos, length) if n > 1 else np.array([length])
    breaks = np.nonzero(gaps > radius)[0]
    if len(breaks) == 0:
        groups = [np.arange(n)]
    else:
        start = (breaks[-1] + 1) % n
        rolled = np.roll(np.arange(n), -start)
        gaps_r = np.roll(gaps, -start)
        groups, cur = [], [rolled[0]]
        for j in range(1, n):
            if gaps_r[j - 1] > radius:
                groups.append(np.array(cur))
                cur = []
            cur.append(rolled[j])
        groups.append(np.array(cur))
    out_p, out_o, merged = [], [], False
    for grp in groups:
        if len(grp) > 1:
            merged = True
        if len(grp) % 2 == 0:
            continue
        # unwrap positions relative to the first member
        base = pos[grp[0]]
        rel = np.mod(pos[grp] - base, length)
        mid = len(grp) // 2
        out_p.append(base + rel[mid])
        out_o.append(ori[grp[0]])
    if not out_p:
        return np.zeros(0), np.zeros(0), merged
    wrapped = np.asarray(out_p)
    half = 0.5 * length
    wrapped = half - np.mod(half - wrapped, length)
    order = np.argsort(wrapped)
    return wrapped[order], np.asarray(out_o)[order], merged


def associate_zeros(u: GridField, reference: ManifoldPoint, cluster_radius: float | None = None) -> ZeroAssociation:
    g = u.grid
    if cluster_radius is None:
        cluster_radius = 4.0 * g.spacing
    pos, ori = find_crossings(u)
    raw = len(pos)
    cpos, cori, merged = cluster_crossings(pos, ori, cluster_radius, g.length)
    N = reference.n_zeros
    ref = reference.zeros
    if len(cpos) < N:
        raise AssociationError(
            f"found {len(cpos)} zeros after clustering ({raw} raw crossings), need {N}", raw
        )
    if len(cpos) > N:
        ref_ori = reference.orientations()
        chosen = []
        for zr, orr in zip(ref, ref_ori):
            d = periodic_distance(cpos, zr, g.length)
            d = np.where(cori == orr, d, np.inf)
            d[chosen] = np.inf
            j = int(np.argmin(d))
            if not np.isfinite(d[j]):
                raise AssociationError("could not match zeros by orientation", raw)
            chosen.append(j)
        sel = np.sort(np.asarray(chosen))
        cpos, cori, merged = cpos[sel], cori[sel], True
    dist = zero_distance(cpos, ref, g.length)
    return ZeroAssociation(
        zeros=cpos,
        reference_zeros=ref.copy(),
        distance=dist,
        raw_crossing_count=raw,
        count=len(cpos),
        clustered=merged,
        orientations=cori,
    )


def interval_signs(u: GridField, zeros) -> np.ndarray:
    """Sign of u at the midpoint of each interval between consecutive zeros."""
    z = np.asarray(zeros, dtype=float)
    mids = z + 0.5 * periodic_gaps(z, u.grid.length)
    s = np.sign(interpolate(u, u.grid.wrap(mids)))
    s[s == 0] = 1
    return s.astype(np.int64)


def project(u: GridField, reference: ManifoldPoint, p: Potential, cluster_radius: float | None = None):
    """Optimal profile on the zeros of u, sign per interval taken from u."""
    assoc = associate_zeros(u, reference, cluster_radius)
    signs = interval_signs(u, assoc.zeros)
    v = _build(assoc.zeros, signs, p, u.grid)
    return assoc, v
