"""Per-snapshot observables and inequality monitoring along trajectories."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import AssociationError, InapplicableError, NoProfileError, PreconditionError
from .manifold import ManifoldPoint, find_crossings, cluster_crossings, project, zero_distance
from .potential import Potential
from .spectral import (
    GridField,
    derivative,
    dissipation,
    energy,
    h1_norm_sq,
    h1dot_norm_sq,
    hminus1_norm_sq,
    l2_norm_sq,
    weak_norm_sq,
)

CSV_COLUMNS = [
    "t", "mass", "E_u", "E_v", "E_vbar", "gap", "gap_ref", "Hbar", "D", "weak_gap",
    "h1_gap", "l_min", "zero_count_raw", "zero_count", "sup_u", "xi_sup", "delta",
]

NAN = float("nan")


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    E_u: float
    E_v: float
    E_vbar: float
    gap: float
    gap_ref: float
    Hbar: float
    D: float
    weak_gap: float
    h1_gap: float
    l_min: float
    zero_count_raw: int
    zero_count: int
    sup_u: float
    xi_sup: float
    delta: float
    zeros: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # not persisted in the CSV
    zero_dist: float = NAN
    h1dot_gap: float = NAN
    l2_gap: float = NAN
    degraded: bool = False
    alternating: bool = True
    dt: float = NAN
    snapshot: GridField | None = field(default=None, repr=False)

    def row(self, n_zeros: int) -> list:
        z = list(self.zeros) + [NAN] * max(0, n_zeros - len(self.zeros))
        return [getattr(self, c) for c in CSV_COLUMNS] + z[:n_zeros]


def delta_of(length: float, ell0: float, p: Potential) -> float:
    """delta = L^(-1/2) exp(-C_G ell(0))."""
    return length ** -0.5 * math.exp(-p.c_g * ell0)


def discrepancy(u: GridField, p: Potential) -> tuple[GridField, float]:
    """xi = u_x^2 / 2 - G(u) and its sup norm."""
    ux = derivative(u, 1).values
    xi = 0.5 * ux * ux - p.g(u.values)
    return GridField(u.grid, xi), float(np.max(np.abs(xi)))


def record(
    u: GridField,
    reference: ManifoldPoint,
    p: Potential,
    ell_weak: float,
    t: float = 0.0,
    ell0: float | None = None,
    cluster_radius: float | None = None,
    keep_snapshot: bool = False,
) -> DiagnosticsRecord:
    """All observables of ``u`` relative to the fixed reference and to its projection.

    If the zeros cannot be associated (or an interval is too short for an
    optimal profile) a degraded record with NaN v-quantities is returned.
    """
    grid = u.grid
    if ell0 is None:
        ell0 = reference.min_gap
    E_u = energy(u, p)
    E_vbar = energy(reference.field, p)
    D = dissipation(u, p)
    fbar = u - reference.field
    try:
        Hbar = hminus1_norm_sq(fbar)
    except PreconditionError:
        Hbar = NAN
    _, xi_sup = discrepancy(u, p)
    radius = 4.0 * grid.spacing if cluster_radius is None else cluster_radius
    pos, ori = find_crossings(u)
    cpos, _, _ = cluster_crossings(pos, ori, radius, grid.length)
    base = dict(
        t=float(t), mass=float(np.mean(u.values)), E_u=E_u, E_vbar=E_vbar, gap_ref=E_u - E_vbar,
        Hbar=Hbar, D=D, zero_count_raw=len(pos), zero_count=len(cpos),
        sup_u=float(np.max(np.abs(u.values))), xi_sup=xi_sup,
        delta=delta_of(grid.length, ell0, p),
        snapshot=u if keep_snapshot else None,
    )
    try:
        assoc, v = project(u, reference, p, cluster_radius=radius)
    except (AssociationError, NoProfileError):
        return DiagnosticsRecord(
            E_v=NAN, gap=NAN, weak_gap=NAN, h1_gap=NAN, l_min=NAN,
            zeros=cpos, degraded=True, **base,
        )
    f = u - v.field
    E_v = energy(v.field, p)
    h1dot = h1dot_norm_sq(f)
    l2 = l2_norm_sq(f)
    return DiagnosticsRecord(
        E_v=E_v, gap=E_u - E_v, weak_gap=weak_norm_sq(f, ell_weak), h1_gap=l2 + h1dot,
        l_min=v.min_gap, zeros=assoc.zeros, zero_dist=assoc.distance,
        h1dot_gap=h1dot, l2_gap=l2, alternating=v.alternating, **base,
    )


class DiagnosticsSeries(list):
    """List of records with column access and CSV persistence."""

    def __init__(self, records=(), n_zeros: int | None = None):
        super().__init__(records)
        self.n_zeros = n_zeros

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self], dtype=float)

    def _n(self) -> int:
        if self.n_zeros is not None:
            return self.n_zeros
        return max((len(r.zeros) for r in self), default=0)

    def to_csv(self, path) -> None:
        n = self._n()
        header = CSV_COLUMNS + [f"z{i + 1}" for i in range(n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in self:
                w.writerow([_fmt(x) for x in r.row(n)])

    @classmethod
    def from_csv(cls, path) -> "DiagnosticsSeries":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if header[: len(CSV_COLUMNS)] != CSV_COLUMNS:
                raise PreconditionError(f"unexpected CSV columns in {path}")
            n = len(header) - len(CSV_COLUMNS)
            out = cls(n_zeros=n)
            for row in rd:
                vals = [float(x) for x in row]
                kw = dict(zip(CSV_COLUMNS, vals[: len(CSV_COLUMNS)]))
                kw["zero_count_raw"] = int(kw["zero_count_raw"])
                kw["zero_count"] = int(kw["zero_count"])
                z = np.array(vals[len(CSV_COLUMNS):])
                rec = DiagnosticsRecord(zeros=z[np.isfinite(z)], **kw)
                rec.degraded = not math.isfinite(rec.gap)
                out.append(rec)
            return out


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


# --- inequality monitoring ---------------------------------------------------

CHECKS = (
    "h1_over_gap", "gap_over_h1", "h1dot_over_diss", "zero_shift", "gap_over_diss_mixed",
    "gap_closeness", "eed_weak", "eed_diss", "hbar_growth",
)


@dataclass
class InequalitySuiteConfig:
    length: float
    ell: float
    c_rate: float
    thresholds: dict = field(default_factory=dict)
    floor: float = 1e-12
    hbar_slack: float = 3.0


@dataclass
class CheckStat:
    name: str
    max_ratio: float
    argmax_t: float | None
    threshold: float | None
    used: int
    skipped: int
    passed: bool


@dataclass
class InequalityReport:
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failed(self) -> list:
        return [k for k, c in self.checks.items() if not c.passed]

    def max_ratios(self) -> dict:
        return {k: c.max_ratio for k, c in self.checks.items()}


def _ratios(num: np.ndarray, den: np.ndarray, floor: float):
    """Ratios num/den; 0/0 (both under the floor) is skipped, x/0 is infinite."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    valid = np.isfinite(num) & np.isfinite(den)
    small_den = den < floor
    skip = ~valid | (small_den & (np.abs(num) < floor))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(small_den, np.inf, np.abs(num) / np.where(small_den, 1.0, den))
    r[skip] = np.nan
    return r


def monitor_inequalities(series, suite: InequalitySuiteConfig) -> InequalityReport:
    if len(series) < 2:
        raise PreconditionError("need at least two records")
    recs = [r for r in series]
    col = lambda name: np.array([getattr(r, name) for r in recs], dtype=float)
    t = col("t")
    gap, gap_ref, Hb, D = col("gap"), col("gap_ref"), col("Hbar"), col("D")
    h1, h1dot, dist, lmin, weak = col("h1_gap"), col("h1dot_gap"), col("zero_dist"), col("l_min"), col("weak_gap")
    L2 = suite.length ** 2
    ell = suite.ell
    Hp = np.maximum(Hb, 0.0)
    gp = np.maximum(gap, 0.0)
    ratios = {
        "h1_over_gap": _ratios(h1, gap, suite.floor),
        "gap_over_h1": _ratios(gap, h1, suite.floor),
        "h1dot_over_diss": _ratios(h1dot, D, suite.floor),
        "zero_shift": _ratios(dist ** 2, np.sqrt(Hp * gp) + (dist + 1) * gp + Hp / ell, suite.floor),
        "gap_over_diss_mixed": _ratios(gap, np.sqrt(Hp * D) + (dist + 1) ** 2 * D, suite.floor),
        "gap_closeness": _ratios(gap - gap_ref, np.exp(-suite.c_rate * lmin), suite.floor),
        "eed_weak": _ratios(weak, L2 * gap, suite.floor),
        "eed_diss": _ratios(gap, L2 * D, suite.floor),
    }
    # centred differences of Hbar on the record grid
    dH = np.full(len(t), np.nan)
    if len(t) >= 3:
        dH[1:-1] = (Hb[2:] - Hb[:-2]) / (t[2:] - t[:-2])
    rhs = np.sqrt((dist + 1) * dist ** 2 * D) + gp ** 0.75 * D ** 0.25
    ratios["hbar_growth"] = _ratios(np.maximum(dH, 0.0), rhs, suite.floor)
    checks = {}
    for name in CHECKS:
        r = ratios[name]
        ok = np.isfinite(r) | np.isinf(r)
        used = int(np.count_nonzero(ok))
        if used:
            rr = np.where(ok, r, -np.inf)
            i = int(np.argmax(rr))
            mx, at = float(rr[i]), float(t[i])
        else:
            mx, at = 0.0, None
        thr = suite.thresholds.get(name)
        slack = suite.hbar_slack if name == "hbar_growth" else 1.0
        passed = True if thr is None else bool(mx <= thr * slack)
        checks[name] = CheckStat(name, mx, at, thr, used, len(r) - used, passed)
    return InequalityReport(checks)


# --- pointwise checks --------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    bound: float


def _has_zero(f: GridField) -> bool:
    v = f.values
    return bool(np.any(v == 0) or np.any(v * np.roll(v, -1) < 0))


def modica_mortola_check(u: GridField, p: Potential, C: float = 2.0) -> CheckResult:
    """sup|u| <= C (1 + E(u)) for fields with a zero."""
    if not _has_zero(u):
        raise InapplicableError("field has no zero; the sup bound does not apply")
    ratio = float(np.max(np.abs(u.values))) / (1.0 + energy(u, p))
    return CheckResult("modica_mortola", ratio <= C, ratio, C)


def bump_family(grid, heights, widths):
    """Fields -1 + (h + 1) sech^2(x / w): a zero on each flank, peak value h."""
    for h in heights:
        for w in widths:
            yield h, w, GridField(grid, -1.0 + (h + 1.0) / np.cosh(grid.x / w) ** 2)


def modica_mortola_calibrate(grid, p: Potential, heights=None, widths=None) -> float:
    """Smallest C with sup|u| <= C (1 + E) over the bump family."""
    heights = np.linspace(0.5, 5.0, 10) if heights is None else heights
    widths = np.geomspace(0.25, 8.0, 12) if widths is None else widths
    best = 0.0
    for _, _, u in bump_family(grid, heights, widths):
        best = max(best, float(np.max(np.abs(u.values))) / (1.0 + energy(u, p)))
    return best


def interp_sup_check(f: GridField, C: float = 1.0) -> CheckResult:
    """sup|f| <= C (int f^2 int f_x^2)^(1/4) for periodic f with a zero.

    C = 1 holds: from a zero x0, f(x)^2 is bounded by the integral of |(f^2)_x|
    along either arc, hence by half of the full integral, at most
    ||f|| ||f_x||.
    """
    if not _has_zero(f):
        raise InapplicableError("field has no zero")
    sup = float(np.max(np.abs(f.values)))
    rhs = (l2_norm_sq(f) * h1dot_norm_sq(f)) ** 0.25
    if rhs == 0.0:
        return CheckResult("interp_sup", sup == 0.0, 0.0, C)
    ratio = sup / rhs
    return CheckResult("interp_sup", ratio <= C, ratio, C)
