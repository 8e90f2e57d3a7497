"""Phase study and scaling sweeps.

The phase study follows one perturbed trajectory through its relaxation
onto the slow manifold: an algebraic stage while the energy gap is above
c_alg / L^2, then an exponential stage, then a plateau.  The sweeps measure
how the plateau dissipation and the collision time scale with the smallest
gap ell.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .diagnostics import DiagnosticsSeries, record
from .errors import FitError, PreconditionError
from .io import (
    GridSpec,
    InitialSpec,
    PhaseSpec,
    ReferenceSpec,
    RunConfig,
    SweepSpec,
    config_hash,
    derive_seed,
)
from .manifold import build_manifold_point, cluster_crossings, find_crossings, zero_distance
from .potential import get_potential
from .solver import SolverConfig, advance_adaptive, detect_events, initial_state, make_initial
from .spectral import dissipation, hminus1_norm_sq

SWEEP_KINDS = ("dissipation_plateau", "collision_time")


def fit_line(x, y) -> dict | None:
    """Least-squares line with standard errors; None for fewer than 3 points."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 3:
        return None
    r = stats.linregress(x, y)
    resid = y - (r.intercept + r.slope * x)
    return {
        "slope": float(r.slope), "intercept": float(r.intercept),
        "slope_se": float(r.stderr), "intercept_se": float(r.intercept_stderr),
        "r2": float(r.rvalue ** 2), "n": int(len(x)),
        "max_residual": float(np.max(np.abs(resid))),
    }


def next_pow2(x: float) -> int:
    return 1 << max(4, int(math.ceil(math.log2(x))))


# ---------------------------------------------------------------------------
# trajectories


def reference_point(cfg: RunConfig):
    """Grid, potential and reference manifold point of a run config."""
    grid = cfg.torus
    p = get_potential(cfg.potential)
    ref = cfg.reference
    if ref is None:
        zeros = cfg.initial.params.get("zeros")
        if zeros is None and "gaps" in cfg.initial.params:
            gaps = np.asarray(cfg.initial.params["gaps"], dtype=float)
            off = cfg.initial.params.get("offset", -0.5 * grid.length + 0.5 * gaps[0])
            zeros = list(off + np.concatenate(([0.0], np.cumsum(gaps[:-1]))))
        if zeros is None:
            raise PreconditionError("config needs a reference or initial zeros")
        ref = ReferenceSpec(list(zeros), int(cfg.initial.params.get("first_sign", 1)))
    vbar = build_manifold_point(ref.zeros, ref.first_sign, p, grid)
    return grid, p, vbar


@dataclass
class Trajectory:
    state: object
    series: DiagnosticsSeries
    log: object
    events: list
    seed: int
    config_hash: str
    wall: float


def run_trajectory(cfg: RunConfig, keep_snapshots: bool = False, state=None) -> Trajectory:
    """Integrate ``cfg`` and record diagnostics at the configured times."""
    grid, p, vbar = reference_point(cfg)
    seed = cfg.initial_seed()
    if state is None:
        u0 = make_initial(cfg.initial.kind, cfg.initial.params, seed, grid, p)
        state = initial_state(u0, cfg.solver)
    ell_weak = cfg.ell_weak if cfg.ell_weak is not None else 0.5 * vbar.min_gap
    series = DiagnosticsSeries(n_zeros=vbar.n_zeros)

    def monitor(st, log):
        r = record(st.field, vbar, p, ell_weak, t=st.t, ell0=vbar.min_gap, keep_snapshot=keep_snapshots)
        r.dt = st.last_dt
        series.append(r)
        return r.zero_count

    t0 = time.perf_counter()
    st, log = advance_adaptive(state, cfg.solver.t_end, cfg.solver, p, monitor=monitor)
    wall = time.perf_counter() - t0
    gap_thr = []
    if cfg.phase is not None:
        gap_thr = [cfg.phase.c_alg / grid.length ** 2]
    events = detect_events(series, thresholds=gap_thr, dt_max=cfg.solver.dt_max)
    return Trajectory(st, series, log, events, seed, config_hash(cfg), wall)


# ---------------------------------------------------------------------------
# phase study


@dataclass
class PhaseReport:
    length: float
    ell0: float
    n_zeros: int
    threshold1: float
    threshold2: float
    threshold2_effective: float
    s1_estimate: float | None
    s2_estimate: float | None
    s2_ratio: float | None
    phase1_slope: float
    phase1_fit: dict | None
    phase2_rate: float
    phase2_fit: dict | None
    gap_inf: float
    D_inf: float
    zero_count_timeline: list
    zero_count_settled: float | None
    zero_count_ok: bool
    max_zero_shift_after_s1: float
    max_hminus1_after_s1: float
    slow_motion_quotient: float
    partial: bool
    notes: list = field(default_factory=list)
    seed: int | None = None
    config_hash: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _first_below(t, y, thr):
    """Log-interpolated first time y drops below thr (None if never)."""
    for i in range(1, len(t)):
        a, b = y[i - 1], y[i]
        if np.isfinite(a) and np.isfinite(b) and a >= thr > b:
            if a > 0 and b > 0 and t[i - 1] > 0:
                w = math.log(a / thr) / math.log(a / b)
                return math.exp(math.log(t[i - 1]) + w * (math.log(t[i]) - math.log(t[i - 1])))
            return t[i - 1] + (a - thr) / (a - b) * (t[i] - t[i - 1])
    return None


def analyse_phases(series: DiagnosticsSeries, length: float, ell0: float, n_zeros: int,
                   spec: PhaseSpec, c_g: float) -> PhaseReport:
    """Phase windows, fits and plateau statistics of a recorded trajectory.

    Phase 1 is fitted on the records before s1 (the first time the gap drops
    below c_alg / L^2) with gap <= half its initial value.  Phase 2 is fitted
    on the records after s1 with 10 thr2 <= gap <= thr1, where thr2 =
    max(c_exp L^2 delta^2, floor) and the floor keeps the fit above the
    roundoff level of the energy difference.
    """
    t = series.column("t")
    gap = series.column("gap")
    D = series.column("D")
    zc = np.array([r.zero_count for r in series])
    thr1 = spec.c_alg / length ** 2
    delta = length ** -0.5 * math.exp(-c_g * ell0)
    thr2 = spec.c_exp * length ** 2 * delta ** 2
    thr2e = max(thr2, spec.floor)
    notes = []
    s1 = _first_below(t, gap, thr1)
    s2 = _first_below(t, gap, thr2e)
    e0 = gap[0]

    # phase 1
    fit1 = None
    if s1 is not None and np.isfinite(e0) and e0 > thr1:
        half = np.nonzero(gap <= 0.5 * e0)[0]
        start = half[0] if len(half) else len(t)
        m = np.zeros(len(t), bool)
        m[start:] = True
        m &= (t > 0) & (t <= s1) & (gap >= thr1) & np.isfinite(gap)
        fit1 = fit_line(np.log(t[m]), np.log(gap[m]))
    if fit1 is None:
        notes.append("phase-1 window empty")

    # phase 2: contiguous stretch after s1 down to 10 thr2
    fit2 = None
    if s1 is not None:
        m = (t >= s1) & (gap <= thr1) & np.isfinite(gap)
        low = np.nonzero((t >= s1) & (gap < 10 * thr2e))[0]
        if len(low):
            m &= t < t[low[0]]
        m &= gap >= 10 * thr2e
        fit2 = fit_line(t[m], np.log(gap[m]))
    if fit2 is None:
        notes.append("phase-2 window empty")

    # plateau
    tail = (t >= s2) if s2 is not None else (t >= t[int(0.75 * (len(t) - 1))])
    gap_inf = float(np.nanmedian(gap[tail])) if np.any(tail) else math.nan
    D_inf = float(np.nanmedian(D[tail])) if np.any(tail) else math.nan

    # zero count
    timeline = [(float(t[0]), int(zc[0]))]
    for i in range(1, len(t)):
        if zc[i] != zc[i - 1]:
            timeline.append((float(t[i]), int(zc[i])))
    settled = None
    if zc[-1] == n_zeros:
        bad = np.nonzero(zc != n_zeros)[0]
        settled = float(t[0]) if len(bad) == 0 else float(t[bad[-1] + 1])
    ok = settled is not None and s1 is not None and settled <= s1 + spec.settle_slack

    # stability after s1
    shift = hm1 = slow = math.nan
    if s1 is not None:
        i1 = int(np.searchsorted(t, s1))
        after = [r for r in series[i1:] if len(r.zeros) == n_zeros]
        if i1 < len(series) and len(series[i1].zeros) == n_zeros:
            z1 = series[i1].zeros
            shift = max((zero_distance(r.zeros, z1, length) for r in after), default=math.nan)
        u1 = series[i1].snapshot if i1 < len(series) else None
        if u1 is not None:
            hm1 = max(math.sqrt(max(hminus1_norm_sq(r.snapshot - u1), 0.0))
                      for r in series[i1:] if r.snapshot is not None)
    if s2 is not None:
        late = [r for r in series if r.t >= s2 and r.snapshot is not None]
        late = late[:: max(1, len(late) // 40)]
        q = []
        for a in range(len(late)):
            for b in range(a + 1, len(late)):
                d = math.sqrt(max(hminus1_norm_sq(late[a].snapshot - late[b].snapshot), 0.0))
                q.append(d / (delta * (abs(late[a].t - late[b].t) + length ** 2)))
        slow = max(q) if q else math.nan

    return PhaseReport(
        length=length, ell0=ell0, n_zeros=n_zeros, threshold1=thr1, threshold2=thr2,
        threshold2_effective=thr2e, s1_estimate=s1, s2_estimate=s2,
        s2_ratio=None if s2 is None else s2 / (ell0 * length ** 2),
        phase1_slope=math.nan if fit1 is None else fit1["slope"], phase1_fit=fit1,
        phase2_rate=math.nan if fit2 is None else -fit2["slope"], phase2_fit=fit2,
        gap_inf=gap_inf, D_inf=D_inf, zero_count_timeline=timeline,
        zero_count_settled=settled, zero_count_ok=bool(ok),
        max_zero_shift_after_s1=shift, max_hminus1_after_s1=hm1,
        slow_motion_quotient=slow, partial=fit1 is None or fit2 is None, notes=notes,
    )


def phase_study(cfg: RunConfig, trajectory: Trajectory | None = None) -> PhaseReport:
    """Run ``cfg`` (unless a trajectory is supplied) and analyse its phases."""
    spec = cfg.phase or PhaseSpec()
    _, p, vbar = reference_point(cfg)
    traj = trajectory if trajectory is not None else run_trajectory(cfg, keep_snapshots=True)
    rep = analyse_phases(traj.series, cfg.grid.length, vbar.min_gap, vbar.n_zeros, spec, p.c_g)
    rep.seed = traj.seed
    rep.config_hash = traj.config_hash
    return rep


def rate_scaling(small: PhaseReport, large: PhaseReport) -> dict:
    """Phase-2 rate ratio between two lengths and the implied exponent."""
    ratio = small.phase2_rate / large.phase2_rate
    return {"ratio": ratio, "exponent": -math.log(ratio) / math.log(large.length / small.length)}


def standard_phase_config(length: float = 48.0, seed: int = 1, hbar0: float = 1.0,
                          scheme: str = "convex_split_1", spectrum: str = "critical") -> RunConfig:
    """Two layers with gaps in the ratio 22 : 26, perturbed by noise of H^-1 size hbar0.

    Resolution, dt_max and the horizon scale with L and L^2 so that runs at
    different L are comparable.
    """
    s = length / 48.0
    zeros = [-0.5 * length + 11 * s, -0.5 * length + 33 * s]
    return RunConfig(
        grid=GridSpec(length, next_pow2(10.0 * length)),
        reference=ReferenceSpec(zeros, 1),
        solver=SolverConfig(scheme=scheme, dt_init=1e-4, dt_max=s * s, error_tol=1e-6,
                            t_end=750.0 * s * s),
        initial=InitialSpec("manifold_plus_noise",
                            {"zeros": zeros, "first_sign": 1, "hbar0": hbar0,
                             "spectrum": spectrum, "j_max": int(length // 2)}, seed),
        record_stride=0.01,
        record_growth=1.1,
        phase=PhaseSpec(),
    )


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepPoint:
    ell: float
    length: float
    n: int
    value: float
    flag: str | None
    censored: bool
    seed: int
    config_hash: str
    wall: float
    extras: dict = field(default_factory=dict)


@dataclass
class SweepResult:
    kind: str
    ell_grid: list
    values: list
    fit: dict
    predicted_slope: float
    points: list
    excluded: list

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_rows(self) -> list:
        return [[p.ell, p.value, p.seed, i] for i, p in enumerate(self.points)]


def sweep_point_config(kind: str, ell: float, spec: SweepSpec, master_seed: int = 0,
                       index: int = 0) -> RunConfig:
    """Four layers with gaps (ell, 2 ell, 3 ell, 2 ell) on L = 8 ell.

    The smallest interval has the highest chemical potential and feeds the
    largest one through the two neutral intervals, so the state drifts and
    eventually collides while its mean is conserved.
    """
    if kind not in SWEEP_KINDS:
        raise PreconditionError(f"unknown sweep kind {kind!r}; choose from {SWEEP_KINDS}")
    L = 8.0 * ell
    gaps = [ell, 2 * ell, 3 * ell, 2 * ell]
    off = -0.5 * L + 0.5 * ell
    zeros = list(off + np.concatenate(([0.0], np.cumsum(gaps[:-1]))))
    if kind == "dissipation_plateau":
        solver = SolverConfig(scheme=spec.scheme, dt_init=1e-3, dt_max=0.05 * L * L,
                              error_tol=spec.error_tol, t_end=spec.horizon_factor * L * L,
                              max_steps=spec.max_steps)
        stride, growth = 0.01, 1.1
    else:
        solver = SolverConfig(scheme=spec.scheme, dt_init=1e-3, dt_max=1e9,
                              error_tol=spec.error_tol, t_end=1e12, max_steps=spec.max_steps)
        stride, growth = 1.0, 1.01
    return RunConfig(
        grid=GridSpec(L, next_pow2(spec.points_per_unit * L)),
        reference=ReferenceSpec(zeros, 1),
        solver=solver,
        initial=InitialSpec("unequal_gaps", {"gaps": gaps, "first_sign": 1, "offset": off},
                            derive_seed(master_seed, index)),
        record_stride=stride,
        record_growth=growth,
        master_seed=master_seed,
        sweep=spec,
    )


def detect_plateau(t, D, length: float, rel_rate: float = 0.05, min_records: int = 10):
    """Longest run of records with |d ln D / dt| <= rel_rate (2 pi / L)^2.

    Returns (median D over the run, (t_start, t_end)) or (nan, None).
    """
    t, D = np.asarray(t, dtype=float), np.asarray(D, dtype=float)
    ok = (D > 0) & np.isfinite(D) & (t > 0)
    t, lD = t[ok], np.log(D[ok])
    if len(t) < min_records + 2:
        return math.nan, None
    rate = np.abs(np.gradient(lD, t))
    flat = rate <= rel_rate * (2 * math.pi / length) ** 2
    best, run_start = (0, 0), None
    for i, f in enumerate(np.append(flat, False)):
        if f and run_start is None:
            run_start = i
        elif not f and run_start is not None:
            if i - run_start > best[1] - best[0]:
                best = (run_start, i)
            run_start = None
    a, b = best
    if b - a < min_records:
        return math.nan, None
    return float(np.median(np.exp(lD[a:b]))), (float(t[a]), float(t[b - 1]))


def run_sweep_point(kind: str, cfg: RunConfig) -> SweepPoint:
    grid, p, vbar = reference_point(cfg)
    u0 = make_initial(cfg.initial.kind, cfg.initial.params, cfg.initial.seed, grid, p)
    st0 = initial_state(u0, cfg.solver)
    n0 = vbar.n_zeros
    rec0 = record(u0, vbar, p, 0.5 * vbar.min_gap, t=0.0)
    out = []
    t0 = time.perf_counter()
    if kind == "dissipation_plateau":
        def monitor(st, log):
            drift = math.sqrt(max(hminus1_norm_sq(st.field - u0), 0.0))
            out.append((st.t, dissipation(st.field, p), drift))

        st, log = advance_adaptive(st0, cfg.solver.t_end, cfg.solver, p, monitor=monitor)
        t, D, drift = (np.array(c) for c in zip(*out))
        value, window = detect_plateau(t, D, grid.length)
        flag = None if window is not None else "no plateau detected"
        extras = {"plateau_window": window, "max_hminus1_drift": float(np.max(drift)),
                  "gap0": rec0.gap, "horizon": float(t[-1]), "steps": log.steps}
        censored = log.censored
    else:
        radius = 4.0 * grid.spacing

        def monitor(st, log):
            pos, ori = find_crossings(st.field)
            c, _, _ = cluster_crossings(pos, ori, radius, grid.length)
            out.append((st.t, len(c)))
            return len(c)

        st, log = advance_adaptive(st0, cfg.solver.t_end, cfg.solver, p, monitor=monitor,
                                   stop=lambda k: k < n0)
        censored = log.censored or not log.stopped_early
        if censored:
            value, flag = math.nan, "censored: no collision within the step budget"
        else:
            value, flag = 0.5 * (out[-2][0] + out[-1][0]), None
        extras = {"bracket": [out[-2][0], out[-1][0]] if len(out) > 1 else None,
                  "steps": log.steps, "rejections": log.rejections}
    return SweepPoint(
        ell=vbar.min_gap, length=grid.length, n=grid.n, value=value, flag=flag, censored=censored,
        seed=cfg.initial.seed, config_hash=config_hash(cfg),
        wall=time.perf_counter() - t0, extras=extras,
    )


def _point_job(args):
    kind, cfg = args
    return run_sweep_point(kind, cfg)


def timescale_sweep(kind: str, ell_grid=None, base: SweepSpec | None = None,
                    master_seed: int = 0, jobs: int = 1) -> SweepResult:
    """Run one sweep point per ell and fit ln(value) against ell.

    Predicted slopes: -2 C_G for the plateau dissipation, +C_G for the
    collision time.  Points without a plateau or collision are excluded and
    flagged; fewer than three survivors is a fit error.
    """
    base = base or SweepSpec(kind=kind)
    grid = list(ell_grid if ell_grid is not None else base.ell_grid)
    if len(grid) < 3:
        raise FitError(f"a sweep needs at least 3 grid values, got {len(grid)}")
    cfgs = [sweep_point_config(kind, float(ell), base, master_seed, i) for i, ell in enumerate(grid)]
    jobs = max(1, int(jobs))
    if jobs == 1:
        points = [run_sweep_point(kind, c) for c in cfgs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            points = list(ex.map(_point_job, [(kind, c) for c in cfgs]))
    good = [pt for pt in points if pt.flag is None and np.isfinite(pt.value) and pt.value > 0]
    excluded = [{"ell": pt.ell, "flag": pt.flag} for pt in points if pt not in good]
    fit = fit_line([pt.ell for pt in good], [math.log(pt.value) for pt in good])
    if fit is None:
        raise FitError(f"only {len(good)} usable sweep points; need 3")
    c_g = get_potential(cfgs[0].potential).c_g
    return SweepResult(
        kind=kind, ell_grid=grid, values=[pt.value for pt in points], fit=fit,
        predicted_slope=-2 * c_g if kind == "dissipation_plateau" else c_g,
        points=points, excluded=excluded,
    )


# the verification suites live in their own module
from .suites import SUITES, SuiteReport, calibrate, verify_suite  # noqa: E402
