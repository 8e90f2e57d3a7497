"""Time integration of u_t = -(u_xx - G'(u))_xx on the torus.

Three schemes share one adaptive driver:

* ``convex_split_1``: stabilised semi-implicit Euler,
  (1 + dt (k^4 + kappa k^2)) u+ = u - dt k^2 (F[G'(u)] - kappa u).
* ``imex_bdf2``: variable-step SBDF2 with the same splitting; the first step
  (no history) is ``convex_split_1``.
* ``linearized_euler``: one Newton step of implicit Euler,
  (I + dt J(u)) d = dt u_xx-of-mu, J v = v_xxxx - (G''(u) v)_xx, solved by
  preconditioned GMRES.  It keeps the correct slow-manifold mobility at
  large steps, where the stabilised splitting damps the drift by roughly
  1 / (1 + dt kappa k^2).

Every scheme leaves the k = 0 mode unchanged, so the mean is conserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import BlowUpError, InfeasibleError, NumericalFailure, PreconditionError, StiffnessError
from .potential import Potential
from .spectral import GridField, TorusGrid, energy, hminus1_norm_sq

SCHEMES = ("convex_split_1", "imex_bdf2", "linearized_euler")


def default_kappa(p: Potential, sample_count: int = 64) -> float:
    """max |G''(u)| over |u| <= 1.2 on the validation grid."""
    u = np.linspace(-2.0, 2.0, 4 * sample_count + 1)
    u = u[np.abs(u) <= 1.2 + 1e-12]
    u = np.concatenate((u, [-1.2, 1.2]))
    return float(np.max(np.abs(p.g2(u))))


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "convex_split_1"
    kappa: float | None = None
    dt_init: float = 1e-3
    dt_min: float = 1e-10
    dt_max: float = 1.0
    error_tol: float = 1e-6
    energy_tol: float | None = None
    t_end: float = 1.0
    record_stride: float = 0.1
    record_growth: float = 1.0
    max_steps: int | None = None
    dealias: bool = False
    gmres_tol: float = 1e-8

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise PreconditionError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise PreconditionError("need 0 < dt_min <= dt_init <= dt_max")
        if self.kappa is not None and self.kappa < 0:
            raise PreconditionError("kappa must be nonnegative")
        if self.error_tol <= 0 or self.t_end <= 0 or self.record_stride <= 0:
            raise PreconditionError("error_tol, t_end and record_stride must be positive")
        if self.record_growth < 1.0:
            raise PreconditionError("record_growth must be >= 1")

    def kappa_for(self, p: Potential) -> float:
        return default_kappa(p) if self.kappa is None else float(self.kappa)


@dataclass
class TrajectoryState:
    t: float
    field: GridField
    last_dt: float
    accepted: int = 0
    rejected: int = 0
    mass0: float = float("nan")
    prev: GridField | None = None
    prev_dt: float | None = None
    # accepted full steps since the last step-size increase
    streak: int = 0

    def __post_init__(self):
        if math.isnan(self.mass0):
            self.mass0 = float(np.mean(self.field.values))

    @property
    def grid(self) -> TorusGrid:
        return self.field.grid


def initial_state(u0: GridField, cfg: SolverConfig) -> TrajectoryState:
    return TrajectoryState(t=0.0, field=u0, last_dt=cfg.dt_init)


class _Kernel:
    """Precomputed multipliers for one grid, potential and stabilisation.

    Schemes work on prepared states ``(u, rfft(u), rfft(G'(u)))`` so that the
    transforms of an accepted state are reused for its energy, its
    dissipation and the next step.
    """

    def __init__(self, grid: TorusGrid, p: Potential, kappa: float, dealias: bool, gmres_tol: float):
        self.grid = grid
        self.p = p
        self.kappa = kappa
        self.dealias = dealias
        self.gmres_tol = gmres_tol
        k = grid.k
        self.k2 = k * k
        self.k4 = self.k2 * self.k2
        self.n = grid.n
        w = grid.mode_weight.copy()
        w[-1] = 0.0  # odd derivatives drop the Nyquist mode
        self.grad_w = w * self.k2 * grid.length / grid.n ** 2

    def g1_hat(self, u: np.ndarray) -> np.ndarray:
        if not self.dealias:
            return np.fft.rfft(self.p.g1(u))
        n = self.n
        m = 3 * n // 2
        uh = np.fft.rfft(u)
        pad = np.zeros(m // 2 + 1, dtype=complex)
        pad[: n // 2 + 1] = uh
        pad[n // 2] *= 0.5
        up = np.fft.irfft(pad, n=m) * (m / n)
        gh = np.fft.rfft(self.p.g1(up)) * (n / m)
        out = gh[: n // 2 + 1].copy()
        out[-1] = 2.0 * out[-1].real
        return out

    def prep(self, u: np.ndarray):
        return (u, np.fft.rfft(u), self.g1_hat(u))

    def energy(self, s) -> float:
        u, uh, _ = s
        kin = 0.5 * float(np.sum(self.grad_w * (uh.real ** 2 + uh.imag ** 2)))
        return kin + float(np.sum(self.p.g(u))) * self.grid.spacing

    def dissipation(self, s) -> float:
        _, uh, gh = s
        mu = self.k2 * uh + gh
        return float(np.sum(self.grad_w * (mu.real ** 2 + mu.imag ** 2)))

    def cs1(self, s, dt: float) -> np.ndarray:
        _, uh, gh = s
        rhs = uh - dt * self.k2 * (gh - self.kappa * uh)
        uh_new = rhs / (1.0 + dt * (self.k4 + self.kappa * self.k2))
        uh_new[0] = uh[0]
        return np.fft.irfft(uh_new, n=self.n)

    def bdf2(self, s, sp, dt: float, dt_prev: float) -> np.ndarray:
        w = dt / dt_prev
        _, uh, gh = s
        _, uph, gph = sp
        nl = -self.k2 * (gh - self.kappa * uh)
        nlp = -self.k2 * (gph - self.kappa * uph)
        rhs = (1.0 + w) * uh - (w * w / (1.0 + w)) * uph + dt * ((1.0 + w) * nl - w * nlp)
        lhs = (1.0 + 2.0 * w) / (1.0 + w) + dt * (self.k4 + self.kappa * self.k2)
        uh_new = rhs / lhs
        uh_new[0] = uh[0]
        return np.fft.irfft(uh_new, n=self.n)

    def lin_euler(self, s, dt: float) -> np.ndarray:
        u, uh, gh = s
        n = self.n
        k2, k4 = self.k2, self.k4
        b = np.fft.irfft(-dt * k2 * (k2 * uh + gh), n=n)
        if not np.any(b):
            return u.copy()
        g2 = self.p.g2(u)
        kbar = max(float(np.mean(g2)), 0.5)
        prec = 1.0 / (1.0 + dt * (k4 + kbar * k2))

        def matvec(v):
            v = np.asarray(v).ravel()
            jh = k4 * np.fft.rfft(v) + k2 * np.fft.rfft(g2 * v)
            return v + dt * np.fft.irfft(jh, n=n)

        def psolve(v):
            return np.fft.irfft(prec * np.fft.rfft(np.asarray(v).ravel()), n=n)

        A = LinearOperator((n, n), matvec=matvec, dtype=float)
        M = LinearOperator((n, n), matvec=psolve, dtype=float)
        d, info = gmres(A, b, M=M, rtol=self.gmres_tol, atol=0.0, restart=80, maxiter=10)
        if info != 0:
            # accept stagnation at roundoff level, refuse anything worse
            res = float(np.linalg.norm(matvec(d) - b)) / float(np.linalg.norm(b))
            if not res <= 100.0 * self.gmres_tol:
                raise NumericalFailure(f"GMRES stalled at relative residual {res:.2e} (dt={dt:g})")
        return u + (d - np.mean(d))


_KERNELS: dict = {}


def _kernel(grid: TorusGrid, p: Potential, cfg: SolverConfig) -> _Kernel:
    key = (grid, id(p.g), cfg.kappa_for(p), cfg.dealias, cfg.gmres_tol)
    ker = _KERNELS.get(key)
    if ker is None:
        if len(_KERNELS) > 32:
            _KERNELS.clear()
        ker = _Kernel(grid, p, cfg.kappa_for(p), cfg.dealias, cfg.gmres_tol)
        _KERNELS[key] = ker
    return ker


def _check_finite(u: np.ndarray, t: float, dt: float) -> None:
    if not np.all(np.isfinite(u)):
        bad = int(np.count_nonzero(~np.isfinite(u)))
        raise BlowUpError(f"non-finite samples ({bad} of {len(u)}) after step at t={t:g}, dt={dt:g}")


def _advance_values(ker: _Kernel, scheme: str, s, sp, prev_dt, dt):
    if scheme == "convex_split_1":
        return ker.cs1(s, dt)
    if scheme == "imex_bdf2":
        if sp is None:
            return ker.cs1(s, dt)
        return ker.bdf2(s, sp, dt, prev_dt)
    return ker.lin_euler(s, dt)


def step(state: TrajectoryState, dt: float, cfg: SolverConfig, p: Potential) -> TrajectoryState:
    """One fixed step of size ``dt``."""
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    ker = _kernel(state.grid, p, cfg)
    sp = ker.prep(state.prev.values) if state.prev is not None else None
    new = _advance_values(ker, cfg.scheme, ker.prep(state.field.values), sp, state.prev_dt, dt)
    _check_finite(new, state.t, dt)
    keep = cfg.scheme == "imex_bdf2"
    return TrajectoryState(
        t=state.t + dt,
        field=GridField(state.grid, new),
        last_dt=dt,
        accepted=state.accepted + 1,
        rejected=state.rejected,
        mass0=state.mass0,
        prev=state.field if keep else None,
        prev_dt=dt if keep else None,
    )


@dataclass
class AdaptiveLog:
    """Bookkeeping of an adaptive run.

    ``defect`` is |E(t) - E(t0) + int_{t0}^t D| at each record time, with the
    time integral of D accumulated by the trapezoidal rule over accepted steps.
    """

    record_times: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    dissipation_integral: list = field(default_factory=list)
    defect: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    monitor_output: list = field(default_factory=list)
    max_energy_increase: float = -np.inf
    max_mass_drift: float = 0.0
    step_energy_increases: int = 0
    dt_saturation_time: float | None = None
    censored: bool = False
    stopped_early: bool = False
    steps: int = 0
    rejections: int = 0
    solver_failures: int = 0


def record_schedule(t0: float, t_end: float, stride: float, growth: float):
    """Record times after t0 (lazy): uniform if growth == 1, else geometric."""
    if growth == 1.0:
        k = math.floor(t0 / stride + 1e-12) + 1
        while k * stride < t_end * (1 - 1e-14):
            yield k * stride
            k += 1
    else:
        t = stride
        while t <= t0 * (1 + 1e-14):
            t *= growth
        while t < t_end * (1 - 1e-14):
            yield t
            t *= growth
    yield t_end


def advance_adaptive(
    state: TrajectoryState,
    t_target: float,
    cfg: SolverConfig,
    p: Potential,
    monitor: Callable | None = None,
    stop: Callable | None = None,
    keep_dts: bool = False,
) -> tuple[TrajectoryState, AdaptiveLog]:
    """Step-doubling adaptive integration to ``t_target``.

    ``monitor(state, log)`` is called at t0 and at each record time and its
    return values collected in ``log.monitor_output``.  ``stop(output)`` may
    return True to end the run after a record.
    """
    if not t_target > state.t:
        raise PreconditionError("t_target must exceed the current time")
    ker = _kernel(state.grid, p, cfg)
    scheme = cfg.scheme
    grid = state.grid
    cur = ker.prep(state.field.values)
    prv = ker.prep(state.prev.values) if state.prev is not None else None
    prev_dt = state.prev_dt
    t = state.t
    dt = min(max(state.last_dt, cfg.dt_min), cfg.dt_max)
    E = ker.energy(cur)
    E0 = E
    D = ker.dissipation(cur)
    diss_int = 0.0
    accepted, rejected = state.accepted, state.rejected
    streak = state.streak
    log = AdaptiveLog()
    mass0 = state.mass0
    steps_here = 0
    schedule = record_schedule(t, t_target, cfg.record_stride, cfg.record_growth)
    target = next(schedule)

    def snapshot():
        return TrajectoryState(t, GridField(grid, cur[0]), dt, accepted, rejected, mass0,
                               GridField(grid, prv[0]) if prv is not None else None, prev_dt, streak)

    def do_record():
        log.record_times.append(t)
        log.energies.append(E)
        log.dissipation_integral.append(diss_int)
        log.defect.append(abs(E - E0 + diss_int))
        if monitor is not None:
            out = monitor(snapshot(), log)
            log.monitor_output.append(out)
            if stop is not None and stop(out):
                return True
        return False

    if do_record():
        log.stopped_early = True
        return snapshot(), log

    while target is not None:
        if cfg.max_steps is not None and steps_here >= cfg.max_steps:
            log.censored = True
            break
        h = min(dt, target - t)
        last_chunk = h < dt
        ok = False
        err = np.inf
        small = None
        try:
            big = _advance_values(ker, scheme, cur, prv, prev_dt, h)
            half = _advance_values(ker, scheme, cur, prv, prev_dt, 0.5 * h)
        except NumericalFailure:
            # an unconverged linear solve counts as a rejected step
            if h <= cfg.dt_min * (1 + 1e-12):
                raise
            log.solver_failures += 1
            big = half = np.full(1, np.nan)
        if np.all(np.isfinite(big)) and np.all(np.isfinite(half)):
            s_half = ker.prep(half)
            small = _advance_values(ker, scheme, s_half, cur if scheme == "imex_bdf2" else None,
                                    0.5 * h, 0.5 * h)
            if np.all(np.isfinite(small)):
                norm = float(np.linalg.norm(small))
                err = float(np.linalg.norm(big - small)) / (norm if norm > 0 else 1.0)
                s_small = ker.prep(small)
                E_new = ker.energy(s_small)
                etol = cfg.energy_tol if cfg.energy_tol is not None else 1e-12 * (1.0 + abs(E))
                ok = err <= cfg.error_tol and E_new <= E + etol
        if ok:
            D_new = ker.dissipation(s_small)
            diss_int += 0.5 * h * (D + D_new)
            log.max_energy_increase = max(log.max_energy_increase, E_new - E)
            if E_new > E:
                log.step_energy_increases += 1
            if scheme == "imex_bdf2":
                prv, prev_dt = s_half, 0.5 * h
            cur, E, D = s_small, E_new, D_new
            t = target if last_chunk else t + h
            accepted += 1
            steps_here += 1
            log.max_mass_drift = max(log.max_mass_drift, abs(float(np.mean(cur[0])) - mass0))
            if keep_dts:
                log.dts.append(h)
            if not last_chunk:
                streak += 1
                if streak >= 5:
                    dt = min(dt * 1.5, cfg.dt_max)
                    streak = 0
                if dt >= cfg.dt_max and log.dt_saturation_time is None:
                    log.dt_saturation_time = t
            if t >= target:
                target = next(schedule, None)
                if do_record():
                    log.stopped_early = True
                    break
        else:
            rejected += 1
            log.rejections += 1
            streak = 0
            if h <= cfg.dt_min * (1 + 1e-12):
                if small is None or not np.all(np.isfinite(small)):
                    raise BlowUpError(f"non-finite samples at t={t:g} with dt at dt_min={cfg.dt_min:g}")
                raise StiffnessError(
                    f"step rejected at dt_min={cfg.dt_min:g} (t={t:g}, error={err:.3e}, "
                    f"tol={cfg.error_tol:g})"
                )
            dt = max(0.5 * h, cfg.dt_min)
    log.steps = steps_here
    return snapshot(), log


# --- initial data -----------------------------------------------------------


def _noise(grid: TorusGrid, j_max: int, rng: np.random.Generator, spectrum: str, c_g: float) -> np.ndarray:
    """Complex Gaussian modes 1..j_max with a prescribed amplitude profile.

    ``critical``: |f_j|^2 ~ k (2k^2 + C_G^2) / (k^2 + C_G^2), so that in the
    linearisation about the wells every octave of relaxation rates
    lambda = k^2 (k^2 + C_G^2) carries the same energy and the energy gap of
    the linear flow decays exactly like 1/t until the lowest mode is reached.
    ``pink``: |f_j|^2 ~ j (equal H^-1 weight per octave of k).
    ``flat``: white noise.
    """
    j_max = int(min(j_max, grid.n // 2 - 1))
    if j_max < 1:
        raise PreconditionError("j_max must be >= 1")
    j = np.arange(1, j_max + 1)
    z = rng.standard_normal(j_max) + 1j * rng.standard_normal(j_max)
    k = 2.0 * np.pi * j / grid.length
    if spectrum == "critical":
        amp = np.sqrt(k * (2 * k * k + c_g ** 2) / (k * k + c_g ** 2))
    elif spectrum == "pink":
        amp = np.sqrt(j)
    elif spectrum == "flat":
        amp = np.ones(j_max)
    else:
        raise PreconditionError(f"unknown noise spectrum {spectrum!r}")
    c = np.zeros(grid.n // 2 + 1, dtype=complex)
    c[1 : j_max + 1] = amp * z
    return np.fft.irfft(c * grid.n, n=grid.n)


def make_initial(kind: str, params: dict, seed: int | None, grid: TorusGrid, p: Potential) -> GridField:
    """Initial data.

    kinds: ``manifold`` (zeros, first_sign), ``manifold_plus_noise`` (adds
    mean-zero noise on modes 1..j_max scaled so that the H^-1 distance to the
    reference equals ``hbar0``; ``energy_budget`` optionally caps E(u0)),
    ``unequal_gaps`` (gaps, first_sign, offset) and ``custom_samples``.
    """
    from .manifold import build_manifold_point

    params = dict(params or {})
    if kind == "custom_samples":
        return GridField(grid, params["samples"])
    if kind == "unequal_gaps":
        gaps = np.asarray(params["gaps"], dtype=float)
        if abs(gaps.sum() - grid.length) > 1e-9 * grid.length:
            raise PreconditionError("gaps must sum to the torus length")
        z = params.get("offset", -0.5 * grid.length + 0.5 * gaps[0]) + np.concatenate(([0.0], np.cumsum(gaps[:-1])))
        params = {**params, "zeros": list(z)}
        kind = "manifold"
    if kind not in ("manifold", "manifold_plus_noise"):
        raise PreconditionError(f"unknown initial kind {kind!r}")
    vbar = build_manifold_point(params["zeros"], int(params.get("first_sign", 1)), p, grid)
    if kind == "manifold":
        return vbar.field
    hbar0 = float(params.get("hbar0", 0.0))
    budget = params.get("energy_budget")
    if budget is not None and budget < vbar.energy:
        raise InfeasibleError(f"energy budget {budget} is below the manifold energy {vbar.energy:.6f}")
    if hbar0 == 0.0:
        return vbar.field
    rng = np.random.default_rng(seed)
    noise = _noise(grid, int(params.get("j_max", grid.length / 2)), rng, params.get("spectrum", "critical"), p.c_g)
    noise -= np.mean(noise)
    h = hminus1_norm_sq(GridField(grid, noise))
    u0 = GridField(grid, vbar.field.values + noise * math.sqrt(hbar0 / h))
    if budget is not None and energy(u0, p) > budget:
        raise InfeasibleError(
            f"E(u0) = {energy(u0, p):.6f} exceeds the budget {budget}; lower hbar0 or j_max"
        )
    return u0


# --- events ------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    kind: str
    t: float
    detail: dict


def detect_events(series, thresholds=(), dt_max: float | None = None) -> list:
    """Collision (zero-count changes), energy-gap threshold crossings and dt saturation.

    ``series`` is a sequence of records with ``t``, ``zero_count`` and ``gap``
    attributes (``dt`` optional).
    """
    recs = list(series)
    if not recs:
        raise PreconditionError("series is empty")
    events = []
    for a, b in zip(recs[:-1], recs[1:]):
        if a.zero_count != b.zero_count:
            events.append(Event("zero_count_change", 0.5 * (a.t + b.t),
                                {"from": a.zero_count, "to": b.zero_count, "bracket": (a.t, b.t)}))
    for thr in thresholds:
        for a, b in zip(recs[:-1], recs[1:]):
            ga, gb = a.gap, b.gap
            if np.isfinite(ga) and np.isfinite(gb) and ga >= thr > gb:
                if ga > 0 and gb > 0 and a.t > 0:
                    w = math.log(ga / thr) / math.log(ga / gb)
                    tt = math.exp(math.log(a.t) + w * (math.log(b.t) - math.log(a.t)))
                else:
                    w = (ga - thr) / (ga - gb)
                    tt = a.t + w * (b.t - a.t)
                events.append(Event("gap_below", tt, {"threshold": thr}))
                break
    if dt_max is not None:
        for r in recs:
            dt = getattr(r, "dt", None)
            if dt is not None and dt >= dt_max * (1 - 1e-12):
                events.append(Event("dt_saturated", r.t, {"dt_max": dt_max}))
                break
    events.sort(key=lambda e: e.t)
    return events
