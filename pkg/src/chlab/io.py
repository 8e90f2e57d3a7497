"""Run configuration, checkpoints and CSV export.

Configs are JSON objects parsed strictly into dataclasses: unknown keys are
rejected with their dotted path, defaults are filled in and the effective
config can be echoed back and hashed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import types
import typing
import warnings
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, PreconditionError
from .solver import SolverConfig, TrajectoryState
from .spectral import GridField, TorusGrid


@dataclass(frozen=True)
class GridSpec:
    length: float
    n: int


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "manifold"
    params: dict = field(default_factory=dict)
    seed: int | None = None


@dataclass(frozen=True)
class ReferenceSpec:
    zeros: list[float]
    first_sign: int = 1

    def __post_init__(self):
        if self.first_sign not in (1, -1):
            raise PreconditionError("first_sign must be +1 or -1")


@dataclass(frozen=True)
class PhaseSpec:
    """Thresholds of the phase study: c_alg / L^2 and c_exp L^2 delta^2 (floored)."""

    c_alg: float = 0.25
    c_exp: float = 1.0
    floor: float = 1e-10
    settle_slack: float = 1.0


@dataclass(frozen=True)
class SweepSpec:
    kind: str = "dissipation_plateau"
    ell_grid: list[float] = field(default_factory=lambda: [8.0, 10.0, 12.0, 14.0])
    points_per_unit: float = 8.0
    scheme: str = "linearized_euler"
    error_tol: float = 1e-6
    max_steps: int = 200000
    horizon_factor: float = 0.5


@dataclass(frozen=True)
class SuiteSpec:
    name: str = "eed"
    params: dict = field(default_factory=dict)
    fixture: str | None = None


SOLVER_RECORD_KEYS = ("record_stride", "record_growth")


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec
    reference: ReferenceSpec | None = None
    potential: str = "quartic"
    solver: SolverConfig = field(default_factory=SolverConfig)
    initial: InitialSpec = field(default_factory=InitialSpec)
    ell_weak: float | None = None
    record_stride: float = 0.1
    record_growth: float = 1.0
    output: str = "out"
    master_seed: int = 0
    phase: PhaseSpec | None = None
    sweep: SweepSpec | None = None
    suite: SuiteSpec | None = None

    def __post_init__(self):
        TorusGrid(self.grid.length, self.grid.n)
        ppu = self.grid.n / self.grid.length
        if ppu < 4:
            raise PreconditionError(f"grid has {ppu:.2f} points per unit length; at least 4 required")
        if ppu < 8:
            warnings.warn(f"grid has {ppu:.2f} points per unit length; 8 or more recommended", stacklevel=2)
        object.__setattr__(
            self, "solver",
            replace(self.solver, record_stride=self.record_stride, record_growth=self.record_growth),
        )

    @property
    def torus(self) -> TorusGrid:
        return TorusGrid(self.grid.length, self.grid.n)

    def initial_seed(self) -> int:
        if self.initial.seed is not None:
            return int(self.initial.seed)
        return derive_seed(self.master_seed, 0)


# ---------------------------------------------------------------------------
# strict parsing


def _is_optional(tp):
    args = typing.get_args(tp)
    origin = typing.get_origin(tp)
    if (origin is typing.Union or origin is types.UnionType) and type(None) in args:
        rest = [a for a in args if a is not type(None)]
        return rest[0] if len(rest) == 1 else None
    return None


def _coerce(tp, value, path):
    inner = _is_optional(tp)
    if inner is not None:
        return None if value is None else _coerce(inner, value, path)
    if is_dataclass(tp):
        return _build(tp, value, path)
    origin = typing.get_origin(tp)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        (item,) = typing.get_args(tp) or (typing.Any,)
        return [_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return dict(value)
    return value


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key {key!r}")
        if cls is SolverConfig and key in SOLVER_RECORD_KEYS:
            raise ConfigError(f"{path}.{key}: set {key} at the top level")
    kwargs = {}
    for name, f in known.items():
        if name in data:
            kwargs[name] = _coerce(hints[name], data[name], f"{path}.{name}")
        elif f.default is MISSING and f.default_factory is MISSING:
            raise ConfigError(f"{path}.{name}: required key missing")
    try:
        return cls(**kwargs)
    except (PreconditionError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def parse_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data)


def effective_config(cfg: RunConfig) -> dict:
    """Complete echo of the config with defaults filled in."""
    d = asdict(cfg)
    for k in SOLVER_RECORD_KEYS:
        d["solver"].pop(k)
    return d


def config_hash(cfg: RunConfig, resume: bool = False) -> str:
    """Hash of every behaviour-affecting value (the output directory excluded).

    With ``resume`` the end time is left out too, so that a checkpoint can be
    continued by a config that only extends the run.
    """
    d = effective_config(cfg)
    d.pop("output")
    if resume:
        d["solver"].pop("t_end")
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def derive_seed(master_seed: int, index: int) -> int:
    """Independent stream seed for run ``index`` of a sweep or suite."""
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def write_json(path, obj) -> None:
    """Atomic JSON write."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1, default=_json_default)
        fh.write("\n")
    os.replace(tmp, path)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if is_dataclass(o):
        return asdict(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def versions() -> dict:
    import scipy

    return {"chlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointMismatch(ConfigError):
    """Checkpoint written under a different config or grid."""


def save_checkpoint(state: TrajectoryState, path, config_hash: str | None = None,
                    seed: int | None = None, counters: dict | None = None) -> None:
    write_json(path, {
        "format": "chlab-checkpoint",
        "version": 1,
        "t": state.t,
        "grid": state.grid.header(),
        "samples": state.field.values.tolist(),
        "last_dt": state.last_dt,
        "accepted": state.accepted,
        "rejected": state.rejected,
        "mass0": state.mass0,
        "prev_samples": None if state.prev is None else state.prev.values.tolist(),
        "prev_dt": state.prev_dt,
        "streak": state.streak,
        "config_hash": config_hash,
        "seed": seed,
        "counters": counters or {},
    })


def load_checkpoint(path, expected_hash: str | None = None, grid: TorusGrid | None = None) -> TrajectoryState:
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format") != "chlab-checkpoint":
        raise ConfigError(f"{path} is not a checkpoint")
    if expected_hash is not None and d.get("config_hash") != expected_hash:
        raise CheckpointMismatch(
            f"checkpoint config hash {d.get('config_hash')} differs from the current {expected_hash}"
        )
    g = TorusGrid(d["grid"]["length"], d["grid"]["n"])
    if grid is not None and grid != g:
        raise CheckpointMismatch(f"checkpoint grid {g.header()} differs from {grid.header()}")
    prev = None if d["prev_samples"] is None else GridField(g, d["prev_samples"])
    return TrajectoryState(
        t=d["t"], field=GridField(g, d["samples"]), last_dt=d["last_dt"],
        accepted=d["accepted"], rejected=d["rejected"], mass0=d["mass0"],
        prev=prev, prev_dt=d["prev_dt"], streak=d.get("streak", 0),
    )


def checkpoint_roundtrip(state: TrajectoryState, path, **kw) -> TrajectoryState:
    save_checkpoint(state, path, **kw)
    return load_checkpoint(path, expected_hash=kw.get("config_hash"), grid=state.grid)


# ---------------------------------------------------------------------------
# export


EXPORTS = ("energy", "zeros", "rates")


def _write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return path


def export_series(series_path, what: str, out_dir, phase_report: dict | None = None) -> Path:
    """Plot-ready CSV from a stored diagnostics series.

    ``energy``: t, E_u, gap.  ``zeros``: t and one column per zero.
    ``rates``: kind, t, value with the local rate -d ln(gap)/dt and, when a
    phase report is given, its fitted phase-2 rate.
    """
    from .diagnostics import DiagnosticsSeries

    if what not in EXPORTS:
        raise PreconditionError(f"unknown export {what!r}; choose from {EXPORTS}")
    if not Path(series_path).exists():
        raise PreconditionError(f"series {series_path} does not exist")
    s = DiagnosticsSeries.from_csv(series_path)
    out = Path(out_dir)
    t = s.column("t")
    if what == "energy":
        return _write_rows(out / "energy.csv", ["t", "E_u", "gap"],
                           zip(t, s.column("E_u"), s.column("gap")))
    if what == "zeros":
        n = s.n_zeros or 0
        rows = []
        for r in s:
            z = list(r.zeros) + [math.nan] * (n - len(r.zeros))
            rows.append([r.t] + z[:n])
        return _write_rows(out / "zeros.csv", ["t"] + [f"z{i + 1}" for i in range(n)], rows)
    gap = s.column("gap")
    rows = []
    ok = (gap > 0) & np.isfinite(gap)
    tt, lg = t[ok], np.log(gap[ok])
    for i in range(1, len(tt) - 1):
        rows.append(["local", tt[i], -(lg[i + 1] - lg[i - 1]) / (tt[i + 1] - tt[i - 1])])
    if phase_report is not None:
        rows.append(["phase2_fit", math.nan, phase_report.get("phase2_rate", math.nan)])
        rows.append(["phase1_slope", math.nan, phase_report.get("phase1_slope", math.nan)])
    return _write_rows(out / "rates.csv", ["kind", "t", "value"], rows)
