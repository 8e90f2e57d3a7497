"""Command line entry point ``chlab``.

Exit codes: 0 success, 1 numerical or suite failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .errors import ChlabError, ConfigError, PreconditionError, SuiteFailure
from .io import (
    EXPORTS, RunConfig, config_hash, effective_config, export_series, load_checkpoint, parse_config,
    save_checkpoint, versions, write_json,
)

COMMANDS = ("simulate", "profile", "verify", "sweep", "export", "calibrate")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chlab", description="Cahn-Hilliard metastability lab")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("target", nargs="?", help="suite name, sweep kind or export kind")
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--jobs", type=int, help="worker processes (default: $CHLAB_JOBS or 1)")
    ap.add_argument("--resume", help="simulate: continue from this checkpoint")
    ap.add_argument("--series", help="export: diagnostics CSV (default <out>/series.csv)")
    ap.add_argument("--fixture", help="verify: calibration fixture (default: the packaged one)")
    return ap


def _load(args, required: bool = True) -> RunConfig | None:
    if args.config is None:
        if required:
            raise ConfigError(f"{args.command} needs --config")
        return None
    cfg = parse_config(args.config)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = replace(cfg, master_seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output=args.out)
    return cfg


def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get("CHLAB_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"CHLAB_JOBS must be an integer, got {env!r}") from None
    return 1


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(cfg.output if cfg is not None else "out")


def cmd_simulate(args) -> int:
    from .experiments import analyse_phases, run_trajectory

    cfg = _load(args)
    out = _out_dir(args, cfg)
    h = config_hash(cfg)
    hr = config_hash(cfg, resume=True)
    state = None
    if args.resume:
        state = load_checkpoint(args.resume, expected_hash=hr, grid=cfg.torus)
    traj = run_trajectory(cfg, state=state)
    out.mkdir(parents=True, exist_ok=True)
    traj.series.to_csv(out / "series.csv")
    save_checkpoint(traj.state, out / "checkpoint.json", config_hash=hr, seed=traj.seed,
                    counters={"steps": traj.log.steps, "rejections": traj.log.rejections})
    write_json(out / "events.json", [asdict(e) for e in traj.events])
    write_json(out / "config.json", effective_config(cfg))
    write_json(out / "run.json", {
        "config_hash": h, "seed": traj.seed, "wall": traj.wall, "t_end": traj.state.t,
        "steps": traj.log.steps, "rejections": traj.log.rejections, "censored": traj.log.censored,
        "max_mass_drift": traj.log.max_mass_drift, "versions": versions(),
    })
    if cfg.phase is not None:
        from .experiments import reference_point

        _, p, vbar = reference_point(cfg)
        rep = analyse_phases(traj.series, cfg.grid.length, vbar.min_gap, vbar.n_zeros, cfg.phase, p.c_g)
        rep.seed, rep.config_hash = traj.seed, h
        write_json(out / "phase_report.json", rep.to_dict())
    print(f"simulated to t={traj.state.t:g} in {traj.log.steps} steps; output in {out}")
    return 0


def cmd_profile(args) -> int:
    from .experiments import reference_point
    from .potential import kink_energy

    cfg = _load(args)
    _, p, v = reference_point(cfg)
    summary = {
        **v.to_dict(),
        "signs": v.signs.tolist(),
        "gaps": v.gaps.tolist(),
        "amplitudes": v.amplitudes.tolist(),
        "energy": v.energy,
        "kink_energy": kink_energy(p),
        "min_gap": v.min_gap,
    }
    print(json.dumps(summary, indent=1))
    if args.out is not None:
        write_json(Path(args.out) / "profile.json", summary)
    return 0


def cmd_verify(args) -> int:
    from .suites import SUITES, verify_suite

    cfg = _load(args, required=False)
    spec = cfg.suite if cfg is not None else None
    name = args.target or (spec.name if spec is not None else None)
    if name not in SUITES:
        raise ConfigError(f"verify needs a suite name from {SUITES}")
    params = spec.params if spec is not None and spec.name == name else None
    fixture = args.fixture or (spec.fixture if spec is not None and spec.fixture else "default")
    seed = args.seed if args.seed is not None else (cfg.master_seed if cfg is not None else 0)
    rep = verify_suite(name, params, seed, fixture=fixture,
                       potential=cfg.potential if cfg is not None else "quartic")
    out = _out_dir(args, cfg)
    write_json(out / f"suite_{name}.json", rep.to_dict())
    print(f"suite {name}: {'passed' if rep.passed else 'FAILED'} ({rep.samples} samples, {rep.wall:.1f} s)")
    for f in rep.failures:
        print(f"  {f.get('check')}: {json.dumps({k: v for k, v in f.items() if k != 'samples'})}")
    if not rep.passed:
        raise SuiteFailure(f"suite {name} failed {len(rep.failures)} check(s)")
    return 0


def cmd_sweep(args) -> int:
    from .experiments import SWEEP_KINDS, timescale_sweep
    from .io import SweepSpec

    cfg = _load(args, required=False)
    spec = cfg.sweep if cfg is not None and cfg.sweep is not None else None
    kind = args.target or (spec.kind if spec is not None else None)
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"sweep needs a kind from {SWEEP_KINDS}")
    spec = replace(spec, kind=kind) if spec is not None else SweepSpec(kind=kind)
    seed = args.seed if args.seed is not None else (cfg.master_seed if cfg is not None else 0)
    res = timescale_sweep(kind, base=spec, master_seed=seed, jobs=_jobs(args))
    out = _out_dir(args, cfg)
    write_json(out / f"sweep_{kind}.json", res.to_dict())
    with open(out / f"sweep_{kind}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "seed", "run_id"])
        w.writerows(res.csv_rows())
    print(f"sweep {kind}: slope {res.fit['slope']:.4f} (predicted {res.predicted_slope:.4f})")
    return 0


def cmd_export(args) -> int:
    if args.target not in EXPORTS:
        raise ConfigError(f"export needs a kind from {EXPORTS}")
    cfg = _load(args, required=False)
    out = _out_dir(args, cfg)
    series = Path(args.series) if args.series else out / "series.csv"
    report = None
    if (series.parent / "phase_report.json").exists():
        report = json.loads((series.parent / "phase_report.json").read_text())
    path = export_series(series, args.target, out, phase_report=report)
    print(f"wrote {path}")
    return 0


def cmd_calibrate(args) -> int:
    from .suites import CALIBRATION_SEED, calibrate

    cfg = _load(args, required=False)
    out = _out_dir(args, cfg)
    seed = args.seed if args.seed is not None else CALIBRATION_SEED
    params = {}
    if cfg is not None and cfg.suite is not None:
        params = {cfg.suite.name: cfg.suite.params}
    fx = calibrate(out / "calibration.json", master_seed=seed, params=params)
    print(json.dumps(fx["constants"], indent=1))
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "profile": cmd_profile,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "export": cmd_export,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except (ConfigError, PreconditionError) as exc:
        print(f"chlab: error: {exc}", file=sys.stderr)
        return 2
    except ChlabError as exc:
        print(f"chlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
