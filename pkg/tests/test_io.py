import csv
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chlab.diagnostics import DiagnosticsSeries, record
from chlab.errors import ConfigError, PreconditionError
from chlab.io import (
    CheckpointMismatch, config_from_dict, config_hash, derive_seed, effective_config, export_series,
    load_checkpoint, parse_config, save_checkpoint,
)
from chlab.manifold import build_manifold_point
from chlab.solver import SolverConfig, advance_adaptive, initial_state, make_initial
from chlab.spectral import TorusGrid

BASE = {
    "grid": {"length": 32.0, "n": 256},
    "initial": {"kind": "manifold_plus_noise", "params": {"zeros": [-8.0, 6.0], "hbar0": 0.01}, "seed": 4},
    "solver": {"scheme": "imex_bdf2", "dt_max": 0.5, "t_end": 4.0},
    "record_stride": 0.5,
}


def test_defaults_and_record_placement():
    cfg = config_from_dict(BASE)
    assert cfg.solver.record_stride == 0.5
    assert cfg.solver.scheme == "imex_bdf2"
    assert cfg.potential == "quartic"
    eff = effective_config(cfg)
    assert "record_stride" not in eff["solver"]
    assert eff["record_stride"] == 0.5
    assert config_from_dict(eff) == cfg


@pytest.mark.parametrize("patch, where", [
    ({"bogus": 1}, "config.bogus"),
    ({"solver": {"typo": 1}}, "config.solver.typo"),
    ({"solver": {"record_stride": 1.0}}, "config.solver.record_stride"),
    ({"grid": {"length": 32.0}}, "config.grid.n"),
    ({"grid": {"length": "x", "n": 256}}, "config.grid.length"),
    ({"solver": {"scheme": "rk4"}}, "config.solver"),
])
def test_strict_parsing(patch, where):
    d = {**BASE, **patch}
    with pytest.raises(ConfigError) as exc:
        config_from_dict(d)
    assert where in str(exc.value)


def test_resolution_limits():
    with pytest.raises(ConfigError):
        config_from_dict({**BASE, "grid": {"length": 32.0, "n": 64}})
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        config_from_dict({**BASE, "grid": {"length": 32.0, "n": 128}})
    assert any("points per unit" in str(x.message) for x in w)


def test_parse_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(BASE))
    assert parse_config(good) == config_from_dict(BASE)


def test_hash_ignores_output_only():
    a = config_from_dict(BASE)
    b = config_from_dict({**BASE, "output": "elsewhere"})
    c = config_from_dict({**BASE, "solver": {**BASE["solver"], "error_tol": 1e-7}})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 16


@settings(max_examples=50)
@given(st.integers(0, 2 ** 63), st.integers(0, 10 ** 6))
def test_derived_seeds_are_stable_and_distinct(master, index):
    s = derive_seed(master, index)
    assert s == derive_seed(master, index)
    assert s != derive_seed(master, index + 1)
    assert 0 <= s < 2 ** 64


def _run(p, cfg, state, t):
    return advance_adaptive(state, t, cfg, p)[0]


@pytest.mark.parametrize("scheme", ["convex_split_1", "imex_bdf2", "linearized_euler"])
def test_checkpoint_resume_is_bitwise(p, tmp_path, scheme):
    g = TorusGrid(32.0, 256)
    u0 = make_initial("manifold_plus_noise", {"zeros": [-8.0, 6.0], "hbar0": 0.01}, 4, g, p)
    cfg = SolverConfig(scheme=scheme, dt_max=0.5, t_end=4.0, record_stride=1.0)
    straight = _run(p, cfg, initial_state(u0, cfg), 4.0)
    half = _run(p, cfg, initial_state(u0, cfg), 2.0)
    save_checkpoint(half, tmp_path / "ck.json", config_hash="abc", seed=4)
    back = load_checkpoint(tmp_path / "ck.json", expected_hash="abc", grid=g)
    resumed = _run(p, cfg, back, 4.0)
    assert np.array_equal(resumed.field.values, straight.field.values)
    assert resumed.accepted == straight.accepted


def test_checkpoint_refuses_mismatch(p, tmp_path):
    g = TorusGrid(32.0, 256)
    st = initial_state(make_initial("manifold", {"zeros": [-8.0, 6.0]}, None, g, p), SolverConfig())
    save_checkpoint(st, tmp_path / "ck.json", config_hash="abc")
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "ck.json", expected_hash="def")
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "ck.json", grid=TorusGrid(32.0, 512))
    (tmp_path / "x.json").write_text("{}")
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "x.json")


def test_exports(p, tmp_path):
    g = TorusGrid(32.0, 256)
    vbar = build_manifold_point([-8.0, 6.0], 1, p, g)
    u0 = make_initial("manifold_plus_noise", {"zeros": [-8.0, 6.0], "hbar0": 0.01}, 4, g, p)
    cfg = SolverConfig(dt_max=0.5, t_end=4.0, record_stride=0.5)
    series = DiagnosticsSeries(n_zeros=2)
    advance_adaptive(initial_state(u0, cfg), 4.0, cfg, p,
                     monitor=lambda st, log: series.append(record(st.field, vbar, p, 3.0, t=st.t)))
    path = tmp_path / "series.csv"
    series.to_csv(path)
    e = export_series(path, "energy", tmp_path)
    z = export_series(path, "zeros", tmp_path)
    r = export_series(path, "rates", tmp_path, phase_report={"phase2_rate": 0.1, "phase1_slope": -1.0})
    rows = list(csv.reader(open(e)))
    assert rows[0] == ["t", "E_u", "gap"] and len(rows) == len(series) + 1
    assert list(csv.reader(open(z)))[0] == ["t", "z1", "z2"]
    kinds = {row[0] for row in list(csv.reader(open(r)))[1:]}
    assert kinds == {"local", "phase2_fit", "phase1_slope"}
    with pytest.raises(PreconditionError):
        export_series(path, "nope", tmp_path)
    with pytest.raises(PreconditionError):
        export_series(tmp_path / "none.csv", "energy", tmp_path)
