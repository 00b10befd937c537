import json
from dataclasses import replace

import numpy as np
import pytest

from robustdln import experiment_cli as cli
from robustdln.experiment_cli import (
    KINDS,
    SCHEMA_VERSION,
    ConfigError,
    ExperimentConfig,
    config_from_mapping,
    dump_config,
    load_config,
    parse_schedule,
    preset_names,
    resolve_config,
    run_experiment,
    validate_config,
)

EXPECTED_PRESETS = {"overfit_vs_depth", "matrix_depth", "deep_piecewise", "geometric_step",
                     "landscape_probe", "flatness_sweep", "direction_deviation"}

TINY = dict(d=12, k=2, m=10, T=40, seeds=(0, 1), depths=(1, 2))


def test_presets_ship_and_validate():
    names = set(preset_names())
    assert EXPECTED_PRESETS <= names
    for name in names:
        cfg = resolve_config(name)
        assert cfg.name == name
        assert validate_config(cfg).ok, name


def test_presets_carry_stated_parameters():
    f1 = resolve_config("overfit_vs_depth")
    assert (f1.d, f1.m, f1.p, f1.k, f1.alpha, f1.T) == (500, 300, 0.1, 5, 1e-6, 10**6)
    f2 = resolve_config("matrix_depth")
    assert (f2.d, f2.rank, f2.m, f2.p, f2.noise_scale, f2.alpha) == (20, 3, 180, 0.05, 10.0, 1e-3)
    f3 = resolve_config("deep_piecewise")
    assert f3.depths == (4, 5, 6)
    assert [e for _, e in parse_schedule(f3.schedules[0]).pieces] == [1e-3, 1e-4, 1e-5]


@pytest.mark.parametrize("overrides, field", [
    (dict(p=1.0), "p"),
    (dict(k=600), "k"),
    (dict(schedules=("geometric:1e-2:1.0",)), "schedules"),
    (dict(kind="nonsense"), "kind"),
    (dict(depths=()), "depths"),
    (dict(alpha=0.0), "alpha"),
    (dict(kind="flatness_sweep", gammas=(1e-3, 2e-3)), "gammas"),
    (dict(kind="matrix", depths=(1, 2)), "depths"),
    (dict(kind="dynamics_compare", reach_tol=0.0), "reach_tol"),
])
def test_validation_violations(overrides, field):
    res = validate_config(replace(ExperimentConfig(), **overrides))
    assert not res.ok
    assert any(v.startswith(field) for v in res.violations)


def test_validation_lists_every_violation_and_does_not_mutate():
    cfg = replace(ExperimentConfig(), p=2.0, k=0, alpha=-1.0)
    before = dump_config(cfg)
    res = validate_config(cfg)
    assert {v.split(":")[0] for v in res.violations} >= {"p", "k", "alpha"}
    assert dump_config(cfg) == before


def test_radius_bound_is_only_a_warning():
    cfg = replace(ExperimentConfig(), kind="flatness_sweep", gammas=(1e-3, 1e-2, 1e-1, 0.9))
    res = validate_config(cfg)
    assert res.ok and any("gammas" in w for w in res.warnings)


def test_config_file_roundtrip(tmp_path):
    cfg = replace(ExperimentConfig(), name="rt", schedules=("piecewise:0=1e-3;100=1e-4",
                                                            "halving:1e-2:50"),
                  stop_at_reach=True, reach_tol=1e-3, seeds=(3, 4))
    path = tmp_path / "rt.ini"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg
    over = load_config(path, ["T=77", "depths=2,3"])
    assert over.T == 77 and over.depths == (2, 3)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        config_from_mapping({"bogus": "1"})
    with pytest.raises(ConfigError):
        config_from_mapping({"T": "1.5"})
    bad = tmp_path / "bad.ini"
    bad.write_text("[other]\nT = 3\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ValueError):
        parse_schedule("cosine:1")


def test_schedule_parsing():
    assert parse_schedule("constant:1e-3")(5) == 1e-3
    g = parse_schedule("halving:1e-2:10000")
    assert g(10_000) == pytest.approx(5e-3)
    assert parse_schedule("geometric:1e-2:0.5")(2) == pytest.approx(2.5e-3)


def test_trajectory_outputs_and_reproducibility(tmp_path):
    cfg = replace(ExperimentConfig(), name="traj", **TINY)
    a = run_experiment(cfg, tmp_path / "a", workers=1)
    csvs = sorted(p.name for p in a.files if p.suffix == ".csv")
    assert len(csvs) == 4
    for p in a.files:
        if p.suffix == ".csv":
            assert p.read_text().startswith("iteration,train_loss,generalization_error")
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["schema_version"] == SCHEMA_VERSION
    assert summary["config"]["d"] == 12 and summary["kind"] == "trajectory"
    assert set(summary["headline"]) == {"N1", "N2"}
    b = run_experiment(cfg, tmp_path / "b", workers=2)
    sa = json.loads((tmp_path / "a" / "summary.json").read_text())
    sb = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert sa == sb


@pytest.mark.parametrize("kind, extra, expect", [
    ("landscape_grid", dict(gammas=(1e-3,), grid_points=3, seeds=(0,)), 3),
    ("flatness_sweep", dict(gammas=(1e-4, 1e-3, 1e-2, 1e-1 / 4), seeds=(0,)), 3),
    ("deviation_sweep", dict(d=10, k=2, m_list=(200, 800), seeds=(0, 1)), 1),
    ("matrix", dict(d=4, rank=1, m=20, depths=(2, 3), T=30, seeds=(0,)), 2),
    ("dynamics_compare", dict(d=5, k=2, m=500, p=0.0, depths=(2,), alpha=0.1,
                              T=20_000, reach_tol=1e-1, log_stride=50, seeds=(0,)), 2),
])
def test_every_kind_runs(tmp_path, kind, extra, expect):
    base = dict(TINY, d=30, m=20, depths=(1, 2, 3))
    base.update(extra)
    cfg = replace(ExperimentConfig(), name=kind, kind=kind, **base)
    res = run_experiment(cfg, tmp_path / kind, workers=1)
    assert sum(p.suffix == ".csv" for p in res.files) == expect
    assert (tmp_path / kind / "summary.json").exists()
    assert res.summary["config"]["kind"] == kind
    for p in res.files:
        if p.suffix == ".csv":
            assert "," in p.read_text().splitlines()[0]


def test_failure_removes_partial_outputs(tmp_path, monkeypatch):
    import robustdln.experiment_cli as ex

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(ex, "_trajectory_task", boom)
    cfg = replace(ExperimentConfig(), name="fail", **TINY)
    with pytest.raises(RuntimeError):
        run_experiment(cfg, tmp_path / "fail", workers=1)
    assert list(tmp_path.iterdir()) == []


def test_invalid_config_raises_structured_error(tmp_path):
    cfg = replace(ExperimentConfig(), p=1.5, k=0)
    with pytest.raises(ConfigError) as exc:
        run_experiment(cfg, tmp_path / "x")
    assert len(exc.value.violations) >= 2


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    assert cli.main(["presets"]) == 0
    assert "overfit_vs_depth" in capsys.readouterr().out
    assert cli.main(["validate", "matrix_depth"]) == 0
    assert cli.main(["validate", "matrix_depth", "--set", "p=1.0"]) == 1
    assert "p:" in capsys.readouterr().err
    assert cli.main(["validate", "no_such_preset"]) == 1
    cfg = tmp_path / "c.ini"
    cfg.write_text(dump_config(replace(ExperimentConfig(), name="c", **TINY)))
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "summary.json").exists()
    monkeypatch.setenv("ROBUSTDLN_WORKERS", "2")
    div = ["run", str(cfg), "--out", str(tmp_path / "div"), "--set", "schedules=constant:50",
           "--set", "alpha=1.0", "--set", "T=5000", "--set", "depths=3"]
    assert cli.main(div) == 2
    summary = json.loads((tmp_path / "div" / "summary.json").read_text())
    assert summary["diverged"] is True


def test_kinds_constant():
    assert set(KINDS) == {"trajectory", "landscape_grid", "flatness_sweep", "deviation_sweep",
                          "matrix", "dynamics_compare"}
    assert np.isfinite(ExperimentConfig().alpha)
