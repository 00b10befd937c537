"""Config-driven experiment runner.

An experiment is fully described by an :class:`ExperimentConfig` (flat
key=value INI file, section ``[experiment]``).  ``run_experiment`` writes one
CSV per trajectory/grid/sweep plus ``summary.json`` into the output
directory.  Everything is staged in a sibling temp directory and moved into
place at the end, so a failed run leaves no partial outputs behind.

Command line: ``robustdln run|validate|presets``; exit codes 0 success,
1 configuration error, 2 a run diverged.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import shutil
import sys
import tempfile
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .data import NOISE_DISTS, NoiseSpec, generate_dataset
from .dynamics_oracle import compare_to_empirical, run_population
from .landscape import (
    ProbeMethod,
    descent_direction,
    flatness_exponent,
    landscape_grid,
    negative_curvature_direction,
    probe_descent,
    save_grid,
    save_probe_reports,
    radius_bound,
)
from .loss import direction_preserving_deviation, l1_loss, phi_factor
from .matrix_recovery import INIT_CONVENTIONS, generate_matrix_problem, run_subgm_matrix
from .model import LayerStack, balanced_solution
from .optimizer import StepSchedule, escape_time, run_subgm

SCHEMA_VERSION = 1
KINDS = ("trajectory", "landscape_grid", "flatness_sweep", "deviation_sweep", "matrix",
         "dynamics_compare")
WORKERS_ENV = "ROBUSTDLN_WORKERS"


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of every experiment kind; unused keys are ignored by a kind."""

    name: str = "experiment"
    kind: str = "trajectory"
    out_dir: str = "runs"
    # data
    d: int = 500
    k: int = 5
    m: int = 300
    theta_min: float = 1.0
    theta_max: float = 2.0
    p: float = 0.1
    noise: str = "gaussian"
    noise_scale: float = 10.0
    seeds: tuple[int, ...] = (0,)
    # model / optimizer
    depths: tuple[int, ...] = (1, 2, 3)
    alpha: float = 1e-6
    init: str = "balanced"
    schedules: tuple[str, ...] = ("constant:1e-3",)
    T: int = 1000
    log_stride: int = 0  # 0 -> max(1, T // 5000)
    escape_tol_factor: float = 2.0
    reach_tol: float = 0.0  # >0: record first iteration with error <= reach_tol
    stop_at_reach: bool = False
    # landscape
    gammas: tuple[float, ...] = (1e-4, 2.5e-4, 6.3e-4, 1.6e-3, 4e-3, 1e-2)
    probe_method: str = "linear_program"
    probe_budget: int = 0
    eps_smooth: float = 1e-7
    grid_span: float = 1e-2
    grid_points: int = 21
    # deviation sweep
    m_list: tuple[int, ...] = (2000, 8000)
    # matrix
    rank: int = 3
    init_convention: str = "end_to_end"

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(self.p, self.noise, self.noise_scale)

    def parsed_schedules(self) -> list[StepSchedule]:
        return [parse_schedule(s) for s in self.schedules]

    def probe(self) -> ProbeMethod:
        if self.probe_method == "linear_program":
            return ProbeMethod.linear_program()
        if self.probe_method == "random_sampling":
            return ProbeMethod.random_sampling(self.probe_budget or 2000)
        return ProbeMethod.projected_descent(self.probe_budget or 500)


def parse_schedule(text: str) -> StepSchedule:
    """constant:ETA | geometric:ETA0:DECAY | halving:ETA0:PERIOD | piecewise:T0=E0;T1=E1;..."""
    kind, _, rest = text.strip().partition(":")
    parts = rest.split(":")
    try:
        if kind == "constant":
            return StepSchedule.constant(float(parts[0]))
        if kind == "geometric":
            return StepSchedule.geometric(float(parts[0]), float(parts[1]))
        if kind == "halving":
            return StepSchedule.halving_every(float(parts[0]), int(float(parts[1])))
        if kind == "piecewise":
            pieces = []
            for item in rest.split(";"):
                t, e = item.split("=")
                pieces.append((int(float(t)), float(e)))
            return StepSchedule.piecewise(pieces)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"bad schedule {text!r}: {exc}") from None
    raise ValueError(f"unknown schedule kind in {text!r}")


def _schedule_label(text: str) -> str:
    return text.split(":")[0]


# ---- config file I/O ----

def _field_types() -> dict[str, object]:
    hints = typing.get_type_hints(ExperimentConfig)
    return {f.name: hints[f.name] for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str, tp) -> object:
    raw = raw.strip()
    origin = typing.get_origin(tp)
    if origin is tuple:
        (inner, _) = typing.get_args(tp)
        if inner is str:
            items = [s.strip() for s in raw.split(",") if s.strip()]
        else:
            items = [inner(float(s)) if inner is int else inner(s)
                     for s in raw.replace(" ", "").split(",") if s]
        return tuple(items)
    if tp is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if tp is int:
        val = float(raw)
        if val != int(val):
            raise ValueError(f"{name}: expected an integer, got {raw!r}")
        return int(val)
    if tp is float:
        return float(raw)
    return raw


def config_from_mapping(values: dict[str, str]) -> ExperimentConfig:
    types = _field_types()
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError([f"unknown key {k!r}" for k in unknown])
    kwargs, errors = {}, []
    for key, raw in values.items():
        try:
            kwargs[key] = _coerce(key, raw, types[key])
        except ValueError as exc:
            errors.append(f"{key}: {exc}")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read an INI file with an ``[experiment]`` section; ``overrides`` are key=value."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (T)
    text = Path(path).read_text()
    parser.read_string(text)
    if not parser.has_section("experiment"):
        raise ConfigError(["missing [experiment] section"])
    values = dict(parser.items("experiment"))
    for item in overrides or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError([f"override {item!r} is not key=value"])
        values[key.strip()] = val
    return config_from_mapping(values)


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(float(value))
    return str(value).lower() if isinstance(value, bool) else str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]"]
    for f in fields(cfg):
        lines.append(f"{f.name} = {_format(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def preset_names() -> list[str]:
    files = resources.files("robustdln").joinpath("presets")
    return sorted(p.name[:-4] for p in files.iterdir() if p.name.endswith(".ini"))


def preset_path(name: str) -> Path:
    path = Path(str(resources.files("robustdln").joinpath("presets", f"{name}.ini")))
    if not path.exists():
        raise ConfigError([f"no preset named {name!r}; available: {', '.join(preset_names())}"])
    return path


def resolve_config(ref: str, overrides: list[str] | None = None) -> ExperimentConfig:
    """A file path, or the name of a shipped preset."""
    path = Path(ref)
    if not path.exists():
        path = preset_path(ref)
    return load_config(path, overrides)


# ---- validation ----

class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class Validation:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_config(cfg: ExperimentConfig) -> Validation:
    """Pure check; returns every violated field rather than stopping at the first."""
    v, w = [], []
    if cfg.kind not in KINDS:
        v.append(f"kind: {cfg.kind!r} not in {KINDS}")
    if not cfg.name or "/" in cfg.name:
        v.append("name: must be a non-empty file-name-safe string")
    for key in ("d", "m", "T", "grid_points"):
        if getattr(cfg, key) < 1:
            v.append(f"{key}: must be >= 1")
    if not 1 <= cfg.k <= cfg.d:
        v.append(f"k: need 1 <= k <= d, got k={cfg.k}, d={cfg.d}")
    if not 0 < cfg.theta_min <= cfg.theta_max:
        v.append("theta_min/theta_max: need 0 < theta_min <= theta_max")
    if not 0 <= cfg.p < 1:
        v.append(f"p: corruption probability must lie in [0, 1), got {cfg.p}")
    if cfg.noise not in NOISE_DISTS:
        v.append(f"noise: {cfg.noise!r} not in {NOISE_DISTS}")
    if not cfg.noise_scale > 0:
        v.append("noise_scale: must be > 0")
    if not cfg.seeds:
        v.append("seeds: need at least one seed")
    if any(s < 0 for s in cfg.seeds):
        v.append("seeds: must be non-negative")
    if not cfg.depths or any(n < 1 for n in cfg.depths):
        v.append("depths: need at least one depth, each >= 1")
    if not cfg.alpha > 0:
        v.append("alpha: must be > 0")
    if cfg.init not in ("balanced", "gaussian"):
        v.append(f"init: {cfg.init!r} not in (balanced, gaussian)")
    if not cfg.schedules:
        v.append("schedules: need at least one schedule")
    for s in cfg.schedules:
        try:
            parse_schedule(s)
        except ValueError as exc:
            v.append(f"schedules: {exc}")
    if cfg.log_stride < 0:
        v.append("log_stride: must be >= 0")
    if not cfg.escape_tol_factor >= 1:
        v.append("escape_tol_factor: must be >= 1")
    if cfg.reach_tol < 0:
        v.append("reach_tol: must be >= 0")
    if cfg.stop_at_reach and not cfg.reach_tol > 0:
        v.append("stop_at_reach: needs reach_tol > 0")
    if cfg.probe_method not in ("linear_program", "random_sampling", "projected_descent"):
        v.append(f"probe_method: unknown {cfg.probe_method!r}")
    if cfg.probe_budget < 0:
        v.append("probe_budget: must be >= 0")
    if not cfg.eps_smooth > 0:
        v.append("eps_smooth: must be > 0")
    if not cfg.grid_span > 0:
        v.append("grid_span: must be > 0")
    if cfg.kind in ("landscape_grid", "flatness_sweep"):
        if not cfg.gammas or any(not g > 0 for g in cfg.gammas):
            v.append("gammas: need positive radii")
        elif cfg.kind == "flatness_sweep":
            gs = sorted(cfg.gammas)
            if len(gs) < 4 or gs[-1] / gs[0] < 10:
                v.append("gammas: need >= 4 radii spanning >= 1 decade")
        if cfg.gammas and cfg.noise in NOISE_DISTS and cfg.noise_scale > 0 and cfg.d >= 1:
            t0, _ = NoiseSpec(0.0, cfg.noise, cfg.noise_scale).tail_constants
            bound = min(t0 / np.sqrt(cfg.d), 1.0)
            if max(cfg.gammas) > bound:
                w.append(f"gammas: max radius {max(cfg.gammas)} exceeds min(t0/sqrt(d), 1) = {bound:.4g}")
    if cfg.kind == "deviation_sweep" and (len(cfg.m_list) < 2 or any(x < 1 for x in cfg.m_list)):
        v.append("m_list: need >= 2 positive sample sizes")
    if cfg.kind == "matrix":
        if not 1 <= cfg.rank <= cfg.d:
            v.append("rank: need 1 <= rank <= d")
        if any(n < 2 for n in cfg.depths):
            v.append("depths: matrix factorizations need N >= 2")
        if cfg.init_convention not in INIT_CONVENTIONS:
            v.append(f"init_convention: {cfg.init_convention!r} not in {INIT_CONVENTIONS}")
    if cfg.kind == "dynamics_compare" and not cfg.reach_tol > 0:
        v.append("reach_tol: dynamics_compare needs the error threshold reach_tol > 0")
    return Validation(v, w)


# ---- runners (module-level so they pickle into worker processes) ----

def _dataset(cfg: ExperimentConfig, seed: int, m: int | None = None):
    return generate_dataset(cfg.d, cfg.k, cfg.m if m is None else m, cfg.theta_min,
                            cfg.theta_max, cfg.noise_spec(), seed)


def _first_reach(traj, tol: float) -> int | None:
    hit = np.flatnonzero(traj.generalization_error <= tol)
    return int(traj.iterations[hit[0]]) if hit.size else None


def _trajectory_task(cfg: ExperimentConfig, seed: int, N: int, sched_idx: int, stage: str):
    ds = _dataset(cfg, seed)
    sched = cfg.parsed_schedules()[sched_idx]
    stop = cfg.reach_tol if cfg.stop_at_reach else None
    traj = run_subgm(ds, N, cfg.alpha, sched, cfg.T, log_stride=cfg.log_stride or None,
                     init=cfg.init, init_seed=seed, stop_below=stop)
    label = _schedule_label(cfg.schedules[sched_idx])
    fname = f"traj_N{N}_seed{seed}_{sched_idx}{label}.csv"
    traj.to_csv(Path(stage) / fname)
    min_err = traj.min_error()
    win = escape_time(traj, cfg.escape_tol_factor * min_err)
    row = dict(
        file=fname, seed=seed, N=N, schedule=cfg.schedules[sched_idx],
        iterations_run=traj.total_iterations, diverged=traj.diverged,
        final_error=float(traj.generalization_error[-1]), min_error=min_err,
        argmin_iteration=int(traj.iterations[int(np.argmin(traj.generalization_error))]),
        final_train_loss=float(traj.train_loss[-1]),
        escape=dict(tol=cfg.escape_tol_factor * min_err, t_enter=win.t_enter,
                    t_exit=win.t_exit, censored=win.censored, length=win.length),
    )
    if cfg.reach_tol > 0:
        row["reach_iteration"] = _first_reach(traj, cfg.reach_tol)
    return row


def _landscape_task(cfg: ExperimentConfig, seed: int, N: int, stage: str):
    ds = _dataset(cfg, seed)
    star = balanced_solution(ds.theta_star, N)
    gamma = float(cfg.gammas[0])
    probe = probe_descent(star, ds, gamma, cfg.probe(), seed=seed)
    curv = negative_curvature_direction(star, ds, cfg.eps_smooth, seed=seed)
    h = curv.direction
    if probe.min_delta_loss < 0:
        dvec = descent_direction(probe)
        # keep the two axes distinct: orthogonalize the curvature axis
        hv = h.flat() - (h.flat() @ dvec.flat()) * dvec.flat()
        if np.linalg.norm(hv) > 1e-8:
            h = LayerStack.from_flat(hv, N)
    else:
        dvec = h
        rng = np.random.default_rng(seed)
        hv = rng.standard_normal(h.flat().size)
        hv -= (hv @ dvec.flat()) * dvec.flat()
        h = LayerStack.from_flat(hv, N)
    ticks = np.linspace(-cfg.grid_span, cfg.grid_span, cfg.grid_points)
    grid = landscape_grid(star, ds, dvec, h, ticks, ticks)
    fname = f"grid_N{N}_seed{seed}.csv"
    save_grid(Path(stage) / fname, ticks, ticks, grid)
    center = l1_loss(star, ds)
    return dict(file=fname, seed=seed, N=N, gamma=gamma, probe_method=probe.method,
                min_delta_loss=probe.min_delta_loss, lambda_min=curv.lambda_min_estimate,
                center_loss=center, grid_min=float(grid.min()),
                grid_min_minus_center=float(grid.min() - center))


def _flatness_task(cfg: ExperimentConfig, seed: int, N: int, stage: str):
    ds = _dataset(cfg, seed)
    star = balanced_solution(ds.theta_star, N)
    fit = flatness_exponent(star, ds, cfg.gammas, cfg.probe(), seed=seed)
    fname = f"flatness_N{N}_seed{seed}.csv"
    save_probe_reports(Path(stage) / fname, fit.reports)
    return dict(file=fname, seed=seed, N=N, slope=fit.slope, intercept=fit.intercept,
                excluded_gammas=fit.excluded,
                min_delta_loss=[r.min_delta_loss for r in fit.reports])


def _deviation_task(cfg: ExperimentConfig, seed: int, m: int):
    ds = _dataset(cfg, seed, m)
    dev = direction_preserving_deviation(ds.theta_star, ds)
    phi = phi_factor(cfg.p, cfg.noise_spec(), float(np.linalg.norm(ds.theta_star))).value
    return dict(seed=seed, m=m, deviation=dev, phi=phi)


def _matrix_task(cfg: ExperimentConfig, seed: int, N: int, sched_idx: int, stage: str):
    mds = generate_matrix_problem(cfg.d, cfg.rank, cfg.m, cfg.noise_spec(), seed)
    sched = cfg.parsed_schedules()[sched_idx]
    traj = run_subgm_matrix(mds, N, cfg.alpha, sched, cfg.T, seed=seed,
                            log_stride=cfg.log_stride or None,
                            init_convention=cfg.init_convention)
    fname = f"matrix_N{N}_seed{seed}_{sched_idx}{_schedule_label(cfg.schedules[sched_idx])}.csv"
    traj.to_csv(Path(stage) / fname)
    return dict(file=fname, seed=seed, N=N, schedule=cfg.schedules[sched_idx],
                diverged=traj.diverged, truth_norm=float(np.linalg.norm(mds.truth)),
                final_error=float(traj.generalization_error[-1]), min_error=traj.min_error(),
                final_train_loss=float(traj.train_loss[-1]))


def dynamics_pair(cfg: ExperimentConfig, seed: int, N: int, sched_idx: int = 0):
    """Empirical run stopped at reach_tol and the population run on the same grid."""
    ds = _dataset(cfg, seed)
    sched = cfg.parsed_schedules()[sched_idx]
    if sched.kind != "constant":
        raise ValueError("dynamics_compare needs a constant schedule")
    stride = cfg.log_stride or 100
    emp = run_subgm(ds, N, cfg.alpha, sched, cfg.T, log_stride=stride,
                    stop_below=cfg.reach_tol)
    z0 = float(np.linalg.norm(ds.theta_star))
    phi = phi_factor(cfg.p, cfg.noise_spec(), z0).value
    t_stop = int(emp.iterations[-1])
    pop = run_population(ds.theta_star, N, cfg.alpha, phi * sched.eta, t_stop, log_stride=stride)
    return ds, emp, pop, phi


def _dynamics_task(cfg: ExperimentConfig, seed: int, N: int, stage: str):
    _, emp, pop, phi = dynamics_pair(cfg, seed, N)
    t_stop = int(emp.iterations[-1])
    reached = bool(emp.generalization_error[-1] <= cfg.reach_tol)
    gap = compare_to_empirical(pop, emp, "generalization_error", upto=t_stop)
    fe, fp = f"dyn_emp_N{N}_seed{seed}.csv", f"dyn_pop_N{N}_seed{seed}.csv"
    emp.to_csv(Path(stage) / fe)
    pop.to_csv(Path(stage) / fp)
    return dict(files=[fe, fp], seed=seed, N=N, phi=phi, eta_pop=phi * cfg.parsed_schedules()[0].eta,
                reached=reached, t_reach=t_stop if reached else None, gap=gap,
                diverged=emp.diverged)


def _tasks(cfg: ExperimentConfig, stage: str):
    nsched = len(cfg.schedules)
    if cfg.kind == "trajectory":
        return [(_trajectory_task, (cfg, s, N, j, stage))
                for s in cfg.seeds for N in cfg.depths for j in range(nsched)]
    if cfg.kind == "matrix":
        return [(_matrix_task, (cfg, s, N, j, stage))
                for s in cfg.seeds for N in cfg.depths for j in range(nsched)]
    if cfg.kind == "landscape_grid":
        return [(_landscape_task, (cfg, s, N, stage)) for s in cfg.seeds for N in cfg.depths]
    if cfg.kind == "flatness_sweep":
        return [(_flatness_task, (cfg, s, N, stage)) for s in cfg.seeds for N in cfg.depths]
    if cfg.kind == "deviation_sweep":
        return [(_deviation_task, (cfg, s, m)) for m in cfg.m_list for s in cfg.seeds]
    if cfg.kind == "dynamics_compare":
        return [(_dynamics_task, (cfg, s, N, stage)) for s in cfg.seeds for N in cfg.depths]
    raise ConfigError([f"kind: {cfg.kind!r} not in {KINDS}"])


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError([f"{WORKERS_ENV}={raw!r} is not an integer"]) from None
    return max(1, n)


def _call(fn, args):
    return fn(*args)


def _execute(tasks, workers: int) -> list[dict]:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*args) for fn, args in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        futures = [pool.submit(_call, fn, args) for fn, args in tasks]
        return [f.result() for f in futures]


def _median(xs):
    xs = [x for x in xs if x is not None and np.isfinite(x)]
    return float(np.median(xs)) if xs else None


def _headline(cfg: ExperimentConfig, rows: list[dict]) -> dict:
    if cfg.kind in ("trajectory", "matrix"):
        out = {}
        for N in cfg.depths:
            sub = [r for r in rows if r["N"] == N]
            out[f"N{N}"] = dict(median_min_error=_median([r["min_error"] for r in sub]),
                                median_final_error=_median([r["final_error"] for r in sub]))
        return out
    if cfg.kind == "flatness_sweep":
        return {f"N{N}": dict(median_slope=_median([r["slope"] for r in rows if r["N"] == N]))
                for N in cfg.depths}
    if cfg.kind == "landscape_grid":
        return {f"N{N}": dict(
            median_min_delta_loss=_median([r["min_delta_loss"] for r in rows if r["N"] == N]),
            median_lambda_min=_median([r["lambda_min"] for r in rows if r["N"] == N]))
            for N in cfg.depths}
    if cfg.kind == "deviation_sweep":
        means = {str(m): float(np.mean([r["deviation"] for r in rows if r["m"] == m]))
                 for m in cfg.m_list}
        first, last = str(cfg.m_list[0]), str(cfg.m_list[-1])
        return dict(mean_deviation=means, ratio_first_to_last=means[first] / means[last])
    if cfg.kind == "dynamics_compare":
        return dict(max_gap=max(r["gap"] for r in rows),
                    all_reached=all(r["reached"] for r in rows))
    return {}


def _write_deviation_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "seed", "deviation", "phi"])
        for r in rows:
            w.writerow([r["m"], r["seed"], repr(float(r["deviation"])), repr(float(r["phi"]))])


@dataclass
class ExperimentResult:
    out_dir: Path
    files: list[Path]
    summary: dict
    diverged: bool
    warnings: list[str]


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   workers: int | None = None) -> ExperimentResult:
    """Run every (seed, depth, ...) task of ``cfg`` and write CSVs + summary.json."""
    check = validate_config(cfg)
    if not check.ok:
        raise ConfigError(check.violations)
    target = Path(out_dir if out_dir is not None else Path(cfg.out_dir) / cfg.name)
    target.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        rows = _execute(_tasks(cfg, str(stage)), worker_count() if workers is None else workers)
        if cfg.kind == "deviation_sweep":
            _write_deviation_csv(stage / "direction_deviation.csv", rows)
        diverged = any(r.get("diverged", False) for r in rows)
        summary = dict(schema_version=SCHEMA_VERSION, kind=cfg.kind, name=cfg.name,
                       config=asdict(cfg), warnings=check.warnings, diverged=diverged,
                       headline=_headline(cfg, rows), runs=rows)
        (stage / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default))
        if target.exists():
            shutil.rmtree(target)
        stage.replace(target)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    files = sorted(p for p in target.iterdir() if p.is_file())
    return ExperimentResult(target, files, summary, diverged, check.warnings)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)


__all__ = [
    "ExperimentConfig", "ExperimentResult", "ConfigError", "Validation", "KINDS",
    "SCHEMA_VERSION", "parse_schedule", "load_config", "dump_config", "config_from_mapping",
    "resolve_config", "preset_names", "preset_path", "validate_config", "run_experiment",
    "dynamics_pair", "worker_count", "with_overrides", "radius_bound",
]


# ---- command line ----

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robustdln", description="Robust sparse regression experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config (file path or preset name)")
    run.add_argument("config")
    run.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override a config key (repeatable)")
    run.add_argument("--out", default=None, help="output directory (default: out_dir/name)")
    run.add_argument("--workers", type=int, default=None,
                     help=f"worker processes (default: ${WORKERS_ENV} or 1)")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    pre = sub.add_parser("presets", help="list shipped configs")
    pre.add_argument("--show", metavar="NAME", help="print one preset in full")
    return ap


def _report(violations, stream=None) -> None:
    stream = stream or sys.stderr
    print("invalid config:", file=stream)
    for v in violations:
        print(f"  - {v}", file=stream)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)

    if args.command == "presets":
        if args.show:
            try:
                print(preset_path(args.show).read_text(), end="")
            except ConfigError as exc:
                _report(exc.violations)
                return EXIT_CONFIG
            return EXIT_OK
        for name in preset_names():
            print(name)
        return EXIT_OK

    try:
        cfg = resolve_config(args.config, args.overrides)
    except (ConfigError, OSError) as exc:
        _report(getattr(exc, "violations", [str(exc)]))
        return EXIT_CONFIG

    check = validate_config(cfg)
    for w in check.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not check.ok:
        _report(check.violations)
        return EXIT_CONFIG

    if args.command == "validate":
        print(dump_config(cfg), end="")
        print("ok")
        return EXIT_OK

    result = run_experiment(cfg, out_dir=args.out, workers=args.workers)
    print(json.dumps(result.summary["headline"], indent=2))
    print(f"wrote {len(result.files)} files to {result.out_dir}")
    if result.diverged:
        print("one or more runs diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
