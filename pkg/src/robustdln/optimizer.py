"""Sub-gradient method (SubGM) for the l1 loss of a diagonal linear network."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import Dataset, make_rng
from .loss import DEFAULT_POLICY, SubgradPolicy, leave_one_out_products, subgradient
from .model import LayerStack, balanced_init

TRAJECTORY_COLUMNS = (
    "iteration",
    "train_loss",
    "generalization_error",
    "balancedness_gap",
    "signal_error",
    "residual_norm",
    "step_size",
)

DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class StepSchedule:
    """Step-size policy.

    kind="constant":  eta_t = eta
    kind="geometric": eta_t = eta * decay**t
    kind="piecewise": eta_t = eta of the last (threshold, eta) pair with threshold <= t;
                      the first threshold must be 0.
    """

    kind: str = "constant"
    eta: float = 1e-3
    decay: float | None = None
    pieces: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if self.kind == "constant":
            if not self.eta > 0:
                raise ValueError(f"step size must be positive, got {self.eta}")
        elif self.kind == "geometric":
            if not self.eta > 0:
                raise ValueError(f"initial step size must be positive, got {self.eta}")
            if self.decay is None or not 0 < self.decay < 1:
                raise ValueError(f"geometric decay must lie in (0, 1), got {self.decay}")
        elif self.kind == "piecewise":
            pieces = tuple((int(t), float(e)) for t, e in self.pieces)
            if not pieces or pieces[0][0] != 0:
                raise ValueError("piecewise schedule needs a first threshold of 0")
            ts = [t for t, _ in pieces]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("piecewise thresholds must be strictly increasing")
            if any(not e > 0 for _, e in pieces):
                raise ValueError("piecewise step sizes must be positive")
            object.__setattr__(self, "pieces", pieces)
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, eta: float) -> "StepSchedule":
        return cls("constant", eta)

    @classmethod
    def geometric(cls, eta0: float, decay: float) -> "StepSchedule":
        return cls("geometric", eta0, decay=decay)

    @classmethod
    def halving_every(cls, eta0: float, period: int) -> "StepSchedule":
        """Geometric schedule whose step halves every ``period`` iterations."""
        return cls.geometric(eta0, 0.5 ** (1.0 / period))

    @classmethod
    def piecewise(cls, pieces) -> "StepSchedule":
        return cls("piecewise", float(pieces[0][1]), pieces=tuple(pieces))

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.eta
        if self.kind == "geometric":
            return self.eta * self.decay**t
        eta = self.pieces[0][1]
        for thr, e in self.pieces:
            if thr > t:
                break
            eta = e
        return eta


@dataclass
class TrajectoryRecord:
    iterations: np.ndarray
    train_loss: np.ndarray
    generalization_error: np.ndarray
    balancedness_gap: np.ndarray
    signal_error: np.ndarray
    residual_norm: np.ndarray
    step_size: np.ndarray
    log_stride: int
    total_iterations: int
    final: object = None
    diverged: bool = False
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iterations)

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def min_error(self) -> float:
        return float(np.min(self.generalization_error))

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJECTORY_COLUMNS)
            for row in zip(*(getattr(self, c) if c != "iteration" else self.iterations
                             for c in TRAJECTORY_COLUMNS)):
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
        tmp.replace(path)
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps({
            "config": self.config,
            "log_stride": self.log_stride,
            "total_iterations": self.total_iterations,
            "diverged": self.diverged,
        }, indent=2, default=_jsonable))
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrajectoryRecord":
        path = Path(path)
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls(
            iterations=arr[:, 0].astype(np.int64),
            **{c: arr[:, i] for i, c in enumerate(TRAJECTORY_COLUMNS) if i > 0},
            log_stride=meta["log_stride"],
            total_iterations=meta["total_iterations"],
            diverged=meta["diverged"],
            config=meta["config"],
        )


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class TrajectoryLogger:
    """Accumulates metric rows; shared by the vector and matrix runners."""

    def __init__(self):
        self.rows = {c: [] for c in TRAJECTORY_COLUMNS}

    def log(self, **values):
        for c in TRAJECTORY_COLUMNS:
            self.rows[c].append(values[c])

    def record(self, **kwargs) -> TrajectoryRecord:
        r = self.rows
        return TrajectoryRecord(
            iterations=np.asarray(r["iteration"], dtype=np.int64),
            **{c: np.asarray(r[c], dtype=np.float64) for c in TRAJECTORY_COLUMNS[1:]},
            **kwargs,
        )


def default_log_stride(T: int) -> int:
    return max(1, T // 5000)


def subgm_step(stack: LayerStack, ds: Dataset, eta: float,
               policy: SubgradPolicy = DEFAULT_POLICY) -> LayerStack:
    """One simultaneous SubGM update: every block uses the pre-step stack."""
    if not eta > 0:
        raise ValueError(f"step size must be positive, got {eta}")
    g = subgradient(stack, ds, policy)
    return LayerStack(tuple(w - eta * b for w, b in zip(stack.layers, g.blocks)))


def gaussian_init(d: int, N: int, alpha: float, rng) -> LayerStack:
    scale = alpha ** (1.0 / N) / math.sqrt(d)
    return LayerStack(tuple(scale * rng.standard_normal(d) for _ in range(N)))


def _metrics(layers, X, y, theta, mask, t, eta):
    prod = layers[0].copy()
    for w in layers[1:]:
        prod *= w
    loss = float(np.mean(np.abs(X @ prod - y)))
    err = float(np.linalg.norm(prod - theta))
    if len(layers) > 1:
        arr = np.stack(layers)
        gap = float(np.max(arr.max(axis=0) - arr.min(axis=0)))
    else:
        gap = float("nan")
    return dict(
        iteration=t,
        train_loss=loss,
        generalization_error=err,
        balancedness_gap=gap,
        signal_error=float(np.linalg.norm(prod[mask] - theta[mask])),
        residual_norm=float(np.linalg.norm(prod[~mask])),
        step_size=eta,
    )


def run_subgm(ds: Dataset, N: int, alpha: float, schedule: StepSchedule, T: int,
              log_stride: int | None = None, policy: SubgradPolicy = DEFAULT_POLICY,
              init: str = "balanced", init_seed: int = 0,
              stop_below: float | None = None) -> TrajectoryRecord:
    """Run T SubGM iterations from a small initialization.

    Metrics are logged at t = 0, every ``log_stride`` iterations and at t = T.
    ``stop_below`` ends the run at the first logged iteration whose
    generalization error is at or below that value.
    """
    if T < 1:
        raise ValueError(f"need T >= 1, got {T}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    stride = default_log_stride(T) if log_stride is None else int(log_stride)
    if stride < 1:
        raise ValueError("log_stride must be >= 1")
    if init == "balanced":
        stack = balanced_init(ds.d, N, alpha)
    elif init == "gaussian":
        stack = gaussian_init(ds.d, N, alpha, make_rng(init_seed))
    else:
        raise ValueError(f"unknown init {init!r}")

    X = np.ascontiguousarray(ds.design)
    XT = np.ascontiguousarray(ds.design.T)
    y = ds.responses
    theta = ds.theta_star
    m = ds.m
    mask = theta != 0
    limit = DIVERGENCE_FACTOR * max(float(np.linalg.norm(theta)), 1.0)
    layers = [w.copy() for w in stack.layers]
    log = TrajectoryLogger()
    diverged = False

    t = 0
    while True:
        eta = schedule(t)
        if t % stride == 0 or t == T:
            row = _metrics(layers, X, y, theta, mask, t, eta)
            log.log(**row)
            err = row["generalization_error"]
            if not np.isfinite(err) or not np.isfinite(row["train_loss"]) or err > limit:
                diverged = True
                break
            if stop_below is not None and err <= stop_below:
                break
        if t == T:
            break
        prod = layers[0].copy()
        for w in layers[1:]:
            prod *= w
        s = policy.sign(X @ prod - y)
        q = XT @ s
        q *= eta / m
        blocks = leave_one_out_products(layers)
        for w, b in zip(layers, blocks):
            w -= q * b
        t += 1

    config = dict(N=N, alpha=alpha, schedule=asdict(schedule), T=T, log_stride=stride,
                  sign_at_zero=policy.sign_at_zero, init=init, init_seed=init_seed,
                  seed=ds.seed, m=ds.m, d=ds.d, k=ds.k, noise_spec=asdict(ds.spec))
    return log.record(log_stride=stride, total_iterations=t,
                      final=LayerStack(tuple(layers)), diverged=diverged, config=config)


class EscapeWindow(NamedTuple):
    t_enter: int | None
    t_exit: int | None
    censored: bool  # True when the trajectory never left; t_exit is then its last iteration

    @property
    def length(self) -> int | None:
        if self.t_enter is None:
            return None
        return self.t_exit - self.t_enter


def escape_time(traj: TrajectoryRecord, tol: float) -> EscapeWindow:
    """First logged entry into error <= tol and the first later exit above 2*tol."""
    err = np.asarray(traj.generalization_error)
    its = np.asarray(traj.iterations)
    if err.size == 0:
        raise ValueError("empty trajectory")
    hit = np.flatnonzero(err <= tol)
    if hit.size == 0:
        return EscapeWindow(None, None, False)
    i0 = int(hit[0])
    out = np.flatnonzero(err[i0 + 1:] > 2 * tol)
    if out.size == 0:
        return EscapeWindow(int(its[i0]), int(its[-1]), True)
    return EscapeWindow(int(its[i0]), int(its[i0 + 1 + out[0]]), False)
