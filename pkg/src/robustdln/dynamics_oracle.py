"""Population-limit SubGM dynamics.

In the large-sample limit the sub-gradient of the l1 loss is a positive
multiple of the normalized population direction (theta* - prod w)/||.||.
These simulators run that idealized update, optionally with a bounded
per-coordinate deviation delta_i redrawn every iteration, and are used to
cross-check empirical SubGM runs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import make_rng
from .loss import leave_one_out_products
from .model import LayerStack, balanced_init
from .optimizer import TrajectoryLogger, TrajectoryRecord, default_log_stride


class AtTruth(Exception):
    """The product equals theta*; the normalized direction is undefined."""


@dataclass
class PopulationState:
    layers: tuple[np.ndarray, ...]
    theta_star: np.ndarray
    eta: float
    delta: float = 0.0
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if self.delta > 0 and self.rng is None:
            self.rng = make_rng(0)

    @property
    def stack(self) -> LayerStack:
        return LayerStack(self.layers)


def _direction(prod, theta):
    diff = theta - prod
    nrm = np.linalg.norm(diff)
    if nrm == 0:
        raise AtTruth("product equals theta*")
    return diff / nrm


def _deviation(state: PopulationState, d: int) -> np.ndarray:
    if state.delta == 0:
        return np.zeros(d)
    return state.rng.uniform(-state.delta, state.delta, d)


def population_step_2layer(state: PopulationState) -> PopulationState:
    u, v = state.layers
    g = _direction(u * v, state.theta_star)
    dev = _deviation(state, u.size)
    u_new = u + state.eta * g * v + state.eta * dev * v
    v_new = v + state.eta * g * u + state.eta * dev * u
    return replace(state, layers=(u_new, v_new))


def population_step_nlayer(state: PopulationState) -> PopulationState:
    layers = state.layers
    prod = layers[0].copy()
    for w in layers[1:]:
        prod *= w
    g = _direction(prod, state.theta_star)
    dev = _deviation(state, prod.size)
    others = leave_one_out_products(layers)
    new = tuple(w + state.eta * g * o + state.eta * dev * o for w, o in zip(layers, others))
    return replace(state, layers=new)


def run_population(theta_star: np.ndarray, N: int, alpha: float, eta: float, T: int,
                   log_stride: int | None = None, delta: float = 0.0,
                   seed: int = 0) -> TrajectoryRecord:
    """Population SubGM from balanced_init, logged on the same grid as run_subgm.

    ``train_loss`` holds the expected loss ||prod w - theta*||.  The run
    stops early if the product hits theta* exactly.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    stride = default_log_stride(T) if log_stride is None else int(log_stride)
    state = PopulationState(balanced_init(theta_star.size, N, alpha).layers, theta_star,
                            eta, delta, make_rng(seed) if delta > 0 else None)
    step = population_step_2layer if N == 2 else population_step_nlayer
    mask = theta_star != 0
    log = TrajectoryLogger()
    t = 0
    while True:
        if t % stride == 0 or t == T:
            prod = state.stack.layers[0].copy()
            for w in state.layers[1:]:
                prod *= w
            err = float(np.linalg.norm(prod - theta_star))
            arr = np.stack(state.layers)
            log.log(
                iteration=t,
                train_loss=err,
                generalization_error=err,
                balancedness_gap=float(np.max(arr.max(0) - arr.min(0))) if N > 1 else float("nan"),
                signal_error=float(np.linalg.norm(prod[mask] - theta_star[mask])),
                residual_norm=float(np.linalg.norm(prod[~mask])),
                step_size=eta,
            )
        if t == T:
            break
        try:
            state = step(state)
        except AtTruth:
            break
        t += 1
    config = dict(N=N, alpha=alpha, eta=eta, T=T, log_stride=stride, delta=delta, seed=seed,
                  population=True)
    return log.record(log_stride=stride, total_iterations=t, final=state.stack, config=config)


def compare_to_empirical(pop_traj: TrajectoryRecord, emp_traj: TrajectoryRecord,
                         metric: str = "generalization_error", upto: int | None = None) -> float:
    """max_t |pop(t) - emp(t)| / (|pop(t)| + 1e-12) over common logged iterations <= upto."""
    if metric not in ("generalization_error", "balancedness_gap"):
        raise ValueError(f"unsupported metric {metric!r}")
    n = min(len(pop_traj), len(emp_traj))
    if not np.array_equal(pop_traj.iterations[:n], emp_traj.iterations[:n]):
        raise ValueError("trajectories are not logged on the same iteration grid")
    its = pop_traj.iterations[:n]
    keep = np.ones(n, dtype=bool) if upto is None else its <= upto
    a = np.asarray(pop_traj.column(metric))[:n][keep]
    b = np.asarray(emp_traj.column(metric))[:n][keep]
    if a.size == 0:
        raise ValueError("no common logged iterations")
    return float(np.max(np.abs(a - b) / (np.abs(a) + 1e-12)))
