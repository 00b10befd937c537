"""Deep low-rank matrix recovery with l1 loss: X ~ W_1 W_2 ... W_N."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import NoiseSpec, generate_noise, split_streams
from .loss import DEFAULT_POLICY, SubgradPolicy
from .optimizer import (
    DIVERGENCE_FACTOR,
    StepSchedule,
    TrajectoryLogger,
    TrajectoryRecord,
    default_log_stride,
)

INIT_CONVENTIONS = ("per_factor", "end_to_end")


@dataclass(frozen=True)
class MatrixStack:
    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        fs = tuple(np.asarray(W, dtype=np.float64) for W in self.factors)
        if len(fs) < 2:
            raise ValueError("a deep factorization needs N >= 2 factors")
        d = fs[0].shape[0]
        for i, W in enumerate(fs):
            if W.shape != (d, d):
                raise ValueError(f"factor {i} has shape {W.shape}, expected ({d}, {d})")
        object.__setattr__(self, "factors", fs)

    @property
    def depth(self) -> int:
        return len(self.factors)

    @property
    def dim(self) -> int:
        return self.factors[0].shape[0]

    def product(self) -> np.ndarray:
        return _chain(self.factors, self.dim)


@dataclass
class MatrixDataset:
    measurements: np.ndarray  # (m, d, d)
    responses: np.ndarray
    truth: np.ndarray
    noise: np.ndarray
    noise_support: np.ndarray
    rank: int
    seed: int | None = None
    spec: NoiseSpec = field(default_factory=NoiseSpec)

    @property
    def m(self) -> int:
        return self.measurements.shape[0]

    @property
    def d(self) -> int:
        return self.measurements.shape[1]

    @property
    def flat_measurements(self) -> np.ndarray:
        return self.measurements.reshape(self.m, -1)


def _chain(mats, d) -> np.ndarray:
    out = np.eye(d)
    for W in mats:
        out = out @ W
    return out


def generate_matrix_problem(d: int, r: int, m: int, spec: NoiseSpec, seed: int) -> MatrixDataset:
    """Rank-r truth G1 G2^T / sqrt(r) observed through m Gaussian measurements."""
    if d < 1 or m < 1 or not 1 <= r <= d:
        raise ValueError(f"need d, m >= 1 and 1 <= r <= d, got d={d}, r={r}, m={m}")
    r_truth, r_meas, r_support, r_values = split_streams(seed, 4)
    G1 = r_truth.standard_normal((d, r))
    G2 = r_truth.standard_normal((d, r))
    truth = G1 @ G2.T / np.sqrt(r)
    A = r_meas.standard_normal((m, d, d))
    noise, support = generate_noise(m, spec, r_support, value_rng=r_values)
    y = A.reshape(m, -1) @ truth.ravel() + noise
    return MatrixDataset(A, y, truth, noise, support, r, seed=seed, spec=spec)


def _check(stack: MatrixStack, mds: MatrixDataset) -> None:
    if stack.dim != mds.d:
        raise ValueError(f"factor size {stack.dim} != measurement size {mds.d}")


def matrix_residuals(stack: MatrixStack, mds: MatrixDataset) -> np.ndarray:
    _check(stack, mds)
    return mds.flat_measurements @ stack.product().ravel() - mds.responses


def matrix_l1_loss(stack: MatrixStack, mds: MatrixDataset) -> float:
    return float(np.mean(np.abs(matrix_residuals(stack, mds))))


def _factor_blocks(factors, G) -> list[np.ndarray]:
    """Gradient of <G, W_1 ... W_N> w.r.t. each factor, via prefix/suffix products."""
    N = len(factors)
    d = factors[0].shape[0]
    prefix = [np.eye(d)]
    for W in factors[:-1]:
        prefix.append(prefix[-1] @ W)
    suffix = [np.eye(d)]
    for W in reversed(factors[1:]):
        suffix.append(W @ suffix[-1])
    suffix.reverse()
    return [prefix[i].T @ G @ suffix[i].T for i in range(N)]


def matrix_subgradient(stack: MatrixStack, mds: MatrixDataset,
                       policy: SubgradPolicy = DEFAULT_POLICY) -> tuple[np.ndarray, ...]:
    s = policy.sign(matrix_residuals(stack, mds))
    G = (s @ mds.flat_measurements).reshape(mds.d, mds.d) / mds.m
    return tuple(_factor_blocks(stack.factors, G))


def matrix_gaussian_init(d: int, N: int, alpha: float, rng, convention: str = "per_factor") -> MatrixStack:
    """Factors with i.i.d. N(0, s^2 / d) entries.

    ``per_factor``: s = alpha, so each factor has operator norm about 2 alpha.
    ``end_to_end``: s = alpha**(1/N), so the end-to-end product is of order alpha.
    """
    if convention == "per_factor":
        s = alpha
    elif convention == "end_to_end":
        s = alpha ** (1.0 / N)
    else:
        raise ValueError(f"unknown init convention {convention!r}; choose from {INIT_CONVENTIONS}")
    return MatrixStack(tuple(s / np.sqrt(d) * rng.standard_normal((d, d)) for _ in range(N)))


def _subspace_projectors(truth: np.ndarray, r: int):
    U, _, Vt = np.linalg.svd(truth)
    return U[:, :r] @ U[:, :r].T, Vt[:r].T @ Vt[:r]


def _matrix_metrics(factors, A, y, truth, PU, PV, t, eta):
    P = _chain(factors, truth.shape[0])
    diff = P - truth
    gaps = [np.linalg.norm(factors[i].T @ factors[i] - factors[i + 1] @ factors[i + 1].T)
            for i in range(len(factors) - 1)]
    eye = np.eye(truth.shape[0])
    return dict(
        iteration=t,
        train_loss=float(np.mean(np.abs(A @ P.ravel() - y))),
        generalization_error=float(np.linalg.norm(diff)),
        balancedness_gap=float(max(gaps)),
        signal_error=float(np.linalg.norm(PU @ diff @ PV)),
        residual_norm=float(np.linalg.norm((eye - PU) @ P @ (eye - PV))),
        step_size=eta,
    )


def run_subgm_matrix(mds: MatrixDataset, N: int, alpha: float, schedule: StepSchedule, T: int,
                     seed: int = 0, log_stride: int | None = None,
                     policy: SubgradPolicy = DEFAULT_POLICY,
                     init_convention: str = "end_to_end") -> TrajectoryRecord:
    """SubGM on the deep factorization from a small Gaussian initialization.

    Logged columns mirror the vector runner; for matrices ``balancedness_gap``
    is max_i ||W_i^T W_i - W_{i+1} W_{i+1}^T||_F, ``signal_error`` is the error
    inside the row/column spaces of the truth and ``residual_norm`` the part
    of the estimate outside both.
    """
    if T < 1:
        raise ValueError(f"need T >= 1, got {T}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    stride = default_log_stride(T) if log_stride is None else int(log_stride)
    (rng,) = split_streams(seed, 1)
    factors = list(matrix_gaussian_init(mds.d, N, alpha, rng, init_convention).factors)
    A = np.ascontiguousarray(mds.flat_measurements)
    y = mds.responses
    d, m = mds.d, mds.m
    PU, PV = _subspace_projectors(mds.truth, mds.rank)
    limit = DIVERGENCE_FACTOR * max(float(np.linalg.norm(mds.truth)), 1.0)
    log = TrajectoryLogger()
    diverged = False

    t = 0
    while True:
        eta = schedule(t)
        if t % stride == 0 or t == T:
            row = _matrix_metrics(factors, A, y, mds.truth, PU, PV, t, eta)
            log.log(**row)
            err = row["generalization_error"]
            if not np.isfinite(err) or err > limit:
                diverged = True
                break
        if t == T:
            break
        P = _chain(factors, d)
        s = policy.sign(A @ P.ravel() - y)
        G = (s @ A).reshape(d, d) * (eta / m)
        blocks = _factor_blocks(factors, G)
        for i, B in enumerate(blocks):
            factors[i] = factors[i] - B
        t += 1

    config = dict(N=N, alpha=alpha, schedule=asdict(schedule), T=T, log_stride=stride,
                  init_seed=seed, init_convention=init_convention, seed=mds.seed,
                  m=m, d=d, rank=mds.rank, noise_spec=asdict(mds.spec))
    return log.record(log_stride=stride, total_iterations=t,
                      final=MatrixStack(tuple(factors)), diverged=diverged, config=config)
