"""l1 empirical risk of a diagonal linear network and its sub-differential.

Residuals are always ``prediction - y``; the sub-gradient returned here is an
ascent direction and the optimizer steps ``w <- w - eta * g``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, NoiseSpec, make_rng
from .model import LayerStack, generalization_error, hadamard_product

SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))
DEFAULT_EPS_SMOOTH = 1e-7


@dataclass(frozen=True)
class SubgradPolicy:
    """Value picked from Sign(0) = [-1, 1] when a residual is exactly zero."""

    sign_at_zero: float = 0.0

    def __post_init__(self):
        if not -1.0 <= self.sign_at_zero <= 1.0:
            raise ValueError(f"sign_at_zero must lie in [-1, 1], got {self.sign_at_zero}")

    def sign(self, r: np.ndarray) -> np.ndarray:
        s = np.sign(r)
        if self.sign_at_zero != 0.0:
            s[r == 0] = self.sign_at_zero
        return s


DEFAULT_POLICY = SubgradPolicy()


@dataclass(frozen=True)
class StackGradient:
    blocks: tuple[np.ndarray, ...]

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    def dot(self, direction: LayerStack) -> float:
        return float(sum(g @ v for g, v in zip(self.blocks, direction.layers)))

    def as_stack(self) -> LayerStack:
        return LayerStack(self.blocks)


@dataclass(frozen=True)
class PhiEstimate:
    value: float
    stderr: float


def _check(stack: LayerStack, ds: Dataset) -> None:
    if ds.d != stack.dim:
        raise ValueError(f"dataset dimension {ds.d} != network dimension {stack.dim}")


def residuals(stack: LayerStack, ds: Dataset) -> np.ndarray:
    _check(stack, ds)
    return ds.design @ hadamard_product(stack) - ds.responses


def l1_loss(stack: LayerStack, ds: Dataset) -> float:
    return float(np.mean(np.abs(residuals(stack, ds))))


def leave_one_out_products(layers) -> list[np.ndarray]:
    """prod_{k != i} w_k for every i, each multiplied in increasing k.

    The fixed left-to-right order makes blocks of identical layers bitwise
    identical, which the balancedness checks rely on.  O(N^2 d), fine for N <= 10.
    """
    N = len(layers)
    if N == 1:
        return [np.ones_like(layers[0])]
    out = []
    for i in range(N):
        others = [layers[k] for k in range(N) if k != i]
        acc = others[0].copy()
        for w in others[1:]:
            acc *= w
        out.append(acc)
    return out


def chain_blocks(q: np.ndarray, stack: LayerStack) -> StackGradient:
    """Per-layer blocks q * prod_{k != i} w_k for a gradient q w.r.t. the product."""
    return StackGradient(tuple(q * p for p in leave_one_out_products(stack.layers)))


def subgradient(stack: LayerStack, ds: Dataset, policy: SubgradPolicy = DEFAULT_POLICY) -> StackGradient:
    r = residuals(stack, ds)
    q = ds.design.T @ policy.sign(r) / ds.m
    return chain_blocks(q, stack)


def expected_loss(stack: LayerStack, theta_star: np.ndarray) -> float:
    """Population objective ||prod w - theta*||; same value as generalization_error."""
    return generalization_error(stack, theta_star)


def q_vector(z: np.ndarray, ds: Dataset, policy: SubgradPolicy = DEFAULT_POLICY) -> np.ndarray:
    """(1/m) sum_i Sign(<x_i, z> + eps_i) x_i."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (ds.d,):
        raise ValueError(f"z has shape {z.shape}, expected ({ds.d},)")
    return ds.design.T @ policy.sign(ds.design @ z + ds.noise) / ds.m


def noise_kernel_expectation(spec: NoiseSpec, r: float, n_mc: int = 100_000, rng=None) -> PhiEstimate:
    """E[exp(-zeta^2 / (2 r^2))] for zeta drawn from the outlier distribution."""
    if spec.dist == "gaussian":
        # Gaussian integral: E = r / sqrt(r^2 + sigma^2)
        return PhiEstimate(r / np.sqrt(r * r + spec.scale**2), 0.0)
    rng = make_rng(0) if rng is None else rng
    vals = np.exp(-spec.sample(n_mc, rng) ** 2 / (2 * r * r))
    return PhiEstimate(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_mc)))


def phi_factor(p: float, spec: NoiseSpec, z_norm: float, n_mc: int = 100_000, rng=None) -> PhiEstimate:
    """Attenuation of the population direction under corruption.

    phi = sqrt(2/pi) * (1 - p + p * E[exp(-eps^2 / (2 ||z||^2))]).
    """
    if not z_norm > 0:
        raise ValueError(f"z_norm must be positive, got {z_norm}")
    kern = noise_kernel_expectation(spec, z_norm, n_mc, rng)
    value = SQRT_2_OVER_PI * (1.0 - p + p * kern.value)
    return PhiEstimate(float(value), SQRT_2_OVER_PI * p * kern.stderr)


def direction_preserving_deviation(z, ds: Dataset, spec: NoiseSpec | None = None,
                                   policy: SubgradPolicy = DEFAULT_POLICY) -> float:
    """||q(z) - phi * z / ||z|| ||_inf."""
    z = np.asarray(z, dtype=np.float64)
    r = float(np.linalg.norm(z))
    if r == 0:
        raise ValueError("z must be nonzero")
    spec = ds.spec if spec is None else spec
    phi = phi_factor(spec.corruption_prob, spec, r).value
    return float(np.max(np.abs(q_vector(z, ds, policy) - phi * z / r)))


def _check_eps(eps_smooth: float) -> None:
    if not eps_smooth > 0:
        raise ValueError(f"eps_smooth must be positive, got {eps_smooth}")


def smoothed_loss(stack: LayerStack, ds: Dataset, eps_smooth: float = DEFAULT_EPS_SMOOTH) -> float:
    """(1/m) sum sqrt(r_i^2 + eps); an upper bound on l1_loss."""
    _check_eps(eps_smooth)
    r = residuals(stack, ds)
    return float(np.mean(np.sqrt(r * r + eps_smooth)))


def smoothed_gradient(stack: LayerStack, ds: Dataset, eps_smooth: float = DEFAULT_EPS_SMOOTH) -> StackGradient:
    _check_eps(eps_smooth)
    r = residuals(stack, ds)
    q = ds.design.T @ (r / np.sqrt(r * r + eps_smooth)) / ds.m
    return chain_blocks(q, stack)
