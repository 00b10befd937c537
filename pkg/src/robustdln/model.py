"""Diagonal linear networks: f_w(x) = <w_1 * ... * w_N, x>."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class LayerStack:
    """N per-layer weight vectors of a depth-N diagonal linear network.

    Layers are kept as separate vectors rather than one (N, d) matrix so the
    per-layer update touches exactly one array per layer.
    """

    layers: tuple[np.ndarray, ...]

    def __post_init__(self):
        layers = tuple(np.asarray(w, dtype=np.float64) for w in self.layers)
        if len(layers) < 1:
            raise ValueError("a LayerStack needs at least one layer")
        d = layers[0].shape
        if len(d) != 1 or d[0] < 1:
            raise ValueError(f"layers must be non-empty 1-D vectors, got shape {d}")
        for j, w in enumerate(layers):
            if w.shape != d:
                raise ValueError(f"layer {j} has shape {w.shape}, expected {d}")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_layers(cls, layers: Sequence[np.ndarray]) -> "LayerStack":
        return cls(tuple(layers))

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return self.layers[0].shape[0]

    def as_array(self) -> np.ndarray:
        """(N, d) copy of the layers."""
        return np.stack(self.layers)

    def flat(self) -> np.ndarray:
        """Layers concatenated into one vector of length N*d."""
        return np.concatenate(self.layers)

    @classmethod
    def from_flat(cls, vec: np.ndarray, depth: int) -> "LayerStack":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1 or vec.size % depth:
            raise ValueError(f"cannot split vector of size {vec.size} into {depth} layers")
        return cls(tuple(np.split(vec.copy(), depth)))

    def __add__(self, other: "LayerStack") -> "LayerStack":
        _check_same_shape(self, other)
        return LayerStack(tuple(a + b for a, b in zip(self.layers, other.layers)))

    def scaled(self, c: float) -> "LayerStack":
        return LayerStack(tuple(c * w for w in self.layers))


@dataclass(frozen=True)
class SignalResidualSplit:
    """Product coordinates on the support of theta* (signal) and off it (residual)."""

    signal: np.ndarray
    residual: np.ndarray


def _check_same_shape(a: LayerStack, b: LayerStack) -> None:
    if a.depth != b.depth or a.dim != b.dim:
        raise ValueError(
            f"stack shapes differ: (N={a.depth}, d={a.dim}) vs (N={b.depth}, d={b.dim})"
        )


def hadamard_product(stack: LayerStack) -> np.ndarray:
    """Coordinatewise product of all layers."""
    out = stack.layers[0].copy()
    for w in stack.layers[1:]:
        out *= w
    return out


def predict(stack: LayerStack, x: np.ndarray) -> float | np.ndarray:
    """Network output for a single input (1-D x) or a batch of rows (2-D x)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stack.dim:
        raise ValueError(f"input dimension {x.shape[-1]} != network dimension {stack.dim}")
    out = x @ hadamard_product(stack)
    return float(out) if np.ndim(out) == 0 else out


def balanced_init(d: int, N: int, alpha: float) -> LayerStack:
    """Every layer equal to alpha**(1/N) * ones, so the product is alpha * ones."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if d < 1 or N < 1:
        raise ValueError(f"need d >= 1 and N >= 1, got d={d}, N={N}")
    scale = alpha ** (1.0 / N)
    return LayerStack(tuple(np.full(d, scale) for _ in range(N)))


def balanced_solution(theta_star: np.ndarray, N: int) -> LayerStack:
    """The balanced true solution: each layer is the N-th root of theta* (theta* >= 0)."""
    theta_star = np.asarray(theta_star, dtype=np.float64)
    if np.any(theta_star < 0):
        raise ValueError("balanced solution needs a nonnegative theta*")
    root = theta_star ** (1.0 / N)
    return LayerStack(tuple(root.copy() for _ in range(N)))


def balancedness_gap(stack: LayerStack) -> float:
    """max over layer pairs (i, j) of ||w_i - w_j||_inf."""
    if stack.depth < 2:
        raise ValueError("balancedness gap is undefined for a single layer")
    # the largest pairwise sup-distance is the largest coordinate spread
    arr = stack.as_array()
    return float(np.max(arr.max(axis=0) - arr.min(axis=0)))


def signal_residual_split(stack: LayerStack, support) -> SignalResidualSplit:
    support = np.asarray(sorted(set(int(i) for i in support)), dtype=np.intp)
    d = stack.dim
    if support.size and (support[0] < 0 or support[-1] >= d):
        raise IndexError(f"support indices must lie in [0, {d})")
    prod = hadamard_product(stack)
    mask = np.zeros(d, dtype=bool)
    mask[support] = True
    return SignalResidualSplit(signal=prod[mask], residual=prod[~mask])


def generalization_error(stack: LayerStack, theta_star: np.ndarray) -> float:
    """Euclidean distance between the end-to-end vector and theta*."""
    theta_star = np.asarray(theta_star, dtype=np.float64)
    if theta_star.shape != (stack.dim,):
        raise ValueError(f"theta* has shape {theta_star.shape}, expected ({stack.dim},)")
    return float(np.linalg.norm(hadamard_product(stack) - theta_star))
