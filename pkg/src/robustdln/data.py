"""Sparse ground truth, Gaussian designs and grossly corrupted responses.

Randomness comes from numpy's counter-based Philox generator.  A dataset seed
is expanded with ``SeedSequence(seed).spawn(4)`` into four independent streams,
used in this order: ground truth, design, noise support, noise values.  The
streams never share state, so changing e.g. the noise distribution leaves the
design and theta* of a seed untouched.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

NOISE_DISTS = ("gaussian", "uniform", "constant")

# P(|zeta| >= sigma) for zeta ~ N(0, sigma^2), to 3 digits
_GAUSS_TAIL_AT_SIGMA = 0.317


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def split_streams(seed: int, n: int) -> list[np.random.Generator]:
    return [make_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class NoiseSpec:
    """Outlier model: a fraction ``corruption_prob`` of responses gets zero-mean noise.

    ``scale`` is the standard deviation for ``gaussian``, the half-width ``a``
    for ``uniform`` on (-a, a), and the magnitude ``c`` for ``constant``
    (values +c / -c with probability 1/2 each).
    """

    corruption_prob: float = 0.1
    dist: str = "gaussian"
    scale: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.corruption_prob < 1.0:
            raise ValueError(f"corruption_prob must lie in [0, 1), got {self.corruption_prob}")
        if self.dist not in NOISE_DISTS:
            raise ValueError(f"unknown noise distribution {self.dist!r}; choose from {NOISE_DISTS}")
        if not self.scale > 0:
            raise ValueError(f"noise scale must be positive, got {self.scale}")

    @property
    def tail_constants(self) -> tuple[float, float]:
        """(t0, p0) with P(|zeta| >= t0) >= p0."""
        if self.dist == "gaussian":
            return self.scale, _GAUSS_TAIL_AT_SIGMA
        if self.dist == "uniform":
            return self.scale / 2, 0.5
        return self.scale, 1.0

    @property
    def variance(self) -> float:
        if self.dist == "gaussian":
            return self.scale**2
        if self.dist == "uniform":
            return self.scale**2 / 3
        return self.scale**2

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.dist == "gaussian":
            return self.scale * rng.standard_normal(n)
        if self.dist == "uniform":
            return rng.uniform(-self.scale, self.scale, n)
        return self.scale * rng.choice(np.array([-1.0, 1.0]), n)


@dataclass
class Dataset:
    design: np.ndarray
    responses: np.ndarray
    theta_star: np.ndarray
    noise: np.ndarray
    noise_support: np.ndarray
    seed: int | None = None
    spec: NoiseSpec = field(default_factory=NoiseSpec)

    @property
    def m(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]

    @property
    def support(self) -> np.ndarray:
        """Indices of the nonzero coordinates of theta*."""
        return np.flatnonzero(self.theta_star)

    @property
    def k(self) -> int:
        return int(np.count_nonzero(self.theta_star))

    @property
    def kappa(self) -> float:
        nz = self.theta_star[self.theta_star != 0]
        return float(nz.max() / nz.min()) if nz.size else float("nan")

    @property
    def realized_corruption(self) -> float:
        return self.noise_support.size / self.m


def generate_ground_truth(d, k, theta_min, theta_max, rng) -> np.ndarray:
    """k-sparse nonnegative vector, nonzeros uniform on [theta_min, theta_max]."""
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    if not 0 < theta_min <= theta_max:
        raise ValueError(f"need 0 < theta_min <= theta_max, got {theta_min}, {theta_max}")
    theta = np.zeros(d)
    idx = rng.choice(d, size=k, replace=False)
    theta[idx] = rng.uniform(theta_min, theta_max, k)
    return theta


def generate_design(m, d, rng) -> np.ndarray:
    if m < 1 or d < 1:
        raise ValueError(f"need m, d >= 1, got m={m}, d={d}")
    return rng.standard_normal((m, d))


def corrupted_count(m: int, p: float) -> int:
    # floor(p*m), guarded against 0.1*300 = 29.999...
    return int(np.floor(p * m + 1e-9))


def generate_noise(m, spec: NoiseSpec, rng, value_rng=None):
    """Return (noise vector, sorted support) with exactly floor(p*m) corrupted entries."""
    n_bad = corrupted_count(m, spec.corruption_prob)
    if n_bad > m:
        raise ValueError("more corrupted entries than samples")
    value_rng = rng if value_rng is None else value_rng
    support = np.sort(rng.choice(m, size=n_bad, replace=False))
    noise = np.zeros(m)
    noise[support] = spec.sample(n_bad, value_rng)
    return noise, support


def generate_dataset(d, k, m, theta_min, theta_max, spec: NoiseSpec, seed: int) -> Dataset:
    r_theta, r_design, r_support, r_values = split_streams(seed, 4)
    theta = generate_ground_truth(d, k, theta_min, theta_max, r_theta)
    X = generate_design(m, d, r_design)
    noise, support = generate_noise(m, spec, r_support, value_rng=r_values)
    y = X @ theta + noise
    return Dataset(X, y, theta, noise, support, seed=seed, spec=spec)


def save_dataset(ds: Dataset, stem: str | Path) -> list[Path]:
    """Write ``<stem>_samples.csv``, ``<stem>_theta.csv`` and ``<stem>.json``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    samples = stem.with_name(stem.name + "_samples.csv")
    theta = stem.with_name(stem.name + "_theta.csv")
    meta = stem.with_suffix(".json")
    corrupted = np.zeros(ds.m, dtype=int)
    corrupted[ds.noise_support] = 1
    with open(samples, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "y", "noise", "corrupted"] + [f"x{j}" for j in range(ds.d)])
        for i in range(ds.m):
            w.writerow([i, repr(float(ds.responses[i])), repr(float(ds.noise[i])), int(corrupted[i])]
                       + [repr(float(v)) for v in ds.design[i]])
    with open(theta, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "theta_star"])
        for j, v in enumerate(ds.theta_star):
            w.writerow([j, repr(float(v))])
    meta.write_text(json.dumps({
        "seed": ds.seed,
        "noise_spec": asdict(ds.spec),
        "m": ds.m,
        "d": ds.d,
        "k": ds.k,
        "kappa": ds.kappa,
        "realized_corruption": ds.realized_corruption,
        "noise_support": ds.noise_support.tolist(),
    }, indent=2))
    return [samples, theta, meta]


def load_dataset(stem: str | Path) -> Dataset:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    rows = np.loadtxt(stem.with_name(stem.name + "_samples.csv"), delimiter=",",
                      skiprows=1, ndmin=2)
    theta = np.loadtxt(stem.with_name(stem.name + "_theta.csv"), delimiter=",",
                       skiprows=1, ndmin=2)[:, 1]
    return Dataset(
        design=rows[:, 4:],
        responses=rows[:, 1],
        theta_star=theta,
        noise=rows[:, 2],
        noise_support=np.asarray(meta["noise_support"], dtype=np.intp),
        seed=meta["seed"],
        spec=NoiseSpec(**meta["noise_spec"]),
    )
