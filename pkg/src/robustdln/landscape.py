"""Local landscape of the l1 loss around a true solution.

Descent probes look for the most negative loss change inside the per-layer
l_inf ball {w : ||w_j - w*_j||_inf <= gamma for every layer j}.  Besides the
two heuristics (random corner/uniform sampling and projected descent on the
smoothed loss) there is an exact probe: the loss depends on the layers only
through their product, each coordinate of the product ranges over an interval
when the layers range over the ball, and the ball minimum is therefore the
minimum of a convex piecewise-linear function over a box, i.e. a linear
program.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import optimize, sparse
from scipy.sparse.linalg import LinearOperator, eigsh

from .data import Dataset, make_rng
from .loss import DEFAULT_EPS_SMOOTH, l1_loss, leave_one_out_products, smoothed_gradient
from .model import LayerStack, hadamard_product

SLOPE_NOISE_FLOOR = 1e-12


@dataclass(frozen=True)
class ProbeMethod:
    kind: str = "linear_program"
    budget: int = 0

    def __post_init__(self):
        if self.kind not in ("linear_program", "random_sampling", "projected_descent"):
            raise ValueError(f"unknown probe method {self.kind!r}")

    @classmethod
    def linear_program(cls) -> "ProbeMethod":
        return cls("linear_program", 1)

    @classmethod
    def random_sampling(cls, n: int = 2000) -> "ProbeMethod":
        return cls("random_sampling", n)

    @classmethod
    def projected_descent(cls, iters: int = 500) -> "ProbeMethod":
        return cls("projected_descent", iters)

    def __str__(self):
        return f"{self.kind}({self.budget})"


@dataclass
class ProbeReport:
    gamma: float
    min_delta_loss: float
    perturbation: LayerStack
    method: str
    n_evals: int
    lp_objective: float | None = None


@dataclass
class CurvatureReport:
    lambda_min_estimate: float
    direction: LayerStack
    eps_smooth: float
    iters: int
    rayleigh_quotient: float = float("nan")


@dataclass
class FlatnessFit:
    slope: float
    intercept: float
    reports: list[ProbeReport]
    excluded: list[float] = field(default_factory=list)


def loss_change(center: LayerStack, pert: LayerStack, ds: Dataset) -> float:
    """l1_loss(center + pert) - l1_loss(center), without cancelling two O(1) losses."""
    base = hadamard_product(center)
    moved = hadamard_product(center + pert)
    r0 = ds.design @ base - ds.responses
    a = ds.design @ (moved - base)
    return float(np.mean(np.abs(r0 + a) - np.abs(r0)))


def _batch_loss_change(center: LayerStack, perts: np.ndarray, ds: Dataset) -> np.ndarray:
    """Loss changes for perturbations of shape (n, N, d)."""
    base = hadamard_product(center)
    W = center.as_array()[None] + perts
    moved = np.prod(W, axis=1)
    r0 = ds.design @ base - ds.responses
    a = (moved - base) @ ds.design.T
    return np.mean(np.abs(r0[None] + a) - np.abs(r0)[None], axis=1)


def product_box(center: LayerStack, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact per-coordinate range of prod_j (w_j + delta_j) over |delta_j| <= gamma."""
    lo = center.layers[0] - gamma
    hi = center.layers[0] + gamma
    for w in center.layers[1:]:
        a, b = w - gamma, w + gamma
        cands = np.stack([lo * a, lo * b, hi * a, hi * b])
        lo, hi = cands.min(axis=0), cands.max(axis=0)
    return lo, hi


def realize_product(center: LayerStack, gamma: float, target: np.ndarray) -> LayerStack:
    """Layer perturbation inside the ball whose product equals ``target``.

    Walks the segment between the box corners attaining the smallest and
    largest product and bisects for the target; the product is continuous
    along the segment, so the target is hit whenever it lies in the box range.
    """
    C = center.as_array()
    N, d = C.shape
    corners = np.array(list(itertools.product((-1.0, 1.0), repeat=N)))  # (2^N, N)
    vals = np.prod(C[None] + gamma * corners[:, :, None], axis=1)  # (2^N, d)
    cmin = corners[np.argmin(vals, axis=0)].T * gamma  # (N, d)
    cmax = corners[np.argmax(vals, axis=0)].T * gamma
    target = np.clip(target, vals.min(axis=0), vals.max(axis=0))
    lo_t = np.zeros(d)
    hi_t = np.ones(d)
    for _ in range(100):
        mid = 0.5 * (lo_t + hi_t)
        p = np.prod(C + cmin + mid * (cmax - cmin), axis=0)
        below = p < target
        lo_t = np.where(below, mid, lo_t)
        hi_t = np.where(below, hi_t, mid)
    t = 0.5 * (lo_t + hi_t)
    delta = cmin + t * (cmax - cmin)
    # zero-centred coordinates: write the target exactly as a product of roots
    zero = np.all(C == 0, axis=0)
    if np.any(zero):
        mag = np.abs(target[zero]) ** (1.0 / N)
        exact = np.tile(mag, (N, 1))
        exact[0] *= np.sign(target[zero])
        delta[:, zero] = exact
    delta = np.clip(delta, -gamma, gamma)
    return LayerStack(tuple(delta))


def _lp_probe(center: LayerStack, ds: Dataset, gamma: float) -> tuple[LayerStack, float]:
    base = hadamard_product(center)
    lo, hi = product_box(center, gamma)
    dlo, dhi = lo - base, hi - base
    X = ds.design
    m, d = X.shape
    r0 = X @ base - ds.responses
    # rescale to O(1): the typical box half-width sets the size of the optimum
    scale = float(np.median(0.5 * (dhi - dlo)))
    if scale <= 0:
        scale = float(np.max(dhi - dlo)) or 1.0
    reach = np.abs(X) @ np.maximum(np.abs(dlo), np.abs(dhi))
    fixed = np.abs(r0) > reach  # residual sign cannot change inside the box
    flip = np.flatnonzero(~fixed)
    sgn = np.sign(r0[fixed])
    # objective: (1/m)[sum_fixed sign(r0) a_i + sum_flip t_i], a = X z * scale
    c_z = (sgn @ X[fixed]) / m
    nf = flip.size
    c = np.concatenate([c_z, np.full(nf, 1.0 / m)])
    Xf = X[flip]
    r0f = r0[flip] / scale
    absf = np.abs(r0[flip]) / scale
    I = sparse.identity(nf, format="csr")
    # t >= r0 + a - |r0|  ->  a - t <= |r0| - r0 ;  t >= -r0 - a - |r0|  ->  -a - t <= |r0| + r0
    A_ub = sparse.vstack([
        sparse.hstack([sparse.csr_matrix(Xf), -I]),
        sparse.hstack([sparse.csr_matrix(-Xf), -I]),
    ]).tocsc()
    b_ub = np.concatenate([absf - r0f, absf + r0f])
    bounds = np.concatenate([
        np.stack([dlo / scale, dhi / scale], axis=1),
        np.tile([-np.inf, np.inf], (nf, 1)),
    ])
    res = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"linear program failed: {res.message}")
    z = np.clip(res.x[:d] * scale, dlo, dhi)
    pert = realize_product(center, gamma, base + z)
    return pert, float(res.fun * scale)


def _random_probe(center, ds, gamma, n, rng) -> tuple[LayerStack, float, int]:
    N, d = center.depth, center.dim
    best, best_val = None, 0.0
    batch = 250
    done = 0
    while done < n:
        b = min(batch, n - done)
        n_vert = b // 2
        vert = gamma * rng.choice(np.array([-1.0, 1.0]), size=(n_vert, N, d))
        unif = rng.uniform(-gamma, gamma, size=(b - n_vert, N, d))
        perts = np.concatenate([vert, unif])
        vals = _batch_loss_change(center, perts, ds)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best = float(vals[i]), perts[i]
        done += b
    if best is None:
        return LayerStack(tuple(np.zeros((N, d)))), 0.0, n
    return LayerStack(tuple(best)), best_val, n


def _descent_probe(center, ds, gamma, iters, rng, eps_smooth, init) -> tuple[LayerStack, float, int]:
    """Sign-gradient (l_inf steepest) descent on the smoothed loss, clipped to the ball."""
    N, d = center.depth, center.dim
    C = center.as_array()
    if init is None:
        delta = gamma * rng.choice(np.array([-1.0, 1.0]), size=(N, d))
    else:
        delta = np.clip(init.as_array(), -gamma, gamma)
    if eps_smooth is None:
        # smoothing well below the size of the residual changes the ball allows
        eps_smooth = (1e-2 * gamma**N) ** 2
    best = np.zeros((N, d))
    best_val = 0.0
    evals = 0
    if init is not None:
        v0 = loss_change(center, LayerStack(tuple(delta)), ds)
        evals += 1
        if v0 < best_val:
            best, best_val = delta.copy(), v0
    for it in range(iters):
        step = gamma * (0.5 * (1 - it / iters) + 0.01)
        g = smoothed_gradient(LayerStack(tuple(C + delta)), ds, eps_smooth).as_stack().as_array()
        delta = np.clip(delta - step * np.sign(g), -gamma, gamma)
        val = loss_change(center, LayerStack(tuple(delta)), ds)
        evals += 2
        if val < best_val:
            best, best_val = delta.copy(), val
    return LayerStack(tuple(best)), best_val, evals


def probe_descent(stack_star: LayerStack, ds: Dataset, gamma: float,
                  method: ProbeMethod = ProbeMethod.linear_program(), seed: int = 0,
                  eps_smooth: float | None = None, init: LayerStack | None = None) -> ProbeReport:
    """Most negative l1 loss change found in the per-layer l_inf ball of radius gamma.

    The zero perturbation is always a candidate, so ``min_delta_loss <= 0``.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    rng = make_rng(seed)
    lp_obj = None
    if method.kind == "linear_program":
        pert, lp_obj = _lp_probe(stack_star, ds, gamma)
        n_evals = 1
    elif method.kind == "random_sampling":
        pert, _, n_evals = _random_probe(stack_star, ds, gamma, method.budget, rng)
    else:
        pert, _, n_evals = _descent_probe(stack_star, ds, gamma, method.budget, rng,
                                          eps_smooth, init)
    val = loss_change(stack_star, pert, ds)
    if not val < 0:
        pert = LayerStack(tuple(np.zeros((stack_star.depth, stack_star.dim))))
        val = 0.0
    return ProbeReport(gamma, val, pert, str(method), n_evals, lp_obj)


def radius_bound(ds: Dataset) -> float:
    t0, _ = ds.spec.tail_constants
    return min(t0 / np.sqrt(ds.d), 1.0)


def flatness_exponent(stack_star: LayerStack, ds: Dataset, gammas,
                      method: ProbeMethod = ProbeMethod.linear_program(), seed: int = 0) -> FlatnessFit:
    """Least-squares slope of log|min_delta_loss| against log gamma."""
    gammas = np.sort(np.asarray(gammas, dtype=np.float64))
    if gammas.size < 4 or gammas[-1] / gammas[0] < 10:
        raise ValueError("need at least 4 radii spanning at least one decade")
    bound = radius_bound(ds)
    if gammas[-1] > bound:
        raise ValueError(f"radii must not exceed min(t0/sqrt(d), 1) = {bound:.4g}")
    reports = []
    warm = None
    for i, g in enumerate(gammas):
        rep = probe_descent(stack_star, ds, float(g), method, seed=seed + i, init=warm)
        reports.append(rep)
        if method.kind == "projected_descent":
            warm = rep.perturbation
    keep = [r for r in reports if abs(r.min_delta_loss) > SLOPE_NOISE_FLOOR]
    excluded = [r.gamma for r in reports if abs(r.min_delta_loss) <= SLOPE_NOISE_FLOOR]
    if len(keep) < 2:
        return FlatnessFit(float("nan"), float("nan"), reports, excluded)
    lg = np.log([r.gamma for r in keep])
    lv = np.log([abs(r.min_delta_loss) for r in keep])
    slope, intercept = np.polyfit(lg, lv, 1)
    return FlatnessFit(float(slope), float(intercept), reports, excluded)


def hessian_vector_product(grad_fn: Callable[[np.ndarray], np.ndarray], w: np.ndarray,
                           v: np.ndarray, max_step: float = np.inf) -> np.ndarray:
    """Central difference (g(w + h v) - g(w - h v)) / 2h, h = min(1e-5 (1 + ||w||), max_step)."""
    h = min(1e-5 * (1.0 + np.linalg.norm(w)), max_step)
    hv = (grad_fn(w + h * v) - grad_fn(w - h * v)) / (2 * h)
    if not np.all(np.isfinite(hv)):
        raise FloatingPointError("non-finite Hessian-vector product")
    return hv


def _smoothed_grad_fn(ds: Dataset, depth: int, eps_smooth: float):
    def grad(vec):
        return smoothed_gradient(LayerStack.from_flat(vec, depth), ds, eps_smooth).flat()
    return grad


def smoothing_step_cap(stack: LayerStack, ds: Dataset, eps_smooth: float) -> float:
    """Largest FD step keeping every residual change below 0.1 sqrt(eps) for unit v.

    sqrt(r^2 + eps) is only quadratic for |r| << sqrt(eps); a larger step
    turns the difference quotient into a secant and breaks symmetry.
    """
    loo = np.stack(leave_one_out_products(stack.layers))
    jac = float(np.max(np.linalg.norm(loo, axis=0)))
    xmax = float(np.max(np.linalg.norm(ds.design, axis=1)))
    if jac == 0 or xmax == 0:
        return np.inf
    return 0.1 * np.sqrt(eps_smooth) / (xmax * jac)


def negative_curvature_direction(stack: LayerStack, ds: Dataset | None = None,
                                 eps_smooth: float = DEFAULT_EPS_SMOOTH, iters: int = 300,
                                 method: str = "auto", grad_fn=None, seed: int = 0) -> CurvatureReport:
    """Smallest eigenpair of the smoothed-loss Hessian over all layers.

    Hessian-vector products are central differences of the smoothed gradient,
    with the step capped by ``smoothing_step_cap`` when the smoothed l1 loss
    is used.
    ``method``: "dense" assembles the full Hessian from n products and uses a
    symmetric eigensolver; "lanczos" runs ARPACK on the product operator;
    "power" is shifted power iteration on (c I - H); "auto" picks dense up to
    n = 4000.  ``grad_fn`` replaces the smoothed gradient (a flat-vector map).
    """
    if not eps_smooth > 0:
        raise ValueError(f"eps_smooth must be positive, got {eps_smooth}")
    w = stack.flat()
    n = w.size
    cap = np.inf
    if grad_fn is None:
        grad_fn = _smoothed_grad_fn(ds, stack.depth, eps_smooth)
        cap = smoothing_step_cap(stack, ds, eps_smooth)
    hvp = lambda v: hessian_vector_product(grad_fn, w, v, cap)  # noqa: E731
    rng = make_rng(seed)
    if method == "auto":
        method = "dense" if n <= 4000 else "lanczos"

    if method == "dense":
        H = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            H[:, j] = hvp(e)
        H = 0.5 * (H + H.T)
        vals, vecs = np.linalg.eigh(H)
        lam, v, used = float(vals[0]), vecs[:, 0], n
    elif method == "lanczos":
        op = LinearOperator((n, n), matvec=hvp, dtype=np.float64)
        vals, vecs = eigsh(op, k=1, which="SA", maxiter=iters * n, tol=1e-10,
                           v0=rng.standard_normal(n))
        lam, v, used = float(vals[0]), vecs[:, 0], iters
    elif method == "power":
        # shift above the top of the spectrum, estimated by a short power run on H
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        top = 0.0
        for _ in range(30):
            hv = hvp(v)
            top = max(top, float(np.linalg.norm(hv)))
            v = hv / (np.linalg.norm(hv) or 1.0)
        c = 1.1 * top + 1e-12
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        for _ in range(iters):
            u = c * v - hvp(v)
            v = u / np.linalg.norm(u)
        lam = float(v @ hvp(v))
        used = iters + 30
    else:
        raise ValueError(f"unknown eigen method {method!r}")
    v = v / np.linalg.norm(v)
    rq = float(v @ hvp(v))
    return CurvatureReport(lam, LayerStack.from_flat(v, stack.depth), eps_smooth, used, rq)


def _unit(direction: LayerStack) -> LayerStack:
    nrm = np.linalg.norm(direction.flat())
    if nrm == 0:
        raise ValueError("direction must be nonzero")
    return direction.scaled(1.0 / nrm)


def landscape_grid(stack_star: LayerStack, ds: Dataset, dir_d: LayerStack, dir_h: LayerStack,
                   alphas, betas) -> np.ndarray:
    """grid[i, j] = l1_loss(w* + alphas[i] d + betas[j] h) for unit-normalized d, h."""
    for dvec in (dir_d, dir_h):
        if dvec.depth != stack_star.depth or dvec.dim != stack_star.dim:
            raise ValueError("direction shape does not match the center stack")
    dd, hh = _unit(dir_d), _unit(dir_h)
    grid = np.empty((len(alphas), len(betas)))
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            grid[i, j] = l1_loss(stack_star + dd.scaled(a) + hh.scaled(b), ds)
    return grid


def save_grid(path: str | Path, alphas, betas, grid: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "beta", "loss"])
        for i, a in enumerate(alphas):
            for j, b in enumerate(betas):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(grid[i, j]))])
    tmp.replace(path)
    return path


def save_probe_reports(path: str | Path, reports: list[ProbeReport]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gamma", "min_delta_loss", "method", "n_evals"])
        for r in reports:
            w.writerow([repr(float(r.gamma)), repr(float(r.min_delta_loss)), r.method, r.n_evals])
    tmp.replace(path)
    return path


def descent_direction(report: ProbeReport) -> LayerStack:
    """Unit direction of a probe's argmin perturbation (for landscape grids)."""
    return _unit(report.perturbation)


__all__ = [
    "ProbeMethod", "ProbeReport", "CurvatureReport", "FlatnessFit", "loss_change",
    "product_box", "realize_product", "probe_descent", "flatness_exponent",
    "negative_curvature_direction", "hessian_vector_product", "landscape_grid",
    "save_grid", "save_probe_reports", "descent_direction", "radius_bound",
    "smoothing_step_cap",
]
