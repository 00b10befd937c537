import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import l1_loss_loop, subgradient_loop
from robustdln.data import Dataset, NoiseSpec, generate_dataset, make_rng
from robustdln.loss import (
    DEFAULT_EPS_SMOOTH,
    SQRT_2_OVER_PI,
    SubgradPolicy,
    direction_preserving_deviation,
    expected_loss,
    l1_loss,
    phi_factor,
    q_vector,
    residuals,
    smoothed_gradient,
    smoothed_loss,
    subgradient,
)
from robustdln.model import LayerStack, balanced_solution, generalization_error, hadamard_product
from robustdln.optimizer import subgm_step

FD_STEP = 1e-6


def random_stack(rng, N, d, scale=1.0):
    return LayerStack(tuple(scale * rng.standard_normal(d) for _ in range(N)))


def kink_free(stack, ds, direction, h=FD_STEP):
    """No residual changes sign within +-h along the direction (plus margin)."""
    r = residuals(stack, ds)
    lo = residuals(stack + direction.scaled(-10 * h), ds)
    hi = residuals(stack + direction.scaled(10 * h), ds)
    return np.min(np.abs(r)) > 10 * h and np.all(np.sign(lo) == np.sign(r)) \
        and np.all(np.sign(hi) == np.sign(r))


def fd(fn, stack, direction, h=FD_STEP):
    return (fn(stack + direction.scaled(h)) - fn(stack + direction.scaled(-h))) / (2 * h)


def test_l1_loss_examples():
    clean = generate_dataset(10, 3, 20, 1.0, 2.0, NoiseSpec(0.0), 0)
    for N in (1, 2, 3):
        assert l1_loss(balanced_solution(clean.theta_star, N), clean) == pytest.approx(0, abs=1e-14)
    noisy = generate_dataset(10, 3, 40, 1.0, 2.0, NoiseSpec(0.25, "gaussian", 5.0), 1)
    expect = np.sum(np.abs(noisy.noise[noisy.noise_support])) / noisy.m
    assert l1_loss(balanced_solution(noisy.theta_star, 2), noisy) == pytest.approx(expect, rel=1e-12)


def test_l1_loss_matches_loop_oracle(small_ds, rng):
    for N in (1, 2, 3):
        s = random_stack(rng, N, small_ds.d, 0.7)
        oracle = l1_loss_loop(s.layers, small_ds.design, small_ds.responses)
        assert l1_loss(s, small_ds) == pytest.approx(oracle, rel=1e-12)


def test_subgradient_matches_loop_oracle(small_ds, rng):
    for N in (1, 2, 4):
        s = random_stack(rng, N, small_ds.d, 0.7)
        ours = subgradient(s, small_ds).blocks
        ref = subgradient_loop(s.layers, small_ds.design, small_ds.responses)
        for a, b in zip(ours, ref):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def test_subgradient_zero_residuals(rng):
    theta = np.array([1.0, 0.0, 2.0, 0.5])
    X = rng.standard_normal((12, 4))
    exact = Dataset(X, X @ theta, theta, np.zeros(12), np.array([], dtype=int))
    s = LayerStack((theta.copy(),))
    assert np.all(residuals(s, exact) == 0)
    assert not np.any(subgradient(s, exact).flat())


def test_subgradient_one_layer_formula(small_ds, rng):
    s = random_stack(rng, 1, small_ds.d)
    r = small_ds.design @ s.layers[0] - small_ds.responses
    direct = small_ds.design.T @ np.sign(r) / small_ds.m
    assert np.array_equal(subgradient(s, small_ds).blocks[0], direct)


def test_policy_validation_and_use():
    with pytest.raises(ValueError):
        SubgradPolicy(1.5)
    assert SubgradPolicy(0.5).sign(np.array([0.0, -2.0, 3.0])).tolist() == [0.5, -1.0, 1.0]


@pytest.mark.parametrize("N", [1, 2, 3])
def test_subgradient_finite_differences(small_ds, rng, N):
    checked = 0
    for _ in range(200):
        s = random_stack(rng, N, small_ds.d, 0.8)
        v = random_stack(rng, N, small_ds.d)
        v = v.scaled(1 / np.linalg.norm(v.flat()))
        if not kink_free(s, small_ds, v):
            continue
        num = fd(lambda w: l1_loss(w, small_ds), s, v)
        ana = subgradient(s, small_ds).dot(v)
        assert num == pytest.approx(ana, rel=1e-5, abs=1e-9)
        checked += 1
        if checked == 20:
            break
    assert checked == 20


def test_step_decreases_loss_at_smooth_point(small_ds, rng):
    for N in (1, 2, 3):
        s = random_stack(rng, N, small_ds.d, 0.8)
        g = subgradient(s, small_ds)
        assert kink_free(s, small_ds, g.as_stack().scaled(1e-3 / np.linalg.norm(g.flat())))
        assert l1_loss(subgm_step(s, small_ds, 1e-7), small_ds) < l1_loss(s, small_ds)


@pytest.mark.parametrize("N", [2, 3, 4, 5])
def test_equal_layers_give_equal_blocks(small_ds, rng, N):
    w = rng.standard_normal(small_ds.d)
    g = subgradient(LayerStack(tuple(w.copy() for _ in range(N))), small_ds)
    for b in g.blocks[1:]:
        assert np.array_equal(b, g.blocks[0])


def test_expected_loss(rng):
    theta = np.array([1.0, 0.0, 2.0])
    assert expected_loss(balanced_solution(theta, 3), theta) == pytest.approx(0, abs=1e-15)
    assert expected_loss(LayerStack((theta + np.array([1.0, 0, 0]),)), theta) == 1.0
    for _ in range(100):
        N = int(rng.integers(1, 5))
        s = random_stack(rng, N, 6)
        t = rng.standard_normal(6)
        assert expected_loss(s, t) == generalization_error(s, t)


def _unit_rows_dataset(m, d):
    X = np.zeros((m, d))
    X[:, 0] = 1.0
    return Dataset(X, np.zeros(m), np.zeros(d), np.zeros(m), np.array([], dtype=int))


def test_q_vector_examples(small_ds):
    ds = _unit_rows_dataset(5, 3)
    e1 = np.array([1.0, 0.0, 0.0])
    assert q_vector(e1, ds).tolist() == [1.0, 0.0, 0.0]
    clean = Dataset(small_ds.design, small_ds.responses, small_ds.theta_star,
                    np.zeros(small_ds.m), np.array([], dtype=int))
    assert not np.any(q_vector(np.zeros(small_ds.d), clean))
    with pytest.raises(ValueError):
        q_vector(np.zeros(small_ds.d + 1), small_ds)


@given(st.integers(0, 10_000))
def test_q_vector_holder_bound_and_oddness(seed):
    ds = generate_dataset(6, 2, 15, 1.0, 2.0, NoiseSpec(0.0), seed)
    z = make_rng(seed + 1).standard_normal(6)
    q = q_vector(z, ds)
    bound = np.max(np.mean(np.abs(ds.design), axis=0))
    assert np.max(np.abs(q)) <= bound + 1e-15
    assert np.array_equal(q_vector(-z, ds), -q)


def test_phi_closed_form_properties():
    assert phi_factor(0.0, NoiseSpec(0.0), 1.0).value == pytest.approx(SQRT_2_OVER_PI, abs=1e-12)
    assert SQRT_2_OVER_PI == pytest.approx(0.7978845608, abs=1e-10)
    tiny = phi_factor(0.999999, NoiseSpec(0.5, "gaussian", 1e12), 1.0).value
    assert 0 < tiny < 1e-5
    with pytest.raises(ValueError):
        phi_factor(0.1, NoiseSpec(), 0.0)


@given(st.floats(0, 0.99), st.sampled_from(["gaussian", "uniform", "constant"]),
       st.floats(0.1, 100), st.floats(0.01, 100))
def test_phi_bounds(p, dist, scale, r):
    est = phi_factor(p, NoiseSpec(0.1, dist, scale), r, n_mc=2000)
    assert SQRT_2_OVER_PI * (1 - p) - 1e-12 <= est.value <= SQRT_2_OVER_PI + 1e-12


def test_phi_mc_path_matches_direct_expectation():
    # uniform(-a, a): E exp(-z^2/(2 r^2)) = r sqrt(pi/2) erf(a / (r sqrt 2)) / a
    from math import erf, pi, sqrt
    a, r, p = 3.0, 1.5, 0.4
    exact = SQRT_2_OVER_PI * (1 - p + p * r * sqrt(pi / 2) * erf(a / (r * sqrt(2))) / a)
    est = phi_factor(p, NoiseSpec(p, "uniform", a), r, n_mc=200_000, rng=make_rng(4))
    assert abs(est.value - exact) <= 4 * est.stderr + 1e-12


def test_deviation_examples():
    ds = generate_dataset(20, 3, 10_000, 1.0, 2.0, NoiseSpec(0.0), 0)
    dev = direction_preserving_deviation(ds.theta_star, ds)
    assert 0 <= dev <= 0.05
    with pytest.raises(ValueError):
        direction_preserving_deviation(np.zeros(20), ds)


def test_smoothed_examples(rng):
    theta = np.array([1.0, 0.0, 2.0])
    X = rng.standard_normal((5, 3))
    exact = Dataset(X, X @ theta, theta, np.zeros(5), np.array([], dtype=int))
    s = LayerStack((theta.copy(),))
    assert np.all(residuals(s, exact) == 0)
    assert smoothed_loss(s, exact, 1e-6) == pytest.approx(1e-3, rel=1e-12)
    assert not np.any(smoothed_gradient(s, exact, 1e-6).flat())
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            smoothed_loss(s, exact, bad)
        with pytest.raises(ValueError):
            smoothed_gradient(s, exact, bad)
    assert DEFAULT_EPS_SMOOTH == 1e-7


@given(st.integers(0, 1000), st.integers(1, 3))
def test_smoothed_upper_bound_and_monotone(seed, N):
    ds = generate_dataset(5, 2, 8, 1.0, 2.0, NoiseSpec(0.25, "gaussian", 3.0), seed)
    s = random_stack(make_rng(seed), N, 5)
    base = l1_loss(s, ds)
    vals = [smoothed_loss(s, ds, e) for e in (1e-1, 1e-3, 1e-5, 1e-7)]
    assert all(v >= base for v in vals)
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert vals[-1] - base <= np.sqrt(1e-7) + 1e-15


@pytest.mark.parametrize("N", [1, 2, 3])
def test_smoothed_gradient_finite_differences(small_ds, rng, N):
    for _ in range(10):
        s = random_stack(rng, N, small_ds.d, 0.8)
        v = random_stack(rng, N, small_ds.d)
        v = v.scaled(1 / np.linalg.norm(v.flat()))
        num = fd(lambda w: smoothed_loss(w, small_ds, DEFAULT_EPS_SMOOTH), s, v)
        ana = smoothed_gradient(s, small_ds, DEFAULT_EPS_SMOOTH).dot(v)
        assert num == pytest.approx(ana, rel=1e-6, abs=1e-10)


def test_hadamard_used_consistently(small_ds, rng):
    s = random_stack(rng, 3, small_ds.d)
    assert np.array_equal(residuals(s, small_ds),
                          small_ds.design @ hadamard_product(s) - small_ds.responses)
