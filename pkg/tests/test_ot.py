import itertools

import numpy as np
import pytest

from wassreg.errors import CapacityError, DimensionError, ValidationError
from wassreg.measures import EmpiricalMeasure, make_uniform_measure
from wassreg.ot import (
    SinkhornConfig,
    exact_w2_squared,
    free_support_barycenter,
    sinkhorn_divergence,
    sinkhorn_grad_points,
    w2_distance,
)

from conftest import random_cloud, random_weighted


def tight(blur, iters=4000):
    return SinkhornConfig(blur=blur, max_iters=iters, tol=1e-12, unroll_iters=min(iters, 500))


def brute_force_w2(a, b):
    """Uniform equal-size oracle: enumerate all permutation matchings."""
    k = a.size
    cost = ((a.points[:, None, :] - b.points[None, :, :]) ** 2).sum(-1)
    best = np.inf
    for perm in itertools.permutations(range(k)):
        best = min(best, cost[range(k), perm].sum() / k)
    return best


def sorted_matching_1d(a, b):
    return float(((np.sort(a.points[:, 0]) - np.sort(b.points[:, 0])) ** 2).mean())


# --- sinkhorn_divergence ------------------------------------------------------

def test_dirac_pair():
    a = make_uniform_measure([[0.0, 0.0]])
    b = make_uniform_measure([[3.0, 4.0]])
    res = sinkhorn_divergence(a, b, tight(0.01))
    assert res.value == pytest.approx(25.0, abs=0.1)
    assert res.converged


def test_self_divergence_zero(rng):
    a = random_cloud(rng, 6, 2)
    res = sinkhorn_divergence(a, a, tight(0.1))
    assert abs(res.value) <= 1e-9


def test_two_point_1d_clouds():
    a = make_uniform_measure([[0.0], [1.0]])
    b = make_uniform_measure([[1.0], [2.0]])
    res = sinkhorn_divergence(a, b, tight(0.01))
    assert res.value == pytest.approx(1.0, abs=0.05)


def test_symmetry_nonnegativity(rng):
    cfg = SinkhornConfig(blur=0.3, max_iters=30000, tol=1e-11, unroll_iters=100)
    for _ in range(20):
        a = random_cloud(rng, int(rng.integers(1, 7)), 2)
        offset = rng.normal(size=2)
        offset *= 1.5 / max(np.linalg.norm(offset), 1e-9)
        b = random_cloud(rng, int(rng.integers(1, 7)), 2, offset=offset)
        r_ab = sinkhorn_divergence(a, b, cfg)
        r_ba = sinkhorn_divergence(b, a, cfg)
        assert r_ab.converged and r_ba.converged
        assert r_ab.value >= -1e-9
        assert abs(r_ab.value - r_ba.value) <= 1e-9


def test_blur_as_length_convention():
    a = make_uniform_measure([[0.0], [1.0]])
    b = make_uniform_measure([[1.0], [2.0]])
    by_temp = sinkhorn_divergence(a, b, tight(0.04))
    by_len = sinkhorn_divergence(
        a, b, SinkhornConfig(blur=0.2, max_iters=4000, tol=1e-12, blur_as_length=True)
    )
    assert by_len.value == pytest.approx(by_temp.value, rel=1e-9)


def test_dimension_mismatch():
    a = make_uniform_measure([[0.0, 0.0]])
    b = make_uniform_measure([[1.0]])
    with pytest.raises(DimensionError):
        sinkhorn_divergence(a, b, tight(0.1))


def test_nonconvergence_flagged(rng):
    a = random_cloud(rng, 6, 2)
    b = random_cloud(rng, 6, 2, offset=3.0)
    cfg = SinkhornConfig(blur=0.001, max_iters=3, tol=1e-14, unroll_iters=1)
    res = sinkhorn_divergence(a, b, cfg)
    assert not res.converged
    assert res.iters_used == 3


def test_config_validation():
    with pytest.raises(ValidationError):
        SinkhornConfig(blur=0.0)
    with pytest.raises(ValidationError):
        SinkhornConfig(tol=0.0)
    with pytest.raises(ValidationError):
        SinkhornConfig(max_iters=10, unroll_iters=20)


# --- exact solver -------------------------------------------------------------

def test_exact_examples():
    a = make_uniform_measure([[0.0], [1.0]])
    b = make_uniform_measure([[1.0], [2.0]])
    assert exact_w2_squared(a, b) == pytest.approx(1.0, abs=1e-12)
    assert exact_w2_squared(a, a) == pytest.approx(0.0, abs=1e-12)
    d1 = make_uniform_measure([[0.0, 1.0]])
    d2 = make_uniform_measure([[3.0, 5.0]])
    assert exact_w2_squared(d1, d2) == pytest.approx(25.0, rel=1e-12)


def test_exact_matches_brute_force(rng):
    for _ in range(25):
        k = int(rng.integers(2, 6))
        d = int(rng.integers(1, 4))
        a = random_cloud(rng, k, d)
        b = random_cloud(rng, k, d, offset=rng.normal(size=d))
        assert exact_w2_squared(a, b) == pytest.approx(brute_force_w2(a, b), rel=1e-9)


def test_exact_1d_sorted_matching(rng):
    for _ in range(40):
        k = int(rng.integers(1, 9))
        a = random_cloud(rng, k, 1)
        b = random_cloud(rng, k, 1, offset=float(rng.normal()))
        assert exact_w2_squared(a, b) == pytest.approx(sorted_matching_1d(a, b), abs=1e-12)


def test_exact_general_weights_lp(rng):
    a = random_weighted(rng, 3, 2)
    b = random_weighted(rng, 5, 2)
    val = exact_w2_squared(a, b)
    assert val >= 0
    # LP against brute-force vertex enumeration is overkill; cross-check the
    # one-sided Dirac case, where the answer is the weighted mean cost.
    d = make_uniform_measure([[0.0, 0.0]])
    c = random_weighted(rng, 4, 2)
    expected = float((c.weights * (c.points ** 2).sum(1)).sum())
    assert exact_w2_squared(d, c) == pytest.approx(expected, rel=1e-9)


def test_translation_equivariance(rng):
    for _ in range(10):
        a = random_cloud(rng, 5, 3)
        b = random_cloud(rng, 5, 3, offset=1.0)
        t = rng.normal(size=3)
        shifted_a = make_uniform_measure(a.points + t)
        shifted_b = make_uniform_measure(b.points + t)
        assert exact_w2_squared(shifted_a, shifted_b) == pytest.approx(
            exact_w2_squared(a, b), abs=1e-9
        )


def test_capacity_guard():
    big = make_uniform_measure(np.zeros((1001, 1)) + np.arange(1001)[:, None])
    with pytest.raises(CapacityError):
        exact_w2_squared(big, big)


def test_w2_distance_helper(rng):
    a = random_cloud(rng, 4, 2)
    b = random_cloud(rng, 4, 2, offset=2.0)
    assert w2_distance(a, b, tight(0.05)) == pytest.approx(
        np.sqrt(exact_w2_squared(a, b)), rel=1e-12
    )


# --- gradients ----------------------------------------------------------------

def test_grad_zero_at_self(rng):
    a = random_cloud(rng, 5, 2)
    cfg = SinkhornConfig(blur=0.5, max_iters=1000, tol=1e-12, unroll_iters=1000)
    g = sinkhorn_grad_points(a, a, cfg)
    assert np.linalg.norm(g) <= 1e-6


def test_grad_dirac_pair():
    x = np.array([[1.0, 2.0]])
    y = np.array([[0.5, -1.0]])
    cfg = SinkhornConfig(blur=0.05, max_iters=200, tol=1e-12, unroll_iters=200)
    g = sinkhorn_grad_points(make_uniform_measure(x), make_uniform_measure(y), cfg)
    assert np.allclose(g, 2 * (x - y), atol=1e-9)


def test_grad_matches_finite_differences(rng):
    cfg = SinkhornConfig(blur=0.4, max_iters=400, tol=1e-30, unroll_iters=400)
    for _ in range(10):
        a = random_cloud(rng, 5, 2)
        b = random_cloud(rng, 5, 2, offset=rng.normal(size=2))
        g = sinkhorn_grad_points(a, b, cfg)
        scale = float(np.abs(a.points).max() + 1)
        h = 1e-5 * scale
        fd = np.zeros_like(g)
        for i in range(5):
            for j in range(2):
                plus = np.array(a.points)
                plus[i, j] += h
                minus = np.array(a.points)
                minus[i, j] -= h
                vp = sinkhorn_divergence(EmpiricalMeasure(plus, a.weights), b, cfg).value
                vm = sinkhorn_divergence(EmpiricalMeasure(minus, a.weights), b, cfg).value
                fd[i, j] = (vp - vm) / (2 * h)
        rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel <= 1e-4


# --- barycenter -----------------------------------------------------------------

def test_barycenter_midpoint_of_diracs():
    m1 = make_uniform_measure([[0.0, 0.0]])
    m2 = make_uniform_measure([[2.0, 2.0]])
    bary = free_support_barycenter([m1, m2], 1, tight(0.01))
    assert np.allclose(bary.points, [[1.0, 1.0]], atol=1e-9)
    assert bary.weights.tolist() == [1.0]


def test_barycenter_self(rng):
    mu = random_cloud(rng, 6, 2)
    bary = free_support_barycenter([mu], 6, tight(0.001))
    got = bary.points[np.lexsort(bary.points.T[::-1])]
    want = mu.points[np.lexsort(mu.points.T[::-1])]
    assert np.allclose(got, want, atol=1e-6)


def test_barycenter_two_point_1d():
    a = make_uniform_measure([[0.0], [2.0]])
    b = make_uniform_measure([[2.0], [4.0]])
    bary = free_support_barycenter([a, b], 2, tight(0.001))
    assert np.allclose(np.sort(bary.points.ravel()), [1.0, 3.0], atol=1e-6)


def test_barycenter_objective_non_increasing(rng):
    measures = [random_cloud(rng, 5, 2, offset=rng.normal(size=2)) for _ in range(4)]
    _, history = free_support_barycenter(
        measures, 5, tight(0.1), max_outer=20, return_history=True
    )
    assert len(history) >= 2
    for prev, cur in zip(history, history[1:]):
        assert cur <= prev + 1e-9


def test_barycenter_padding_and_errors(rng):
    mu = random_cloud(rng, 3, 2)
    bary = free_support_barycenter([mu], 5, tight(0.05))
    assert bary.size == 5
    with pytest.raises(ValidationError):
        free_support_barycenter([], 3, tight(0.05))
