import math

import numpy as np
import pytest

from wassreg.errors import ValidationError
from wassreg.kernel import BandwidthRule, KernelSpec, kernel_weight, select_bandwidth

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def test_gaussian_at_zero():
    spec = KernelSpec("gaussian", 1.0, 2)
    assert kernel_weight(0.0, spec) == pytest.approx(INV_SQRT_2PI, abs=1e-12)


def test_epanechnikov_compact_support():
    spec = KernelSpec("epanechnikov", 0.7, 1)
    assert kernel_weight(2 * 0.7, spec) == 0.0
    assert kernel_weight(0.7, spec) == 0.0


def test_gaussian_formula_point():
    spec = KernelSpec("gaussian", 2.0, 1)
    expected = 0.5 * INV_SQRT_2PI * math.exp(-0.5)
    assert kernel_weight(2.0, spec) == pytest.approx(expected, rel=1e-12)


def test_negative_distance_rejected():
    with pytest.raises(ValidationError):
        kernel_weight(-0.1, KernelSpec("gaussian", 1.0, 1))


def test_bad_spec_rejected():
    with pytest.raises(ValidationError):
        KernelSpec("triangle", 1.0, 1)
    with pytest.raises(ValidationError):
        KernelSpec("gaussian", 0.0, 1)
    with pytest.raises(ValidationError):
        BandwidthRule(0)


@pytest.mark.parametrize("family", ["gaussian", "epanechnikov"])
def test_non_increasing_on_grid(family):
    spec = KernelSpec(family, 1.3, 2)
    grid = np.linspace(0.0, 5.0, 200)
    vals = [kernel_weight(d, spec) for d in grid]
    assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))


def test_order_statistic_examples():
    assert select_bandwidth([1.0, 2.0, 3.0], BandwidthRule(2, 1.0)) == 2.0
    assert select_bandwidth([3.0, 1.0, 2.0], BandwidthRule(1, 0.5)) == 0.5
    assert select_bandwidth([0.0, 0.0, 0.0], BandwidthRule(2, 1.0)) == 1e-6


def test_too_few_distances():
    with pytest.raises(ValidationError):
        select_bandwidth([1.0], BandwidthRule(2, 1.0))


def test_scale_covariance(rng):
    rule = BandwidthRule(3, 0.8)
    for _ in range(50):
        dists = rng.random(8) + 0.1
        c = float(rng.random() * 10 + 0.1)
        h1 = select_bandwidth(dists, rule)
        h2 = select_bandwidth(c * dists, rule)
        assert h2 == pytest.approx(c * h1, rel=1e-12)


def test_ties_resolved_by_value():
    assert select_bandwidth([2.0, 2.0, 2.0, 5.0], BandwidthRule(3, 1.0)) == 2.0
