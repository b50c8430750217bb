import numpy as np
import pytest

from sbpool import layers
from sbpool.errors import NonFiniteValue
from sbpool.gradcheck import SUITE, grad_check, run_suite


def linear_case(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(4, 16))
    b = rng.normal(size=4)
    proj = rng.normal(size=4)

    def fn(x):
        y = layers.linear_forward(x, w, b)
        dx, _, _ = layers.linear_backward(x, w, proj)
        return float((proj * y).sum()), dx

    return fn, rng.normal(size=16)


class TestGradCheck:
    def test_linear_layer_passes(self):
        for seed in range(20):
            fn, x = linear_case(seed)
            report = grad_check(fn, x, tolerance=1e-4)
            assert report.passed, report.line()

    def test_corrupted_backward_fails(self):
        fn, x = linear_case(0)

        def bad(xx):
            value, grad = fn(xx)
            return value, grad * 1.01

        report = grad_check(bad, x, tolerance=1e-4)
        assert not report.passed
        assert report.max_rel_error > 5e-3

    def test_constant_map_both_zero(self):
        def const(x):
            return 1.0, np.zeros_like(x)

        report = grad_check(const, np.ones(5), tolerance=1e-4)
        assert report.passed
        assert report.max_rel_error == 0.0

    def test_skip_mask_excludes_coordinates(self):
        fn, x = linear_case(1)
        skip = np.zeros(16, dtype=bool)
        skip[:10] = True
        report = grad_check(fn, x, tolerance=1e-4, skip=skip)
        assert report.n_checked == 6
        assert report.n_skipped == 10

    def test_non_finite_rejected(self):
        def bad(x):
            return float("nan"), np.zeros_like(x)

        with pytest.raises(NonFiniteValue):
            grad_check(bad, np.ones(3))


class TestSuite:
    def test_every_named_check_passes(self):
        reports = run_suite(tolerance=1e-4, seeds=3)
        assert len(reports) == len(SUITE)
        for report in reports:
            assert report.passed, report.line()

    def test_corrupt_mode_fails_everything(self):
        reports = run_suite(tolerance=1e-4, seeds=1, corrupt=True)
        for report in reports:
            assert not report.passed, report.line()

    def test_tolerance_floor_documented(self):
        # central differences cannot reach 1e-12; the suite must say so
        reports = run_suite(tolerance=1e-12, seeds=1)
        assert any(not report.passed for report in reports)
