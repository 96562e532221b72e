import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowcast.metrics import EvalPair, crps, crps_empirical, mae, mse, nmae


def crps_breakpoint_oracle(samples, truth):
    """Exact integral of (F_hat(z) - 1{truth <= z})^2 dz by summing over the
    intervals between breakpoints, where the integrand is constant."""
    samples = np.sort(np.asarray(samples, dtype=np.float64))
    n = samples.size
    points = np.unique(np.concatenate([samples, [truth]]))
    total = 0.0
    for a, b in zip(points[:-1], points[1:]):
        z = (a + b) / 2.0
        f_hat = np.count_nonzero(samples <= z) / n
        ind = 1.0 if truth <= z else 0.0
        total += (f_hat - ind) ** 2 * (b - a)
    return total


class TestMSE:
    def test_perfect_forecast(self):
        pair = EvalPair(truth=[[1.0, 2.0]], point=[[1.0, 2.0]])
        assert mse(pair) == 0.0

    def test_simple_value(self):
        pair = EvalPair(truth=[[0.0, 0.0]], point=[[3.0, 4.0]])
        assert mse(pair) == pytest.approx(12.5)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        truth = rng.standard_normal((3, 7))
        point = rng.standard_normal((3, 7))
        expect = 0.0
        for k in range(3):
            for t in range(7):
                expect += (truth[k, t] - point[k, t]) ** 2
        expect /= 21.0
        assert mse(EvalPair(truth=truth, point=point)) == pytest.approx(expect, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            EvalPair(truth=np.zeros((2, 3)), point=np.zeros((2, 4)))


class TestMAE:
    def test_perfect_forecast(self):
        pair = EvalPair(truth=[[5.0]], point=[[5.0]])
        assert mae(pair) == 0.0

    def test_simple_value(self):
        pair = EvalPair(truth=[[0.0, 0.0]], point=[[3.0, -4.0]])
        assert mae(pair) == pytest.approx(3.5)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        truth = rng.standard_normal((4, 5))
        point = rng.standard_normal((4, 5))
        expect = sum(abs(truth[k, t] - point[k, t])
                     for k in range(4) for t in range(5)) / 20.0
        assert mae(EvalPair(truth=truth, point=point)) == pytest.approx(expect, rel=1e-12)


class TestCRPS:
    def test_all_samples_equal_truth(self):
        assert crps_empirical(np.full(10, 3.0), 3.0) == pytest.approx(0.0, abs=1e-12)

    def test_point_mass_forecast(self):
        # degenerate forecast at c has CRPS |c - truth|
        assert crps_empirical(np.full(7, 2.5), 4.0) == pytest.approx(1.5, rel=1e-12)

    def test_single_sample_equals_absolute_error(self):
        assert crps_empirical(np.array([1.25]), -0.75) == pytest.approx(2.0, rel=1e-12)

    def test_gaussian_closed_form(self):
        # CRPS of N(0,1) evaluated at its mean: (sqrt(2) - 1)/sqrt(pi)
        draws = np.random.default_rng(42).standard_normal(10_000)
        expect = (np.sqrt(2.0) - 1.0) / np.sqrt(np.pi)
        assert crps_empirical(draws, 0.0) == pytest.approx(expect, rel=0.02)

    def test_matches_breakpoint_integral(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            samples = rng.standard_normal(n) * rng.uniform(0.5, 3.0)
            truth = rng.standard_normal() * 2.0
            got = crps_empirical(samples, truth)
            want = crps_breakpoint_oracle(samples, truth)
            assert got == pytest.approx(want, rel=5e-3, abs=1e-12)

    def test_bounded_by_sample_mae(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n = int(rng.integers(1, 20))
            samples = rng.standard_normal(n)
            truth = rng.standard_normal()
            c = crps_empirical(samples, truth)
            m = np.mean(np.abs(samples - truth))
            assert c <= m + 1e-12
            if n > 1 and np.ptp(samples) > 1e-9:
                assert c < m

    @given(st.floats(min_value=0.1, max_value=50.0),
           st.integers(min_value=1, max_value=30),
           st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_scale_equivariance(self, a, n, seed):
        rng = np.random.default_rng(seed)
        samples = rng.standard_normal(n)
        truth = rng.standard_normal()
        base = crps_empirical(samples, truth)
        scaled = crps_empirical(a * samples, a * truth)
        assert scaled == pytest.approx(a * base, rel=1e-9, abs=1e-12)

    def test_empty_samples(self):
        with pytest.raises(ValueError):
            crps_empirical(np.array([]), 0.0)

    def test_aggregate_over_cells(self):
        rng = np.random.default_rng(3)
        samples = rng.standard_normal((15, 2, 3))
        truth = rng.standard_normal((2, 3))
        pair = EvalPair(truth=truth, point=truth, samples=samples)
        cells = [crps_empirical(samples[:, k, t], truth[k, t])
                 for k in range(2) for t in range(3)]
        assert crps(pair) == pytest.approx(np.mean(cells), rel=1e-12)


class TestNMAE:
    def test_perfect_forecast(self):
        pair = EvalPair(truth=[[1.0, 2.0]], point=[[1.0, 2.0]])
        assert nmae(pair) == 0.0

    def test_simple_value(self):
        pair = EvalPair(truth=[[1.0, 1.0]], point=[[0.0, 0.0]])
        assert nmae(pair) == pytest.approx(1.0)

    def test_zero_truth_rejected(self):
        pair = EvalPair(truth=[[0.0, 0.0]], point=[[1.0, 1.0]])
        with pytest.raises(ValueError):
            nmae(pair)

    def test_matches_definition(self):
        rng = np.random.default_rng(5)
        truth = rng.standard_normal((3, 4)) + 2.0
        point = rng.standard_normal((3, 4))
        want = np.sum(np.abs(truth - point)) / np.sum(np.abs(truth))
        assert nmae(EvalPair(truth=truth, point=point)) == pytest.approx(want, rel=1e-12)
