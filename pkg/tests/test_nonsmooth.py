"""Detector, peak rule, SMP, and AveNonSmooth against hand and brute-force oracles."""

import math

import numpy as np
import pytest

from nslab.errors import ShapeError
from nslab.nonsmooth import (
    PeakSet,
    ave_nonsmooth,
    detect_nonsmooth,
    find_peaks,
    second_order_difference,
    smp,
    smp_field,
)


def brute_peaks(absd2):
    """Independent peak enumeration straight from the definition."""
    a = list(map(float, absd2))
    mean = sum(a) / len(a)
    median = float(np.median(a))
    return [i for i, v in enumerate(a) if v > 10 * mean and v > 10 * median]


def kinked_series(total, kinks):
    """Piecewise-linear series; kinks is {index: slope_change}. On a unit grid
    the |delta2| at a kink equals the slope change exactly."""
    slopes = np.zeros(total)
    for idx, change in kinks.items():
        slopes[idx:] += change
    return np.concatenate([[0.0], np.cumsum(slopes)])


class TestSecondOrderDifference:
    def test_affine_series_vanishes(self):
        np.testing.assert_array_equal(
            second_order_difference([0.0, 1.0, 2.0, 3.0]), [0.0, 0.0]
        )

    def test_relu_sampled_at_tenth(self):
        xs = np.arange(-0.5, 0.5 + 1e-12, 0.1)
        d2 = second_order_difference(np.maximum(xs, 0.0))
        at_zero = np.argmin(np.abs(xs)) - 1  # interior offset
        assert abs(abs(d2[at_zero]) - 0.1) < 1e-12

    def test_softplus_sampled_at_tenth(self):
        xs = np.arange(-0.5, 0.5 + 1e-12, 0.1)
        d2 = second_order_difference(np.log1p(np.exp(xs)))
        at_zero = np.argmin(np.abs(xs)) - 1
        expect = math.log1p(math.exp(0.1)) + math.log1p(math.exp(-0.1)) - 2 * math.log(2)
        assert abs(d2[at_zero] - expect) < 1e-12
        assert abs(expect - 0.0025) < 2e-6

    def test_too_short_series(self):
        with pytest.raises(ShapeError):
            second_order_difference([1.0, 2.0])


class TestDetector:
    def test_relu_detected_softplus_not(self):
        xs = np.arange(-0.5, 0.5 + 1e-12, 0.1)
        hits = detect_nonsmooth(np.maximum(xs, 0.0), 0.02)
        assert list(hits) == [np.argmin(np.abs(xs)) - 1]
        assert detect_nonsmooth(np.log1p(np.exp(xs)), 0.02).size == 0

    def test_maxpool_toy_hits_at_one(self):
        ts = np.arange(0.0, 2.0 + 1e-12, 0.1)
        out = np.maximum(2.0 - ts, ts)  # max over (0, 0, 2-t, t)
        d2 = second_order_difference(out)
        hits = detect_nonsmooth(out, 0.02)
        t1 = int(np.argmin(np.abs(ts - 1.0))) - 1
        assert list(hits) == [t1]
        assert abs(abs(d2[t1]) - 0.2) < 1e-12

    def test_constant_series_empty(self):
        assert detect_nonsmooth(np.full(10, 3.0), 0.02).size == 0

    def test_raising_threshold_never_adds_detections(self):
        rng = np.random.default_rng(0)
        series = rng.normal(size=50)
        taus = [0.01, 0.05, 0.2, 1.0]
        hit_sets = [set(detect_nonsmooth(series, t)) for t in taus]
        for small, large in zip(hit_sets, hit_sets[1:]):
            assert large <= small

    def test_tau_must_be_positive(self):
        with pytest.raises(ValueError):
            detect_nonsmooth(np.zeros(5), 0.0)


class TestFindPeaks:
    def test_single_outlier(self):
        a = np.full(100, 0.001)
        a[40] = 0.5
        peaks = find_peaks(a)
        assert list(peaks.indices) == [40]
        assert peaks.magnitudes[0] == 0.5
        assert brute_peaks(a) == [40]

    def test_all_equal_has_no_peaks(self):
        peaks = find_peaks(np.full(50, 0.3))
        assert len(peaks) == 0

    def test_all_zero_has_no_peaks(self):
        assert len(find_peaks(np.zeros(20))) == 0

    def test_matches_brute_force_on_random_profiles(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = rng.exponential(0.01, size=80)
            a[rng.integers(0, 80, size=3)] += rng.uniform(0, 1, size=3)
            assert list(find_peaks(a).indices) == brute_peaks(a)

    def test_negative_values_rejected(self):
        with pytest.raises(ValueError):
            find_peaks(np.array([0.1, -0.2]))


class TestSmp:
    def test_affine_series_zero(self):
        # exactly representable affine grid: delta2 is identically zero
        assert smp(0.25 + 0.5 * np.arange(30)) == 0.0

    def test_single_kink_magnitude(self):
        series = kinked_series(100, {50: 0.5})
        assert smp(series) == pytest.approx(0.5, abs=1e-12)

    def test_two_separated_kinks_sum(self):
        series = kinked_series(200, {60: 0.5, 140: -0.3})
        d2 = np.abs(second_order_difference(series))
        assert brute_peaks(d2) == [59, 139]
        assert smp(series) == pytest.approx(0.8, abs=1e-9)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(5)
        series = kinked_series(150, {40: 0.4, 100: 0.2}) + rng.normal(0, 1e-5, 151)
        base = smp(series)
        for a in (2.0, -3.5, 0.25):
            d2_scaled = second_order_difference(a * series)
            # both sides agree to rounding of the cancellation-limited delta2
            np.testing.assert_allclose(
                d2_scaled, a * second_order_difference(series), atol=1e-12
            )
            assert smp(a * series) == pytest.approx(abs(a) * base, rel=1e-9)

    def test_inheritance_under_summation(self):
        f1 = kinked_series(300, {80: 0.5})
        f2 = kinked_series(300, {220: 0.3})
        assert smp(f1 + f2) == pytest.approx(smp(f1) + smp(f2), abs=1e-9)

    def test_field_matches_scalar_loop(self):
        rng = np.random.default_rng(11)
        traces = rng.normal(size=(40, 3, 4, 5)) * 0.001
        traces[20:, 1, 2, 3] += np.arange(20) * 0.7  # one strong kink
        field = smp_field(traces)
        for c in range(3):
            for r in range(4):
                for q in range(5):
                    assert field[c, r, q] == pytest.approx(
                        smp(traces[:, c, r, q]), abs=1e-12
                    )


class TestAveNonSmooth:
    def test_constant_video(self):
        assert ave_nonsmooth(np.full((10, 4, 4), 0.7)) == 0.0

    def test_single_pixel_hand_value(self):
        video = np.array([0.0, 0.0, 1.0, 1.0]).reshape(4, 1, 1)
        assert ave_nonsmooth(video) == pytest.approx(1.0, abs=1e-15)

    def test_affine_video_zero(self):
        base = np.random.default_rng(2).uniform(size=(5, 5))
        video = np.stack([base + 0.01 * t for t in range(30)])
        assert ave_nonsmooth(video) < 1e-15

    def test_short_video_rejected(self):
        with pytest.raises(ShapeError):
            ave_nonsmooth(np.zeros((2, 4, 4)))
