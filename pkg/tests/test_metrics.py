"""Tests for the frequency-quality metrics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqasym.metrics import (
    EmptyTrace,
    FrequencyTrace,
    asymmetry,
    compute_metrics,
    estimate_pd,
    minutes_outside_band,
    sigma_total,
    split_sigma,
    trace_to_csv,
)


def trace(samples, period=1.0, f_n=50.0):
    return FrequencyTrace(samples=np.asarray(samples, float), sample_period=period, f_nominal=f_n)


# strategy: frequency samples in a physical window around 50 Hz
sample_lists = st.lists(
    st.floats(min_value=45.0, max_value=55.0, allow_nan=False, width=64),
    min_size=1,
    max_size=200,
)


class TestSplitSigma:
    def test_mirror_pair(self):
        s_minus, n_minus, s_plus, n_plus = split_sigma(trace([49.99, 49.99, 50.01, 50.01]))
        assert s_minus == pytest.approx(0.01)
        assert s_plus == pytest.approx(0.01)
        assert (n_minus, n_plus) == (2, 2)

    def test_direct_evaluation(self):
        # sqrt((0.03^2 + 0.01^2)/2) and sqrt(0.02^2/1)
        s_minus, n_minus, s_plus, n_plus = split_sigma(trace([49.97, 49.99, 50.02]))
        assert s_minus == pytest.approx(math.sqrt(0.0005), rel=1e-12)
        assert s_plus == pytest.approx(0.02, rel=1e-12)
        assert (n_minus, n_plus) == (2, 1)

    def test_one_sided(self):
        s_minus, n_minus, s_plus, n_plus = split_sigma(trace([50.01, 50.02]))
        assert s_minus == 0.0
        assert n_minus == 0
        assert s_plus == pytest.approx(math.sqrt((0.01**2 + 0.02**2) / 2), rel=1e-12)
        assert n_plus == 2

    def test_samples_at_nominal_belong_to_neither_side(self):
        _, n_minus, _, n_plus = split_sigma(trace([50.0, 50.0, 50.1]))
        assert (n_minus, n_plus) == (0, 1)

    def test_empty_trace(self):
        with pytest.raises(EmptyTrace):
            split_sigma(trace([]))


class TestSigmaTotal:
    def test_weighted_average(self):
        s = sigma_total(math.sqrt(0.0005), 2, 0.02, 1)
        assert s == pytest.approx(math.sqrt(0.0014 / 3), rel=1e-12)

    def test_equal_sides_identity(self):
        for n_minus, n_plus in [(1, 1), (3, 7), (100, 1)]:
            assert sigma_total(0.035, n_minus, 0.035, n_plus) == pytest.approx(0.035, rel=1e-12)

    def test_reference_case_consistency(self):
        # a published scenario row: sigma lies between the split sigmas
        assert 0.0868 <= 0.1085 <= 0.1254

    def test_no_samples_rejected(self):
        with pytest.raises(ValueError):
            sigma_total(0.0, 0, 0.0, 0)


class TestAsymmetry:
    @pytest.mark.parametrize(
        "s_minus, s_plus, expected",
        [(0.1254, 0.0868, 0.0386), (0.0841, 0.0762, 0.0079), (0.02, 0.02, 0.0)],
    )
    def test_values(self, s_minus, s_plus, expected):
        assert asymmetry(s_minus, s_plus) == pytest.approx(expected, abs=1e-12)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            asymmetry(-0.01, 0.02)


class TestMinutesOutside:
    def test_all_inside(self):
        f = 50.0 + 0.05 * np.sin(np.linspace(0, 20, 500))
        assert minutes_outside_band(trace(f)) == (0.0, 0.0, 0.0)

    def test_direct_count(self):
        f = np.full(1000, 50.0)
        f[:600] = 50.15
        total, above, below = minutes_outside_band(trace(f))
        assert above == pytest.approx(10.0)
        assert below == 0.0
        assert total == pytest.approx(10.0)

    def test_band_edge_counts_as_inside(self):
        total, above, below = minutes_outside_band(trace([50.1, 49.9, 50.100001]))
        assert above == pytest.approx(1.0 / 60.0)
        assert below == 0.0

    def test_reference_split_sum(self):
        # published row: above + below reproduces the printed total
        assert 136.38 + 144.10 == pytest.approx(280.49, abs=0.02)


class TestEstimatePd:
    def test_constant_trace_point_mass(self):
        hist = estimate_pd(trace(np.full(100, 50.0)), bin_width=0.005)
        assert hist.densities.size == 1
        assert hist.densities[0] == pytest.approx(1 / 0.005)

    def test_gaussian_sigma_recovery(self):
        rng = np.random.default_rng(7)
        sigma = 0.04
        f = 50.0 + sigma * rng.standard_normal(200_000)
        hist = estimate_pd(trace(f), bin_width=0.002)
        centers = hist.bin_centers
        w = hist.densities * 0.002
        mean = np.sum(centers * w)
        var = np.sum((centers - mean) ** 2 * w)
        assert math.sqrt(var) == pytest.approx(sigma, rel=0.02)

    def test_mirror_symmetry(self):
        f = np.array([49.95, 49.98, 50.0, 50.02, 50.05])
        h_fwd = estimate_pd(trace(f), bin_width=0.01)
        h_rev = estimate_pd(trace(100.0 - f), bin_width=0.01)
        assert np.allclose(h_fwd.densities, h_rev.densities[::-1])

    def test_density_normalized(self):
        rng = np.random.default_rng(3)
        hist = estimate_pd(trace(50 + 0.1 * rng.standard_normal(5000)), bin_width=0.013)
        widths = np.diff(hist.bin_edges)
        assert np.sum(hist.densities * widths) == pytest.approx(1.0, rel=1e-12)


class TestProperties:
    @given(sample_lists)
    @settings(max_examples=100, deadline=None)
    def test_permutation_invariance(self, samples):
        rng = np.random.default_rng(0)
        r1 = compute_metrics(trace(samples))
        r2 = compute_metrics(trace(rng.permutation(samples)))
        # counts and minutes are exact; sigmas to summation-order rounding
        assert (r1.n_minus, r1.n_plus, r1.minutes_outside) == (
            r2.n_minus, r2.n_plus, r2.minutes_outside
        )
        for name in ("sigma", "sigma_minus", "sigma_plus", "delta_sigma"):
            assert getattr(r1, name) == pytest.approx(
                getattr(r2, name), rel=1e-12, abs=1e-15
            )

    @given(sample_lists)
    @settings(max_examples=100, deadline=None)
    def test_mirror_antisymmetry(self, samples):
        t_fwd = trace(samples)
        t_rev = trace([100.0 - s for s in samples])
        a = compute_metrics(t_fwd)
        b = compute_metrics(t_rev)
        assert a.sigma_minus == pytest.approx(b.sigma_plus, rel=1e-12, abs=1e-15)
        assert a.n_minus == b.n_plus
        assert a.minutes_above == b.minutes_below
        assert a.sigma == pytest.approx(b.sigma, rel=1e-12, abs=1e-15)
        assert a.delta_sigma == pytest.approx(b.delta_sigma, rel=1e-9, abs=1e-15)
        assert a.minutes_outside == b.minutes_outside

    @given(sample_lists)
    @settings(max_examples=100, deadline=None)
    def test_weighted_sigma_equals_rms_when_no_nominal_samples(self, samples):
        f = np.asarray(samples)
        f = f[f != 50.0]
        if f.size == 0:
            return
        t = trace(f)
        s_minus, n_minus, s_plus, n_plus = split_sigma(t)
        weighted = sigma_total(s_minus, n_minus, s_plus, n_plus)
        direct = math.sqrt(np.mean((f - 50.0) ** 2))
        assert weighted == pytest.approx(direct, rel=1e-12)

    @given(
        sample_lists,
        st.floats(min_value=0.1, max_value=3.0, allow_nan=False),
    )
    @settings(max_examples=100, deadline=None)
    def test_scale_consistency(self, samples, c):
        base = trace(samples)
        scaled = trace([50.0 + c * (s - 50.0) for s in samples])
        a = compute_metrics(base)
        b = compute_metrics(scaled)
        for name in ("sigma", "sigma_minus", "sigma_plus", "delta_sigma"):
            assert getattr(b, name) == pytest.approx(c * getattr(a, name), rel=1e-9, abs=1e-12)

    @given(sample_lists)
    @settings(max_examples=100, deadline=None)
    def test_zero_band_minutes_counts_offnominal_samples(self, samples):
        t = trace(samples)
        total, _, _ = minutes_outside_band(t, band_half_width=0.0)
        _, n_minus, _, n_plus = split_sigma(t)
        assert total == pytest.approx((n_minus + n_plus) * t.sample_period / 60.0)


class TestReportAndCsv:
    def test_report_fields(self):
        r = compute_metrics(trace([49.97, 49.99, 50.02], period=2.0), band_half_width=0.01)
        assert r.n_total == 3
        assert r.duration_s == pytest.approx(6.0)
        assert r.minutes_outside == pytest.approx(r.minutes_above + r.minutes_below)
        assert min(r.sigma_minus, r.sigma_plus) <= r.sigma <= max(r.sigma_minus, r.sigma_plus)

    def test_trace_csv_roundtrip_exact(self):
        rng = np.random.default_rng(11)
        t = trace(50 + 0.03 * rng.standard_normal(64), period=1.0)
        text = trace_to_csv(t)
        lines = text.strip().splitlines()
        assert lines[0] == "time_s,frequency_hz"
        parsed = np.array([float(l.split(",")[1]) for l in lines[1:]])
        assert np.array_equal(parsed, t.samples)
