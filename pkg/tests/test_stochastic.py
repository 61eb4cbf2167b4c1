"""Tests for the noise channels and ramp schedules."""

import math

import numpy as np
import pytest

from freqasym.stochastic import (
    NoiseChannel,
    channel_rng,
    channel_step,
    draw_jumps,
    sample_ramp_schedule,
    stationary_std,
)


class TestChannelStep:
    def test_deterministic_decay(self):
        ch = NoiseChannel(value=1.0, mean=0.0, reversion_rate=0.5)
        new = channel_step(ch, 0.1, channel_rng(0, 0))
        assert new == pytest.approx(0.95, abs=1e-15)

    def test_pure_drift_converges_monotonically(self):
        ch = NoiseChannel(value=3.0, mean=1.0, reversion_rate=0.8)
        rng = channel_rng(1, 0)
        v = ch.value
        prev_gap = abs(v - ch.mean)
        for _ in range(500):
            v = channel_step(ch, 0.05, rng, value=v)
            gap = abs(v - ch.mean)
            assert gap <= prev_gap
            prev_gap = gap
        assert v == pytest.approx(ch.mean, abs=1e-6)

    def test_mean_shift_moves_target(self):
        ch = NoiseChannel(value=0.0, mean=0.0, reversion_rate=1.0)
        rng = channel_rng(2, 0)
        v = 0.0
        for _ in range(2000):
            v = channel_step(ch, 0.05, rng, value=v, mean_shift=2.5)
        assert v == pytest.approx(2.5, abs=1e-6)

    def test_stationary_variance_close_to_closed_form(self):
        # quick sanity version; the tight 1e6-step check is in acceptance
        ch = NoiseChannel(value=0.0, mean=0.0, reversion_rate=0.5, diffusion=0.1)
        rng = channel_rng(3, 0)
        dt = 0.05
        n = 200_000
        vals = np.empty(n)
        v = 0.0
        for i in range(n):
            v = channel_step(ch, dt, rng, value=v)
            vals[i] = v
        target = ch.diffusion**2 / (2 * ch.reversion_rate)
        assert np.var(vals[2000:]) == pytest.approx(target, rel=0.10)

    def test_first_order_convergence_against_exponential(self):
        ch = NoiseChannel(value=1.0, mean=0.0, reversion_rate=1.3)
        rng = channel_rng(4, 0)
        horizon = 1.0
        errs = []
        for dt in (0.1, 0.05, 0.025):
            v = 1.0
            for _ in range(int(round(horizon / dt))):
                v = channel_step(ch, dt, rng, value=v)
            errs.append(abs(v - math.exp(-1.3 * horizon)))
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.15)
        assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.15)

    def test_determinism_per_stream(self):
        ch = NoiseChannel(value=0.0, mean=0.0, reversion_rate=0.5, diffusion=0.2,
                          jump_rate=0.5, jump_sigma=0.3)
        path1 = []
        v = 0.0
        rng = channel_rng(42, 7)
        for _ in range(500):
            v = channel_step(ch, 0.02, rng, value=v)
            path1.append(v)
        v = 0.0
        rng = channel_rng(42, 7)
        path2 = []
        for _ in range(500):
            v = channel_step(ch, 0.02, rng, value=v)
            path2.append(v)
        assert path1 == path2

    def test_streams_independent_of_channel_count(self):
        # adding another channel's stream must not change this one's draws
        a = channel_rng(9, 0).standard_normal(8)
        _ = channel_rng(9, 1).standard_normal(8)
        b = channel_rng(9, 0).standard_normal(8)
        assert np.array_equal(a, b)

    def test_invalid_dt(self):
        ch = NoiseChannel()
        with pytest.raises(ValueError):
            channel_step(ch, 0.0, channel_rng(0, 0))

    def test_validation(self):
        with pytest.raises(ValueError):
            NoiseChannel(reversion_rate=0.0)
        with pytest.raises(ValueError):
            NoiseChannel(diffusion=-1.0)

    def test_stationary_std_closed_form(self):
        ch = NoiseChannel(reversion_rate=0.5, diffusion=0.1)
        assert stationary_std(ch) == pytest.approx(0.1 / math.sqrt(1.0))


class TestDrawJumps:
    def test_zero_rate_draws_nothing(self):
        rng = channel_rng(0, 0)
        assert draw_jumps(rng, 0.0, 1.0, 1.0) == (0, 0.0)
        # the no-op must not consume from the stream
        assert rng.standard_normal() == channel_rng(0, 0).standard_normal()

    def test_count_statistics(self):
        rng = channel_rng(5, 0)
        lam_dt = 0.8
        counts = [draw_jumps(rng, lam_dt, 1.0, 1.0)[0] for _ in range(20_000)]
        assert np.mean(counts) == pytest.approx(lam_dt, rel=0.05)
        assert np.var(counts) == pytest.approx(lam_dt, rel=0.05)

    def test_magnitude_scale(self):
        rng = channel_rng(6, 0)
        sums = [draw_jumps(rng, 5.0, 1.0, 0.25)[1] for _ in range(20_000)]
        # sum of k ~ Poisson(5) normals of std 0.25: Var = 5 * 0.25^2
        assert np.var(sums) == pytest.approx(5 * 0.25**2, rel=0.05)


class TestRampSchedule:
    def test_zero_rate_empty(self):
        sched = sample_ramp_schedule(1000.0, 0.0, 1.0, (300.0, 900.0), channel_rng(0, 99))
        assert len(sched) == 0
        assert sched.mean_offset(500.0) == 0.0

    def test_poisson_count_statistics(self):
        # 48 h horizon at one event per hour: mean 48 over 200 seeded draws
        horizon = 48 * 3600.0
        rate = 1.0 / 3600.0
        counts = [
            len(sample_ramp_schedule(horizon, rate, 1.0, (300.0, 900.0), channel_rng(s, 99)))
            for s in range(200)
        ]
        tol = 3.0 * math.sqrt(48.0) / math.sqrt(200.0)
        assert np.mean(counts) == pytest.approx(48.0, abs=tol)

    def test_deterministic_for_fixed_seed(self):
        a = sample_ramp_schedule(7200.0, 1e-3, 1.5, (300.0, 900.0), channel_rng(3, 99))
        b = sample_ramp_schedule(7200.0, 1e-3, 1.5, (300.0, 900.0), channel_rng(3, 99))
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.magnitudes, b.magnitudes)
        assert np.array_equal(a.durations, b.durations)

    def test_mean_offset_ramp_then_hold(self):
        from freqasym.stochastic import RampSchedule

        sched = RampSchedule(
            times=np.array([100.0, 1000.0]),
            magnitudes=np.array([2.0, -1.0]),
            durations=np.array([200.0, 100.0]),
        )
        assert sched.mean_offset(50.0) == 0.0
        assert sched.mean_offset(200.0) == pytest.approx(1.0)  # halfway up the first ramp
        assert sched.mean_offset(500.0) == pytest.approx(2.0)  # held
        assert sched.mean_offset(1100.0) == pytest.approx(2.0 - 1.0)  # cumulative
        # vectorized evaluation matches scalar
        ts = np.array([50.0, 200.0, 500.0, 1100.0])
        assert np.allclose(sched.mean_offset(ts), [0.0, 1.0, 2.0, 1.0])

    def test_schedule_csv(self):
        sched = sample_ramp_schedule(7200.0, 1e-3, 1.0, (300.0, 900.0), channel_rng(1, 99))
        text = sched.to_csv()
        assert text.splitlines()[0] == "time_s,magnitude,duration_s"
        assert len(text.strip().splitlines()) == len(sched) + 1

    def test_validation(self):
        with pytest.raises(ValueError):
            sample_ramp_schedule(-1.0, 1.0, 1.0, (1.0, 2.0), channel_rng(0, 0))
        with pytest.raises(ValueError):
            sample_ramp_schedule(10.0, 1.0, 1.0, (5.0, 2.0), channel_rng(0, 0))
