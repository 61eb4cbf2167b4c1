"""Mean-reverting diffusion channels with Poisson jumps, plus wind-ramp
schedules.

Each channel evolves by an Euler-Maruyama update of

    dk = alpha * (mu - k) dt + b dW + c dJ

where dJ sums Poisson(jump_rate * dt)-many Normal(0, jump_sigma^2) draws.
Channels own independent counter-based RNG streams so adding a channel
never perturbs the draws of the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseChannel",
    "RampSchedule",
    "channel_rng",
    "channel_step",
    "draw_jumps",
    "sample_ramp_schedule",
    "stationary_std",
]


@dataclass(frozen=True)
class NoiseChannel:
    """Parameters and current value of one stochastic input channel.

    value          -- current state (pu deviation for loads, m/s for wind)
    mean           -- reversion target mu
    reversion_rate -- alpha, 1/s (must be positive)
    diffusion      -- b, units/sqrt(s)
    jump_rate      -- lambda, events/s
    jump_sigma     -- std of a single jump magnitude (channel units)
    jump_scale     -- c, dimensionless multiplier on the jump term
    """

    value: float = 0.0
    mean: float = 0.0
    reversion_rate: float = 1.0
    diffusion: float = 0.0
    jump_rate: float = 0.0
    jump_sigma: float = 0.0
    jump_scale: float = 1.0

    def __post_init__(self):
        if self.reversion_rate <= 0:
            raise ValueError(f"reversion_rate must be positive, got {self.reversion_rate}")
        if self.diffusion < 0 or self.jump_rate < 0 or self.jump_sigma < 0:
            raise ValueError("diffusion, jump_rate and jump_sigma must be non-negative")


def stationary_std(channel: NoiseChannel) -> float:
    """Stationary standard deviation of the diffusion part: b / sqrt(2 alpha)."""
    return channel.diffusion / math.sqrt(2.0 * channel.reversion_rate)


def channel_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for stream `stream` of run `seed`.

    Streams with distinct (seed, stream) pairs are statistically
    independent, so channels can be added or stepped in any grouping
    without perturbing each other's draws.
    """
    key = (int(seed) % (1 << 64)) * (1 << 64) + int(stream)
    return np.random.Generator(np.random.Philox(key=key))


def draw_jumps(rng: np.random.Generator, jump_rate: float, dt: float, jump_sigma: float) -> tuple[int, float]:
    """Draw the jump contribution over one step: (event count, summed magnitude)."""
    if jump_rate <= 0.0 or jump_sigma <= 0.0:
        return 0, 0.0
    count = int(rng.poisson(jump_rate * dt))
    if count == 0:
        return 0, 0.0
    total = float(np.sum(rng.standard_normal(count))) * jump_sigma
    return count, total


def channel_step(
    channel: NoiseChannel,
    dt: float,
    rng: np.random.Generator,
    *,
    value: float | None = None,
    mean_shift: float = 0.0,
) -> float:
    """One Euler-Maruyama update; returns the new channel value.

    `value` overrides channel.value (the engine tracks values externally);
    `mean_shift` offsets the reversion target, which is how ramp schedules
    move a wind channel's operating point.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    k = channel.value if value is None else value
    mu = channel.mean + mean_shift
    k_new = k + channel.reversion_rate * (mu - k) * dt
    if channel.diffusion > 0.0:
        k_new += channel.diffusion * math.sqrt(dt) * rng.standard_normal()
    if channel.jump_rate > 0.0 and channel.jump_sigma > 0.0:
        _, jump_total = draw_jumps(rng, channel.jump_rate, dt, channel.jump_sigma)
        k_new += channel.jump_scale * jump_total
    return float(k_new)


@dataclass(frozen=True)
class RampSchedule:
    """Stochastic ramp events that shift a wind channel's mean.

    Each event ramps the mean offset linearly from its prior level by
    `magnitude` over `duration`, then holds; contributions of successive
    events accumulate.
    """

    times: np.ndarray
    magnitudes: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        m = np.asarray(self.magnitudes, dtype=float)
        d = np.asarray(self.durations, dtype=float)
        if not (t.size == m.size == d.size):
            raise ValueError("times, magnitudes, durations must have equal length")
        if t.size and np.any(np.diff(t) <= 0):
            raise ValueError("event times must be strictly increasing")
        if np.any(d <= 0):
            raise ValueError("ramp durations must be positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "magnitudes", m)
        object.__setattr__(self, "durations", d)

    def __len__(self) -> int:
        return int(self.times.size)

    def mean_offset(self, t: float | np.ndarray) -> float | np.ndarray:
        """Accumulated mean shift at time(s) t (ramp up then hold, summed)."""
        t_arr = np.asarray(t, dtype=float)
        out = np.zeros_like(t_arr)
        for t0, mag, dur in zip(self.times, self.magnitudes, self.durations):
            out = out + mag * np.clip((t_arr - t0) / dur, 0.0, 1.0)
        return float(out) if np.isscalar(t) else out

    def to_csv(self) -> str:
        lines = ["time_s,magnitude,duration_s"]
        for t0, mag, dur in zip(self.times, self.magnitudes, self.durations):
            lines.append(f"{t0!r},{mag!r},{dur!r}")
        return "\n".join(lines) + "\n"


def sample_ramp_schedule(
    horizon: float,
    rate: float,
    magnitude_sigma: float,
    duration_range: tuple[float, float],
    rng: np.random.Generator,
) -> RampSchedule:
    """Draw a ramp schedule over [0, horizon].

    Event count ~ Poisson(rate * horizon), event times uniform on the
    horizon, magnitudes ~ Normal(0, magnitude_sigma^2), durations uniform
    on duration_range.
    """
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if rate < 0:
        raise ValueError(f"rate must be non-negative, got {rate}")
    d_lo, d_hi = duration_range
    if not (0 < d_lo <= d_hi):
        raise ValueError(f"invalid duration_range {duration_range}")
    count = int(rng.poisson(rate * horizon)) if rate > 0 else 0
    if count == 0:
        empty = np.empty(0)
        return RampSchedule(times=empty, magnitudes=empty.copy(), durations=empty.copy())
    times = np.sort(rng.uniform(0.0, horizon, size=count))
    # nudge apart any coincident draws so times stay strictly increasing
    for i in range(1, count):
        if times[i] <= times[i - 1]:
            times[i] = np.nextafter(times[i - 1], np.inf)
    magnitudes = rng.standard_normal(count) * magnitude_sigma
    durations = rng.uniform(d_lo, d_hi, size=count)
    return RampSchedule(times=times, magnitudes=magnitudes, durations=durations)
