"""Frequency-quality metrics: split standard deviations, the asymmetry
index, the 100 mHz criterion, and histogram density estimation.

All functions are pure and operate on immutable ``FrequencyTrace`` objects,
so they can be applied identically to simulated and measured traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EmptyTrace",
    "FrequencyTrace",
    "MetricsReport",
    "HistogramPD",
    "split_sigma",
    "sigma_total",
    "asymmetry",
    "minutes_outside_band",
    "estimate_pd",
    "compute_metrics",
    "report_to_csv",
    "report_to_text",
    "histogram_to_csv",
    "trace_to_csv",
]


class EmptyTrace(ValueError):
    """Raised when a metric is requested on a trace with no samples."""


@dataclass(frozen=True)
class FrequencyTrace:
    """Uniformly sampled frequency series.

    samples       -- frequency values in Hz
    sample_period -- spacing between samples, seconds
    f_nominal     -- nominal system frequency, Hz
    """

    samples: np.ndarray
    sample_period: float = 1.0
    f_nominal: float = 50.0

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", arr)
        if self.sample_period <= 0:
            raise ValueError(f"sample_period must be positive, got {self.sample_period}")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("trace contains non-finite samples")

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return self.samples.size * self.sample_period


@dataclass(frozen=True)
class MetricsReport:
    """One trace's frequency-quality summary.

    sigma_minus / sigma_plus are the RMS deviations from nominal computed
    over the strictly below- / above-nominal samples; delta_sigma is their
    absolute difference (the asymmetry index).  Minutes count time spent
    strictly outside the +/- band around nominal.
    """

    f_nominal: float
    band_half_width: float
    n_total: int
    n_minus: int
    n_plus: int
    sigma: float
    sigma_minus: float
    sigma_plus: float
    delta_sigma: float
    minutes_outside: float
    minutes_above: float
    minutes_below: float
    duration_s: float

    NUMERIC_FIELDS = (
        "sigma",
        "sigma_minus",
        "sigma_plus",
        "delta_sigma",
        "minutes_outside",
        "minutes_above",
        "minutes_below",
        "n_total",
        "n_minus",
        "n_plus",
        "duration_s",
    )


@dataclass(frozen=True)
class HistogramPD:
    """Normalized density histogram of a frequency trace.

    bin_edges has one more entry than densities; sum(density * width) == 1.
    """

    bin_edges: np.ndarray
    densities: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bin_edges", np.asarray(self.bin_edges, dtype=float))
        object.__setattr__(self, "densities", np.asarray(self.densities, dtype=float))
        if self.bin_edges.size != self.densities.size + 1:
            raise ValueError("bin_edges must have len(densities) + 1 entries")

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


def _require_samples(trace: FrequencyTrace) -> np.ndarray:
    if trace.samples.size == 0:
        raise EmptyTrace("trace has no samples")
    return trace.samples


def split_sigma(trace: FrequencyTrace) -> tuple[float, int, float, int]:
    """Split RMS deviations about nominal: (sigma_minus, n_minus, sigma_plus, n_plus).

    Samples strictly below nominal feed sigma_minus, strictly above feed
    sigma_plus; samples exactly at nominal belong to neither side.  An
    empty side reports sigma 0 with count 0.
    """
    f = _require_samples(trace)
    dev = f - trace.f_nominal
    below = dev[dev < 0.0]
    above = dev[dev > 0.0]
    sigma_minus = float(np.sqrt(np.mean(below**2))) if below.size else 0.0
    sigma_plus = float(np.sqrt(np.mean(above**2))) if above.size else 0.0
    return sigma_minus, int(below.size), sigma_plus, int(above.size)


def sigma_total(sigma_minus: float, n_minus: int, sigma_plus: float, n_plus: int) -> float:
    """Weighted-average total standard deviation of the two sides.

    Equals the direct RMS deviation about nominal whenever no sample sits
    exactly at nominal.
    """
    n = n_minus + n_plus
    if n <= 0:
        raise ValueError("sigma_total requires at least one off-nominal sample")
    return float(np.sqrt((n_plus * sigma_plus**2 + n_minus * sigma_minus**2) / n))


def asymmetry(sigma_minus: float, sigma_plus: float) -> float:
    """Asymmetry index: absolute difference of the two split sigmas."""
    if sigma_minus < 0 or sigma_plus < 0:
        raise ValueError("split sigmas must be non-negative")
    return abs(sigma_minus - sigma_plus)


def minutes_outside_band(
    trace: FrequencyTrace, band_half_width: float = 0.1
) -> tuple[float, float, float]:
    """Minutes spent outside nominal +/- band: (total, above, below).

    Samples exactly at a band edge count as inside.
    """
    f = _require_samples(trace)
    per_sample_min = trace.sample_period / 60.0
    above = float(np.count_nonzero(f > trace.f_nominal + band_half_width)) * per_sample_min
    below = float(np.count_nonzero(f < trace.f_nominal - band_half_width)) * per_sample_min
    return above + below, above, below


def estimate_pd(trace: FrequencyTrace, bin_width: float = 0.005) -> HistogramPD:
    """Density histogram with bins aligned so that nominal is a bin center."""
    if bin_width <= 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    f = _require_samples(trace)
    # integer bin index of each sample relative to the nominal-centered grid
    idx = np.round((f - trace.f_nominal) / bin_width).astype(int)
    lo, hi = int(idx.min()), int(idx.max())
    edges = trace.f_nominal + (np.arange(lo, hi + 2) - 0.5) * bin_width
    counts, _ = np.histogram(f, bins=edges)
    densities = counts / (f.size * bin_width)
    return HistogramPD(bin_edges=edges, densities=densities)


def compute_metrics(trace: FrequencyTrace, band_half_width: float = 0.1) -> MetricsReport:
    """Full MetricsReport for a trace (split sigmas, asymmetry, band minutes)."""
    f = _require_samples(trace)
    s_minus, n_minus, s_plus, n_plus = split_sigma(trace)
    if n_minus + n_plus:
        sigma = sigma_total(s_minus, n_minus, s_plus, n_plus)
    else:
        sigma = 0.0  # every sample exactly at nominal
    total, above, below = minutes_outside_band(trace, band_half_width)
    return MetricsReport(
        f_nominal=trace.f_nominal,
        band_half_width=band_half_width,
        n_total=int(f.size),
        n_minus=n_minus,
        n_plus=n_plus,
        sigma=sigma,
        sigma_minus=s_minus,
        sigma_plus=s_plus,
        delta_sigma=asymmetry(s_minus, s_plus),
        minutes_outside=total,
        minutes_above=above,
        minutes_below=below,
        duration_s=trace.duration_s,
    )


_CSV_COLUMNS = (
    ("sigma_f_hz", "sigma"),
    ("sigma_minus_hz", "sigma_minus"),
    ("sigma_plus_hz", "sigma_plus"),
    ("delta_sigma_hz", "delta_sigma"),
    ("minutes_outside", "minutes_outside"),
    ("minutes_above", "minutes_above"),
    ("minutes_below", "minutes_below"),
)


def report_to_csv(report: MetricsReport) -> str:
    """Machine-readable CSV (header + one row) in results-table column order."""
    header = ",".join(name for name, _ in _CSV_COLUMNS)
    row = ",".join(repr(getattr(report, attr)) for _, attr in _CSV_COLUMNS)
    return f"{header}\n{row}\n"


def report_to_text(report: MetricsReport) -> str:
    """Human-readable metrics table."""
    band_mhz = report.band_half_width * 1e3
    lines = [
        f"nominal frequency      {report.f_nominal:.3f} Hz",
        f"samples                {report.n_total} "
        f"(below {report.n_minus}, above {report.n_plus})",
        f"duration               {report.duration_s:.1f} s",
        f"sigma_f                {report.sigma:.6f} Hz",
        f"sigma_f-               {report.sigma_minus:.6f} Hz",
        f"sigma_f+               {report.sigma_plus:.6f} Hz",
        f"delta_sigma_f          {report.delta_sigma:.6f} Hz",
        f"minutes outside +/-{band_mhz:.0f} mHz  {report.minutes_outside:.4f}",
        f"  above band           {report.minutes_above:.4f}",
        f"  below band           {report.minutes_below:.4f}",
    ]
    return "\n".join(lines) + "\n"


def histogram_to_csv(hist: HistogramPD) -> str:
    """CSV export for external plotting: bin_center_hz,density."""
    lines = ["bin_center_hz,density"]
    for c, d in zip(hist.bin_centers, hist.densities):
        lines.append(f"{c!r},{d!r}")
    return "\n".join(lines) + "\n"


def trace_to_csv(trace: FrequencyTrace) -> str:
    """Trace export as time_s,frequency_hz rows.

    Values are written with full float repr so a parse round-trip is exact.
    """
    lines = ["time_s,frequency_hz"]
    for i, f in enumerate(trace.samples):
        lines.append(f"{i * trace.sample_period!r},{float(f)!r}")
    return "\n".join(lines) + "\n"
