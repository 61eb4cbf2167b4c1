"""Offline analyzer for 1-second frequency measurement files.

Ingests SCADA-style CSV exports (timestamp + frequency columns), turns
them into uniform traces with explicit gap handling, and computes the
same metrics report and density histogram the simulator produces, so
measured and simulated windows are directly comparable.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .metrics import (
    EmptyTrace,
    FrequencyTrace,
    HistogramPD,
    MetricsReport,
    compute_metrics,
    estimate_pd,
)

__all__ = [
    "AnalyzerError",
    "MalformedRow",
    "NonMonotonicTimestamps",
    "OutOfRangeFrequency",
    "GapPolicyViolation",
    "MismatchedNominalFrequency",
    "ComparisonSummary",
    "parse_frequency_csv",
    "analyze",
    "compare_windows",
]

log = logging.getLogger(__name__)

GAP_POLICIES = ("error", "drop", "hold-last")


class AnalyzerError(Exception):
    """Base class for measurement-file problems."""


class MalformedRow(AnalyzerError):
    def __init__(self, path, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class NonMonotonicTimestamps(AnalyzerError):
    def __init__(self, path, line_no: int):
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: timestamp does not increase")


class OutOfRangeFrequency(AnalyzerError):
    def __init__(self, path, line_no: int, value: float):
        self.line_no = line_no
        self.value = value
        super().__init__(f"{path}:{line_no}: frequency {value} Hz outside sanity window")


class GapPolicyViolation(AnalyzerError):
    def __init__(self, path, line_no: int, missing: int):
        self.line_no = line_no
        self.missing = missing
        super().__init__(
            f"{path}:{line_no}: {missing} missing sample(s) before this row "
            "(gap policy is 'error')"
        )


class MismatchedNominalFrequency(AnalyzerError):
    """Two reports being compared use different nominal frequencies."""


_TIME_HEADERS = ("time", "time_s", "timestamp", "t", "epoch", "epoch_s", "datetime")
_FREQ_HEADERS = ("f", "f_hz", "hz",)


def _find_columns(path, header: list[str]) -> tuple[int, int]:
    norm = [h.strip().lower() for h in header]
    t_col = f_col = -1
    for i, h in enumerate(norm):
        if t_col < 0 and (h in _TIME_HEADERS or h.startswith("time")):
            t_col = i
        elif f_col < 0 and (h in _FREQ_HEADERS or h.startswith("freq")):
            f_col = i
    if t_col < 0 or f_col < 0:
        raise MalformedRow(
            path, 1, "header must declare a timestamp column and a frequency column"
        )
    return t_col, f_col


def _parse_timestamp(path, line_no: int, raw: str) -> float:
    raw = raw.strip()
    try:
        return float(raw)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(raw.replace("Z", "+00:00")).timestamp()
    except ValueError as exc:
        raise MalformedRow(path, line_no, f"bad timestamp {raw!r}") from exc


def parse_frequency_csv(
    path,
    gap_policy: str = "error",
    f_nominal: float = 50.0,
    sample_period: float | None = None,
    sanity_window_hz: float = 5.0,
) -> FrequencyTrace:
    """Read a timestamped frequency CSV into a uniform trace.

    The sample period is taken from `sample_period` or inferred as the
    median timestamp spacing.  Gaps (spacing of 2+ periods) are handled
    per `gap_policy`: 'error' rejects the file, 'drop' shortens the
    trace, 'hold-last' repeats the previous sample; either repair is
    logged.  Frequencies outside f_nominal +/- sanity_window_hz are
    rejected as data-integrity failures.
    """
    if gap_policy not in GAP_POLICIES:
        raise ValueError(f"unknown gap policy {gap_policy!r}; expected one of {GAP_POLICIES}")
    path = Path(path)
    times: list[float] = []
    freqs: list[float] = []
    line_nos: list[int] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyTrace(f"{path}: file is empty") from None
        t_col, f_col = _find_columns(path, header)
        n_cols = max(t_col, f_col) + 1
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < n_cols:
                raise MalformedRow(path, line_no, f"expected {n_cols}+ fields, got {len(row)}")
            t = _parse_timestamp(path, line_no, row[t_col])
            try:
                f = float(row[f_col])
            except ValueError as exc:
                raise MalformedRow(
                    path, line_no, f"bad frequency {row[f_col]!r}"
                ) from exc
            if abs(f - f_nominal) > sanity_window_hz:
                raise OutOfRangeFrequency(path, line_no, f)
            if times and t <= times[-1]:
                raise NonMonotonicTimestamps(path, line_no)
            times.append(t)
            freqs.append(f)
            line_nos.append(line_no)
    if not times:
        raise EmptyTrace(f"{path}: no data rows")

    if sample_period is None:
        if len(times) < 2:
            sample_period = 1.0
        else:
            sample_period = float(np.median(np.diff(times)))
    if sample_period <= 0:
        raise ValueError(f"sample period must be positive, got {sample_period}")

    out: list[float] = [freqs[0]]
    for i in range(1, len(times)):
        ratio = (times[i] - times[i - 1]) / sample_period
        steps = int(round(ratio))
        if abs(ratio - steps) > 0.05 or steps < 1:
            raise MalformedRow(
                path,
                line_nos[i],
                f"irregular sample spacing {times[i] - times[i - 1]:.6g}s "
                f"(declared period {sample_period:.6g}s)",
            )
        missing = steps - 1
        if missing:
            if gap_policy == "error":
                raise GapPolicyViolation(path, line_nos[i], missing)
            if gap_policy == "hold-last":
                out.extend([out[-1]] * missing)
            log.warning(
                "%s:%d: %d missing sample(s) handled by policy %r",
                path, line_nos[i], missing, gap_policy,
            )
        out.append(freqs[i])
    return FrequencyTrace(
        samples=np.asarray(out), sample_period=sample_period, f_nominal=f_nominal
    )


def analyze(
    trace: FrequencyTrace, band_half_width: float = 0.1, bin_width: float = 0.005
) -> tuple[MetricsReport, HistogramPD]:
    """Full metrics report plus density histogram for one trace."""
    report = compute_metrics(trace, band_half_width=band_half_width)
    hist = estimate_pd(trace, bin_width=bin_width)
    return report, hist


_COMPARED_FIELDS = (
    "sigma",
    "sigma_minus",
    "sigma_plus",
    "delta_sigma",
    "minutes_outside",
    "minutes_above",
    "minutes_below",
)


@dataclass(frozen=True)
class ComparisonSummary:
    """Metric deltas between two analysis windows (b minus a): positive
    means window B is worse."""

    f_nominal: float
    band_half_width: float
    deltas: dict[str, float]

    def to_text(self) -> str:
        lines = [f"{'metric':<18}{'delta (B - A)':>16}"]
        for name in _COMPARED_FIELDS:
            lines.append(f"{name:<18}{self.deltas[name]:>16.6f}")
        return "\n".join(lines) + "\n"


def compare_windows(report_a: MetricsReport, report_b: MetricsReport) -> ComparisonSummary:
    """Side-by-side metric deltas for two windows measured the same way."""
    if report_a.f_nominal != report_b.f_nominal:
        raise MismatchedNominalFrequency(
            f"nominal frequencies differ: {report_a.f_nominal} vs {report_b.f_nominal}"
        )
    if report_a.band_half_width != report_b.band_half_width:
        raise ValueError(
            f"band widths differ: {report_a.band_half_width} vs {report_b.band_half_width}"
        )
    deltas = {
        name: getattr(report_b, name) - getattr(report_a, name)
        for name in _COMPARED_FIELDS
    }
    return ComparisonSummary(
        f_nominal=report_a.f_nominal,
        band_half_width=report_a.band_half_width,
        deltas=deltas,
    )
