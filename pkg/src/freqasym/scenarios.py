"""Declarative scenario configuration and seeded batch execution.

A scenario file is the same [section] key-value format as the system
files: one [scenario] block of flags plus optional noise parameter
blocks.  run_batch applies the scenario's edits to a base system, runs
one simulation per seed (in parallel), computes per-seed metrics and
aggregates them by element-wise median.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .engine import LoadNoiseParams, NoiseConfig, RampParams, WindNoiseParams, simulate
from .grid import SystemModel, scale_branch_resistances
from .metrics import MetricsReport, compute_metrics
from .sysfile import _as_kv, _parse_sections, load_system

__all__ = [
    "ParseError",
    "ValidationError",
    "BatchError",
    "Scenario",
    "SeedResult",
    "BatchResult",
    "load_scenario",
    "serialize_scenario",
    "apply_scenario",
    "prepare_system",
    "run_batch",
    "emit_results_table",
    "RESULTS_TABLE_HEADER",
]

DEFAULT_SATURATION_FACTORS: Mapping[str, float] = {"g1": 0.6, "g2": 0.5}


class ParseError(Exception):
    """Malformed scenario file (carries file/line context)."""


class ValidationError(Exception):
    """Scenario flags are mutually inconsistent."""


class BatchError(Exception):
    """Every seed of a batch failed."""


@dataclass(frozen=True)
class Scenario:
    """One study case: controller flags, disturbance sources and the
    batch protocol (horizon, step, seeds)."""

    name: str
    wind_generation: bool = False
    apc: str | None = None  # 'on' | 'off' | None (no wind)
    fdb_wind_hz: float | None = None
    fdb_conv_hz: float | None = 0.015
    agc_mode: str = "none"  # 'none' | 'conv' | 'conv-and-wind'
    wind_ramps: bool = False
    loss_scale: float = 1.0
    saturation: bool = False
    saturation_factors: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_SATURATION_FACTORS)
    )
    horizon_s: float = 7200.0
    dt_s: float = 0.02
    seeds: tuple[int, ...] = tuple(range(10))
    system_overlay: str | None = None
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    @property
    def load_noise(self) -> bool:
        return self.noise.load is not None

    @property
    def wind_noise(self) -> bool:
        return self.noise.wind is not None

    def __post_init__(self):
        object.__setattr__(self, "saturation_factors", dict(self.saturation_factors))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.agc_mode not in ("none", "conv", "conv-and-wind"):
            raise ValidationError(f"{self.name}: unknown AGC mode {self.agc_mode!r}")
        if self.apc not in (None, "on", "off"):
            raise ValidationError(f"{self.name}: apc must be on/off, got {self.apc!r}")
        if not self.wind_generation:
            for flag, label in (
                (self.apc == "on", "APC on"),
                (self.wind_noise, "wind noise"),
                (self.wind_ramps, "wind ramps"),
                (self.agc_mode == "conv-and-wind", "wind AGC participation"),
            ):
                if flag:
                    raise ValidationError(f"{self.name}: {label} requires wind generation")
        if self.wind_generation:
            if self.apc is None:
                raise ValidationError(f"{self.name}: wind scenarios must set apc on/off")
            if self.fdb_wind_hz is None or self.fdb_wind_hz <= 0:
                raise ValidationError(
                    f"{self.name}: active wind droop needs a positive fdb_wind_hz"
                )
        if self.fdb_conv_hz is not None and self.fdb_conv_hz < 0:
            raise ValidationError(f"{self.name}: fdb_conv_hz must be non-negative")
        if self.loss_scale <= 0:
            raise ValidationError(f"{self.name}: loss_scale must be positive")
        if self.horizon_s <= 0 or self.dt_s <= 0:
            raise ValidationError(f"{self.name}: horizon and dt must be positive")
        if self.wind_ramps and self.noise.ramps is None:
            object.__setattr__(
                self, "noise", replace(self.noise, ramps=RampParams())
            )
        if not self.wind_ramps and self.noise.ramps is not None:
            object.__setattr__(self, "noise", replace(self.noise, ramps=None))


# ---------------------------------------------------------------------------
# file I/O


def _flag(raw: str, path, key: str) -> bool:
    low = raw.lower()
    if low in ("yes", "on", "true", "1"):
        return True
    if low in ("no", "off", "false", "0"):
        return False
    raise ParseError(f"{path}: field {key!r}: expected yes/no, got {raw!r}")


def _opt(raw: str | None) -> str | None:
    return None if raw in (None, "-") else raw


def _num_or_none(raw: str | None, path, key: str) -> float | None:
    raw = _opt(raw)
    if raw is None:
        return None
    try:
        return float(raw)
    except ValueError as exc:
        raise ParseError(f"{path}: field {key!r}: bad number {raw!r}") from exc


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file."""
    path = Path(path)
    sections = _parse_sections(path)
    if "scenario" not in sections:
        raise ParseError(f"{path}: missing [scenario] section")
    kv = _as_kv(path, sections["scenario"])

    def get(key, default=None):
        return kv.get(key, default)

    name = get("name", path.stem)
    wind_generation = _flag(get("wind_generation", "no"), path, "wind_generation")
    apc = _opt(get("apc", "-"))
    fdb_wind = _num_or_none(get("fdb_wind_hz"), path, "fdb_wind_hz")
    fdb_conv = _num_or_none(get("fdb_conv_hz", "0.015"), path, "fdb_conv_hz")
    agc_mode = get("agc", "none").lower()
    wind_ramps = _flag(get("wind_ramps", "no"), path, "wind_ramps")
    load_noise_on = _flag(get("load_noise", "yes"), path, "load_noise")
    wind_noise_on = _flag(get("wind_noise", "no"), path, "wind_noise")
    loss_scale = float(get("loss_scale", "1.0"))
    saturation_on = _flag(get("saturation", "no"), path, "saturation")
    horizon_s = float(get("horizon_s", "7200"))
    dt_s = float(get("dt_s", "0.02"))
    seeds_raw = get("seeds", "0 1 2 3 4 5 6 7 8 9")
    try:
        seeds = tuple(int(tok) for tok in seeds_raw.split())
    except ValueError as exc:
        raise ParseError(f"{path}: field 'seeds': bad seed list {seeds_raw!r}") from exc
    overlay = _opt(get("system_overlay", "-"))

    def section_kv(section_name):
        if section_name in sections:
            return _as_kv(path, sections[section_name])
        return {}

    load_params = None
    if load_noise_on:
        lkv = section_kv("load_noise")
        load_params = LoadNoiseParams(
            alpha=float(lkv.get("alpha", 0.5)),
            sigma=float(lkv.get("sigma", 0.01)),
            jump_rate=float(lkv.get("jump_rate", 0.0)),
            jump_sigma=float(lkv.get("jump_sigma", 0.0)),
            jump_scale=float(lkv.get("jump_scale", 1.0)),
        )
    wind_params = None
    if wind_noise_on:
        wkv = section_kv("wind_noise")
        wind_params = WindNoiseParams(
            alpha=float(wkv.get("alpha", 0.05)),
            sigma_fraction=float(wkv.get("sigma_fraction", 0.03)),
        )
    ramp_params = None
    if wind_ramps:
        rkv = section_kv("wind_ramps")
        ramp_params = RampParams(
            rate=float(rkv.get("rate", 1.0 / 3600.0)),
            magnitude_sigma=float(rkv.get("magnitude_sigma", 1.0)),
            duration_min=float(rkv.get("duration_min", 300.0)),
            duration_max=float(rkv.get("duration_max", 900.0)),
        )
    sat_factors = dict(DEFAULT_SATURATION_FACTORS)
    if "saturation" in sections:
        sat_factors = {
            k: float(v) for k, v in _as_kv(path, sections["saturation"]).items()
        }

    try:
        return Scenario(
            name=name,
            wind_generation=wind_generation,
            apc=apc,
            fdb_wind_hz=fdb_wind,
            fdb_conv_hz=fdb_conv,
            agc_mode=agc_mode,
            wind_ramps=wind_ramps,
            loss_scale=loss_scale,
            saturation=saturation_on,
            saturation_factors=sat_factors,
            horizon_s=horizon_s,
            dt_s=dt_s,
            seeds=seeds,
            system_overlay=overlay,
            noise=NoiseConfig(load=load_params, wind=wind_params, ramps=ramp_params),
        )
    except ValidationError:
        raise
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def serialize_scenario(sc: Scenario) -> str:
    """Canonical text form; load(serialize(x)) == x."""

    def yn(b):
        return "yes" if b else "no"

    def opt(v):
        return "-" if v is None else v

    lines = [
        "[scenario]",
        f"name = {sc.name}",
        f"wind_generation = {yn(sc.wind_generation)}",
        f"apc = {opt(sc.apc)}",
        f"fdb_wind_hz = {opt(sc.fdb_wind_hz)}",
        f"fdb_conv_hz = {opt(sc.fdb_conv_hz)}",
        f"agc = {sc.agc_mode}",
        f"wind_ramps = {yn(sc.wind_ramps)}",
        f"load_noise = {yn(sc.load_noise)}",
        f"wind_noise = {yn(sc.wind_noise)}",
        f"loss_scale = {sc.loss_scale}",
        f"saturation = {yn(sc.saturation)}",
        f"horizon_s = {sc.horizon_s}",
        f"dt_s = {sc.dt_s}",
        "seeds = " + " ".join(str(s) for s in sc.seeds),
        f"system_overlay = {opt(sc.system_overlay)}",
    ]
    if sc.noise.load is not None:
        ln = sc.noise.load
        lines += [
            "",
            "[load_noise]",
            f"alpha = {ln.alpha}",
            f"sigma = {ln.sigma}",
            f"jump_rate = {ln.jump_rate}",
            f"jump_sigma = {ln.jump_sigma}",
            f"jump_scale = {ln.jump_scale}",
        ]
    if sc.noise.wind is not None:
        wn = sc.noise.wind
        lines += [
            "",
            "[wind_noise]",
            f"alpha = {wn.alpha}",
            f"sigma_fraction = {wn.sigma_fraction}",
        ]
    if sc.noise.ramps is not None:
        rp = sc.noise.ramps
        lines += [
            "",
            "[wind_ramps]",
            f"rate = {rp.rate}",
            f"magnitude_sigma = {rp.magnitude_sigma}",
            f"duration_min = {rp.duration_min}",
            f"duration_max = {rp.duration_max}",
        ]
    if sc.saturation:
        lines += ["", "[saturation]"]
        lines += [f"{k} = {v}" for k, v in sorted(sc.saturation_factors.items())]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# scenario application


def apply_scenario(system: SystemModel, scenario: Scenario) -> SystemModel:
    """Produce the system a scenario actually simulates: loss scaling,
    machine limit reductions and controller flag wiring.

    The wind plant must already be present (via the system overlay) when
    the scenario uses wind generation.
    """
    if scenario.wind_generation and system.wind is None:
        raise ValidationError(
            f"{scenario.name}: wind scenario but the system has no wind plant "
            "(load the wind overlay)"
        )
    if not scenario.wind_generation and system.wind is not None:
        raise ValidationError(
            f"{scenario.name}: system has a wind plant but the scenario "
            "does not use wind generation"
        )
    out = system
    if scenario.loss_scale != 1.0:
        out = scale_branch_resistances(out, scenario.loss_scale)
    if scenario.saturation:
        machines = []
        for m in out.machines:
            fac = scenario.saturation_factors.get(m.name)
            machines.append(m if fac is None else replace(m, p_max=fac * m.p_max))
        out = replace(out, machines=tuple(machines))
    if scenario.fdb_conv_hz is not None:
        governors = tuple(
            replace(g, deadband_half_width_hz=scenario.fdb_conv_hz)
            for g in out.governors
        )
        out = replace(out, governors=governors)
    if out.wind is not None:
        out = replace(
            out,
            wind=replace(
                out.wind,
                apc_enabled=scenario.apc == "on",
                apc_deadband_half_width_hz=scenario.fdb_wind_hz,
            ),
        )
    if out.agc is not None:
        if scenario.agc_mode == "none":
            out = replace(out, agc=replace(out.agc, enabled=False, participation={}))
        else:
            shares = {
                g.machine: g.agc_participation
                for g in out.governors
                if g.agc_participation > 0
            }
            total = sum(shares.values())
            if total <= 0:
                raise ValidationError(
                    f"{scenario.name}: AGC enabled but no device has a participation share"
                )
            shares = {k: v / total for k, v in shares.items()}
            includes_wind = scenario.agc_mode == "conv-and-wind"
            if includes_wind:
                w = out.wind
                wshare = w.agc_participation if w.agc_participation > 0 else 0.3
                shares = {k: v * (1.0 - wshare) for k, v in shares.items()}
                shares[w.name] = wshare
            out = replace(
                out,
                agc=replace(
                    out.agc,
                    enabled=True,
                    includes_wind=includes_wind,
                    participation=shares,
                ),
            )
    elif scenario.agc_mode != "none":
        raise ValidationError(f"{scenario.name}: scenario needs AGC but the system has none")
    return out


def prepare_system(scenario: Scenario, system_path, data_dir=None) -> SystemModel:
    """Load the base system file, merge the scenario's overlay (resolved
    against the scenario's data_dir, then the shipped data), and apply
    the scenario edits."""
    overlays = []
    if scenario.system_overlay:
        cand = Path(scenario.system_overlay)
        if not cand.is_absolute():
            for root in (data_dir, Path(system_path).parent, _shipped_data_dir()):
                if root is not None and (Path(root) / cand).exists():
                    cand = Path(root) / cand
                    break
        if not cand.exists():
            raise ValidationError(
                f"{scenario.name}: overlay file {scenario.system_overlay!r} not found"
            )
        overlays.append(cand)
    base = load_system(system_path, *overlays)
    return apply_scenario(base, scenario)


def _shipped_data_dir() -> Path:
    return Path(__file__).parent / "data"


# ---------------------------------------------------------------------------
# batch execution


@dataclass(frozen=True)
class SeedResult:
    seed: int
    report: MetricsReport
    summary: object  # RunSummary
    trace: object = None  # FrequencyTrace


@dataclass(frozen=True)
class BatchResult:
    """All seeds of one scenario plus the element-wise median aggregate."""

    scenario: Scenario
    results: tuple[SeedResult, ...]
    failures: tuple[tuple[int, str], ...]
    median_metrics: dict[str, float]
    wall_time_s: float

    @property
    def median(self) -> dict[str, float]:
        return self.median_metrics


def _run_one(args):
    system, scenario, seed, band = args
    trace, summary = simulate(
        system,
        scenario.noise,
        scenario.horizon_s,
        dt=scenario.dt_s,
        seed=seed,
    )
    report = compute_metrics(trace, band_half_width=band)
    return SeedResult(seed=seed, report=report, summary=summary, trace=trace)


def _aggregate(scenario, results, failures, t0) -> BatchResult:
    results = tuple(sorted(results, key=lambda r: r.seed))
    med: dict[str, float] = {}
    if results:
        for name in MetricsReport.NUMERIC_FIELDS:
            med[name] = float(np.median([getattr(r.report, name) for r in results]))
        med["p_loss"] = float(np.median([r.summary.p_loss_avg for r in results]))
        med["q_loss"] = float(np.median([r.summary.q_loss_avg for r in results]))
    return BatchResult(
        scenario=scenario,
        results=results,
        failures=tuple(sorted(failures)),
        median_metrics=med,
        wall_time_s=time.perf_counter() - t0,
    )


def run_batch(
    scenario: Scenario,
    system: SystemModel,
    band_half_width: float = 0.1,
    workers: int | None = None,
) -> BatchResult:
    """Simulate every seed of the scenario on the prepared system.

    Seeds run in parallel (up to `workers` processes); a seed's failure is
    recorded without aborting its siblings.  Raises BatchError only when
    every seed fails.
    """
    if not scenario.seeds:
        raise ValueError(f"{scenario.name}: seed list is empty")
    t0 = time.perf_counter()
    jobs = [(system, scenario, seed, band_half_width) for seed in scenario.seeds]
    results: list[SeedResult] = []
    failures: list[tuple[int, str]] = []
    if workers is None:
        import os

        workers = max(1, min(len(jobs), os.cpu_count() or 1))
    if workers <= 1 or len(jobs) == 1:
        for job in jobs:
            try:
                results.append(_run_one(job))
            except Exception as exc:  # noqa: BLE001 - per-seed isolation
                failures.append((job[2], f"{type(exc).__name__}: {exc}"))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_run_one, job): job[2] for job in jobs}
            for fut, seed in futs.items():
                try:
                    results.append(fut.result())
                except Exception as exc:  # noqa: BLE001
                    failures.append((seed, f"{type(exc).__name__}: {exc}"))
    if not results:
        raise BatchError(
            f"{scenario.name}: every seed failed: "
            + "; ".join(f"seed {s}: {m}" for s, m in failures)
        )
    return _aggregate(scenario, results, failures, t0)


# ---------------------------------------------------------------------------
# results table

RESULTS_TABLE_HEADER = (
    "scenario,sigma_f_hz,sigma_minus_hz,sigma_plus_hz,delta_sigma_hz,"
    "minutes_outside,minutes_above,minutes_below,p_loss_pu,q_loss_pu"
)

_TABLE_FIELDS = (
    "sigma",
    "sigma_minus",
    "sigma_plus",
    "delta_sigma",
    "minutes_outside",
    "minutes_above",
    "minutes_below",
    "p_loss",
    "q_loss",
)


def emit_results_table(results: Mapping[object, BatchResult | None]) -> str:
    """CSV summary, one row per scenario in key order (numeric keys sort
    numerically); a None entry emits a blank row for that scenario."""

    def sort_key(k):
        return (0, float(k)) if isinstance(k, (int, float)) else (1, str(k))

    lines = [RESULTS_TABLE_HEADER]
    for key in sorted(results.keys(), key=sort_key):
        batch = results[key]
        if batch is None:
            lines.append(f"{key}" + "," * 9)
            continue
        med = batch.median_metrics
        vals = ",".join(f"{med[f]:.6g}" for f in _TABLE_FIELDS)
        lines.append(f"{key},{vals}")
    return "\n".join(lines) + "\n"
