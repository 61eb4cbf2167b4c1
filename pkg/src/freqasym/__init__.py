"""Stochastic grid frequency simulation and frequency-distribution
asymmetry analysis."""

from .grid import (
    AgcController,
    Branch,
    Bus,
    Governor,
    GridError,
    IslandedNetwork,
    NonConvergence,
    StochasticLoad,
    SynchronousMachine,
    SystemModel,
    WindPlant,
    agc_step,
    apc_power_order,
    apply_deadband,
    machine_derivatives,
    scale_branch_resistances,
    solve_power_flow,
    wind_available_power,
)
from .metrics import (
    EmptyTrace,
    FrequencyTrace,
    HistogramPD,
    MetricsReport,
    asymmetry,
    compute_metrics,
    estimate_pd,
    minutes_outside_band,
    sigma_total,
    split_sigma,
)
from .stochastic import NoiseChannel, RampSchedule, channel_step, sample_ramp_schedule
from .engine import (
    Engine,
    LoadNoiseParams,
    NewtonDivergence,
    NoiseConfig,
    NoSynchronousInertia,
    RampParams,
    RunSummary,
    SimState,
    WindNoiseParams,
    coi_frequency,
    simulate,
)
from .sysfile import SysFileError, load_system
from .scenarios import (
    BatchResult,
    Scenario,
    ValidationError,
    apply_scenario,
    emit_results_table,
    load_scenario,
    prepare_system,
    run_batch,
    serialize_scenario,
)
from .analyzer import (
    ComparisonSummary,
    GapPolicyViolation,
    MalformedRow,
    MismatchedNominalFrequency,
    NonMonotonicTimestamps,
    OutOfRangeFrequency,
    analyze,
    compare_windows,
    parse_frequency_csv,
)

__version__ = "0.1.0"
