"""Static network and device description for the adapted 9-bus test grid:
buses, branches, synchronous machines, governors, AGC, a reduced-order
wind plant and stochastic loads, plus the Newton power flow used to
initialize dynamic runs.

All model objects are frozen dataclasses; scenario edits produce new
copies, so a constructed system can be shared freely across parallel runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping

import numpy as np

__all__ = [
    "GridError",
    "NonConvergence",
    "IslandedNetwork",
    "Bus",
    "Branch",
    "SynchronousMachine",
    "Governor",
    "AgcController",
    "WindPlant",
    "StochasticLoad",
    "SystemModel",
    "PowerFlowSolution",
    "build_ybus",
    "solve_power_flow",
    "scale_branch_resistances",
    "apply_deadband",
    "droop_command",
    "machine_electrical_power",
    "machine_derivatives",
    "wind_available_power",
    "apc_power_order",
    "agc_step",
]


class GridError(Exception):
    """Base class for grid-model errors."""


class NonConvergence(GridError):
    """Newton power flow exceeded its iteration cap."""

    def __init__(self, iterations: int, worst_residual: float):
        self.iterations = iterations
        self.worst_residual = worst_residual
        super().__init__(
            f"power flow did not converge in {iterations} iterations "
            f"(worst residual {worst_residual:.3e})"
        )


class IslandedNetwork(GridError):
    """The branch set does not connect every bus."""


@dataclass(frozen=True)
class Bus:
    """Network node.  voltage_magnitude doubles as the setpoint for
    slack/PV buses and the initial guess for PQ buses."""

    id: int
    type: str = "pq"  # one of: slack, pv, pq
    voltage_magnitude: float = 1.0
    voltage_angle: float = 0.0

    def __post_init__(self):
        if self.type not in ("slack", "pv", "pq"):
            raise ValueError(f"bus {self.id}: unknown type {self.type!r}")
        if self.voltage_magnitude <= 0:
            raise ValueError(f"bus {self.id}: voltage magnitude must be positive")


@dataclass(frozen=True)
class Branch:
    """Series r + jx branch with total line-charging susceptance b.

    resistance_scale is a multiplier on r (loss-study knob); the effective
    resistance is resistance * resistance_scale.
    """

    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    shunt_susceptance: float = 0.0
    resistance_scale: float = 1.0

    def __post_init__(self):
        if self.reactance == 0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: reactance must be nonzero")
        if self.resistance < 0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: negative resistance")
        if self.resistance_scale <= 0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: resistance_scale must be positive")

    @property
    def effective_resistance(self) -> float:
        return self.resistance * self.resistance_scale


@dataclass(frozen=True)
class SynchronousMachine:
    """Classical machine: constant EMF behind transient reactance.

    mechanical_power is the dispatch; rotor_angle/rotor_speed and
    emf_magnitude are filled in by equilibrium initialization.
    """

    name: str
    bus: int
    inertia_h: float
    damping_d: float = 0.0
    transient_reactance: float = 0.1
    mechanical_power: float = 0.0
    emf_magnitude: float = 0.0
    p_max: float = 99.0
    p_min: float = 0.0
    rotor_angle: float = 0.0
    rotor_speed: float = 1.0

    def __post_init__(self):
        if self.inertia_h <= 0:
            raise ValueError(f"machine {self.name}: inertia must be positive")
        if not (self.p_min <= self.mechanical_power <= self.p_max):
            raise ValueError(
                f"machine {self.name}: dispatch {self.mechanical_power} outside "
                f"[{self.p_min}, {self.p_max}]"
            )


@dataclass(frozen=True)
class Governor:
    """Droop governor with deadband and first-order servo."""

    machine: str
    droop_r: float = 0.05
    deadband_half_width_hz: float = 0.015
    servo_time_constant: float = 0.5
    output_min: float = -0.25
    output_max: float = 0.25
    agc_participation: float = 0.0

    def __post_init__(self):
        if self.droop_r <= 0:
            raise ValueError(f"governor on {self.machine}: droop must be positive")
        if self.deadband_half_width_hz < 0:
            raise ValueError(f"governor on {self.machine}: negative deadband")
        if self.output_min > self.output_max:
            raise ValueError(f"governor on {self.machine}: output limits inverted")
        if self.servo_time_constant <= 0:
            raise ValueError(f"governor on {self.machine}: servo time constant must be positive")


@dataclass(frozen=True)
class AgcController:
    """Single-area integral frequency restoration.

    state_p_agc integrates -Ki * beta * (f_coi - f_nominal) and is clamped
    to [state_min, state_max]; the correction is split across devices by
    the participation map.
    """

    integral_gain_ki: float = 0.1
    bias_beta: float = 1.2
    participation: Mapping[str, float] = field(default_factory=dict)
    state_p_agc: float = 0.0
    enabled: bool = True
    includes_wind: bool = False
    state_min: float = -0.5
    state_max: float = 0.5

    def __post_init__(self):
        # plain dict (not a mapping proxy) so models stay picklable for
        # parallel seed workers
        object.__setattr__(self, "participation", dict(self.participation))
        if self.enabled and self.participation:
            total = sum(self.participation.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"AGC participation sums to {total}, expected 1")
        if not (self.state_min <= self.state_p_agc <= self.state_max):
            raise ValueError("AGC state outside its headroom bounds")


@dataclass(frozen=True)
class WindPlant:
    """Reduced-order converter-interfaced wind plant.

    Curtailed below its available power to hold regulation reserve; the
    droop response uses the tight deadband when APC is on and the wide
    contingency deadband when off.  Unlike machine governors, which act
    on shaft speed, the plant controller acts on a filtered frequency
    measurement sampled every control_cycle_s seconds (the dispatch
    cycle; 0 means continuous).
    """

    name: str
    bus: int
    rated_power: float
    cut_in_speed: float = 4.0
    rated_speed: float = 13.0
    cut_out_speed: float = 25.0
    curtailment_fraction: float = 0.2
    apc_enabled: bool = False
    apc_deadband_half_width_hz: float = 0.2
    apc_droop: float = 0.01
    converter_time_constant: float = 5.0
    measurement_time_constant: float = 5.0
    control_cycle_s: float = 4.0
    mean_wind_speed: float = 12.5
    agc_participation: float = 0.0

    def __post_init__(self):
        if not (0 < self.cut_in_speed < self.rated_speed < self.cut_out_speed):
            raise ValueError(f"wind plant {self.name}: speed thresholds must be ordered")
        if not (0 <= self.curtailment_fraction < 1):
            raise ValueError(f"wind plant {self.name}: curtailment must be in [0, 1)")
        if self.rated_power <= 0:
            raise ValueError(f"wind plant {self.name}: rated power must be positive")
        if self.apc_droop <= 0 or self.converter_time_constant <= 0:
            raise ValueError(f"wind plant {self.name}: droop and converter lag must be positive")
        if self.measurement_time_constant <= 0:
            raise ValueError(f"wind plant {self.name}: measurement lag must be positive")
        if self.control_cycle_s < 0:
            raise ValueError(f"wind plant {self.name}: control cycle must be non-negative")


@dataclass(frozen=True)
class StochasticLoad:
    """Constant-power-factor load perturbed multiplicatively by one noise
    channel: p = base_p * (1 + k), q = base_q * (1 + k)."""

    bus: int
    base_p: float
    base_q: float = 0.0
    noise_channel: int = -1  # index into the run's channel vector; -1 = none


@dataclass(frozen=True)
class SystemModel:
    """Complete static description of the study system."""

    base_mva: float
    f_nominal: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    machines: tuple[SynchronousMachine, ...] = ()
    governors: tuple[Governor, ...] = ()
    agc: AgcController | None = None
    wind: WindPlant | None = None
    loads: tuple[StochasticLoad, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "machines", tuple(self.machines))
        object.__setattr__(self, "governors", tuple(self.governors))
        object.__setattr__(self, "loads", tuple(self.loads))
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate bus ids")
        slack = [b for b in self.buses if b.type == "slack"]
        if len(slack) != 1:
            raise ValueError(f"system must have exactly one slack bus, found {len(slack)}")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise ValueError(f"branch {br.from_bus}-{br.to_bus} references unknown bus")
        names = [m.name for m in self.machines]
        if len(set(names)) != len(names):
            raise ValueError("duplicate machine names")
        for m in self.machines:
            if m.bus not in known:
                raise ValueError(f"machine {m.name} on unknown bus {m.bus}")
        for g in self.governors:
            if g.machine not in names:
                raise ValueError(f"governor references unknown machine {g.machine}")
        if self.wind is not None and self.wind.bus not in known:
            raise ValueError(f"wind plant on unknown bus {self.wind.bus}")
        for ld in self.loads:
            if ld.bus not in known:
                raise ValueError(f"load on unknown bus {ld.bus}")

    @property
    def omega_nominal(self) -> float:
        return 2.0 * math.pi * self.f_nominal

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def governor_for(self, machine_name: str) -> Governor | None:
        for g in self.governors:
            if g.machine == machine_name:
                return g
        return None

    def slack_bus(self) -> Bus:
        return next(b for b in self.buses if b.type == "slack")


# ---------------------------------------------------------------------------
# network equations


def build_ybus(system: SystemModel) -> np.ndarray:
    """Dense complex bus admittance matrix (effective resistances applied)."""
    n = len(system.buses)
    idx = system.bus_index()
    y = np.zeros((n, n), dtype=complex)
    for br in system.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.effective_resistance, br.reactance)
        ysh = 0.5j * br.shunt_susceptance
        y[i, i] += ys + ysh
        y[j, j] += ys + ysh
        y[i, j] -= ys
        y[j, i] -= ys
    return y


def _check_connected(system: SystemModel):
    n = len(system.buses)
    if n == 0:
        return
    idx = system.bus_index()
    adj: list[list[int]] = [[] for _ in range(n)]
    for br in system.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != n:
        missing = [system.buses[i].id for i in range(n) if i not in seen]
        raise IslandedNetwork(f"buses {missing} are not connected to the slack")


def network_injections(ybus: np.ndarray, v_mag: np.ndarray, v_ang: np.ndarray) -> np.ndarray:
    """Complex power drawn from each bus into the network: S = V (Y V)*."""
    v = v_mag * np.exp(1j * v_ang)
    return v * np.conj(ybus @ v)


@dataclass(frozen=True)
class PowerFlowSolution:
    """Converged steady-state network solution."""

    bus_ids: tuple[int, ...]
    v_mag: np.ndarray
    v_ang: np.ndarray
    p_injection: np.ndarray  # net generation minus load at each bus, pu
    q_injection: np.ndarray
    machine_p: Mapping[str, float]
    machine_q: Mapping[str, float]
    wind_p: float
    wind_q: float
    p_loss: float
    q_loss: float
    residual: float
    iterations: int


def _scheduled_injections(system: SystemModel) -> tuple[np.ndarray, np.ndarray]:
    """Scheduled P (all buses) and Q (loads only) at base load, pu."""
    n = len(system.buses)
    idx = system.bus_index()
    p = np.zeros(n)
    q = np.zeros(n)
    for m in system.machines:
        p[idx[m.bus]] += m.mechanical_power
    if system.wind is not None:
        w = system.wind
        p[idx[w.bus]] += (1.0 - w.curtailment_fraction) * wind_available_power(
            w.mean_wind_speed, w
        )
    for ld in system.loads:
        p[idx[ld.bus]] -= ld.base_p
        q[idx[ld.bus]] -= ld.base_q
    return p, q


def solve_power_flow(
    system: SystemModel, tol: float = 1e-10, max_iter: int = 50
) -> PowerFlowSolution:
    """Newton-Raphson power flow in polar coordinates.

    PV buses hold voltage magnitude and scheduled P; the slack bus holds
    magnitude and angle.  Converges to max-norm mismatch below tol.
    """
    _check_connected(system)
    n = len(system.buses)
    idx = system.bus_index()
    ybus = build_ybus(system)
    p_sched, q_sched = _scheduled_injections(system)

    types = [b.type for b in system.buses]
    slack = types.index("slack")
    pv = [i for i, t in enumerate(types) if t == "pv"]
    pq = [i for i, t in enumerate(types) if t == "pq"]
    p_rows = [i for i in range(n) if i != slack]

    v_mag = np.array([b.voltage_magnitude for b in system.buses], dtype=float)
    v_ang = np.array([b.voltage_angle for b in system.buses], dtype=float)

    def mismatch():
        s = network_injections(ybus, v_mag, v_ang)
        dp = p_sched - s.real
        dq = q_sched - s.imag
        return np.concatenate([dp[p_rows], dq[pq]])

    residual = np.inf
    for it in range(max_iter + 1):
        mis = mismatch()
        residual = float(np.max(np.abs(mis))) if mis.size else 0.0
        if residual < tol:
            break
        if it == max_iter:
            raise NonConvergence(max_iter, residual)
        v = v_mag * np.exp(1j * v_ang)
        i_inj = ybus @ v
        diag_v = np.diag(v)
        diag_i = np.diag(i_inj)
        diag_vn = np.diag(np.exp(1j * v_ang))
        ds_da = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
        ds_dm = diag_v @ np.conj(ybus @ diag_vn) + np.conj(diag_i) @ diag_vn
        j11 = ds_da.real[np.ix_(p_rows, p_rows)]
        j12 = ds_dm.real[np.ix_(p_rows, pq)]
        j21 = ds_da.imag[np.ix_(pq, p_rows)]
        j22 = ds_dm.imag[np.ix_(pq, pq)]
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, mis)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(it, residual) from exc
        # damped update: halve the step while the mismatch grows
        lam = 1.0
        base_norm = residual
        for _ in range(6):
            v_ang_try = v_ang.copy()
            v_mag_try = v_mag.copy()
            v_ang_try[p_rows] += lam * dx[: len(p_rows)]
            v_mag_try[pq] += lam * dx[len(p_rows) :]
            if np.all(v_mag_try > 0.05):
                s_try = network_injections(ybus, v_mag_try, v_ang_try)
                mis_try = np.concatenate(
                    [(p_sched - s_try.real)[p_rows], (q_sched - s_try.imag)[pq]]
                )
                if np.max(np.abs(mis_try)) < base_norm or lam < 0.2:
                    break
            lam *= 0.5
        v_ang, v_mag = v_ang_try, v_mag_try

    s = network_injections(ybus, v_mag, v_ang)
    # recover machine/wind injections: slack and PV Q are network-determined
    machine_p: dict[str, float] = {}
    machine_q: dict[str, float] = {}
    load_p = np.zeros(n)
    load_q = np.zeros(n)
    for ld in system.loads:
        load_p[idx[ld.bus]] += ld.base_p
        load_q[idx[ld.bus]] += ld.base_q
    gen_p = s.real + load_p
    gen_q = s.imag + load_q
    # buses may host at most one injecting device in this model
    for m in system.machines:
        b = idx[m.bus]
        machine_p[m.name] = float(gen_p[b])
        machine_q[m.name] = float(gen_q[b])
    wind_p = wind_q = 0.0
    if system.wind is not None:
        b = idx[system.wind.bus]
        wind_p = float(gen_p[b])
        wind_q = float(gen_q[b])
    p_loss = float(np.sum(gen_p) - np.sum(load_p))
    q_loss = float(np.sum(gen_q) - np.sum(load_q))
    return PowerFlowSolution(
        bus_ids=tuple(b.id for b in system.buses),
        v_mag=v_mag,
        v_ang=v_ang,
        p_injection=s.real,
        q_injection=s.imag,
        machine_p=MappingProxyType(machine_p),
        machine_q=MappingProxyType(machine_q),
        wind_p=wind_p,
        wind_q=wind_q,
        p_loss=p_loss,
        q_loss=q_loss,
        residual=residual,
        iterations=it,
    )


def scale_branch_resistances(system: SystemModel, factor: float) -> SystemModel:
    """Multiply every branch's resistance scale by `factor` (reactances
    untouched).  Composes exactly: scaling by a then b equals a*b."""
    if factor <= 0:
        raise ValueError(f"factor must be positive, got {factor}")
    branches = tuple(
        replace(br, resistance_scale=br.resistance_scale * factor) for br in system.branches
    )
    return replace(system, branches=branches)


# ---------------------------------------------------------------------------
# device operations


def apply_deadband(delta_f: float, half_width: float) -> float:
    """Offset deadband: zero inside the band, |input| - half_width beyond,
    sign preserved.  Continuous in delta_f."""
    if half_width < 0:
        raise ValueError(f"half_width must be non-negative, got {half_width}")
    if delta_f > half_width:
        return delta_f - half_width
    if delta_f < -half_width:
        return delta_f + half_width
    return 0.0


def droop_command(governor: Governor, f_coi_hz: float, f_nominal: float) -> float:
    """Governor power command (pu) from the deadbanded frequency error,
    clipped to the servo output limits."""
    err = apply_deadband(f_coi_hz - f_nominal, governor.deadband_half_width_hz)
    cmd = -err / (governor.droop_r * f_nominal)
    return min(max(cmd, governor.output_min), governor.output_max)


def machine_electrical_power(
    machine: SynchronousMachine, v_mag: float, v_ang: float
) -> tuple[float, float]:
    """Active/reactive power injected by a classical machine into its
    terminal bus at voltage v_mag /_ v_ang."""
    x = machine.transient_reactance
    d = machine.rotor_angle - v_ang
    p = machine.emf_magnitude * v_mag * math.sin(d) / x
    q = (machine.emf_magnitude * v_mag * math.cos(d) - v_mag**2) / x
    return p, q


def machine_derivatives(
    machine: SynchronousMachine,
    governor: Governor | None,
    p_electrical: float,
    f_coi_hz: float,
    f_nominal: float,
    servo_state: float = 0.0,
    agc_increment: float = 0.0,
) -> tuple[float, float, float]:
    """Swing + servo right-hand sides: (d delta, d omega, d servo).

    Mechanical power is dispatch + servo + AGC increment clamped to
    [p_min, p_max]; the servo relaxes toward the droop command.
    """
    omega_n = 2.0 * math.pi * f_nominal
    p_mech = machine.mechanical_power + servo_state + agc_increment
    p_mech = min(max(p_mech, machine.p_min), machine.p_max)
    d_delta = omega_n * (machine.rotor_speed - 1.0)
    d_omega = (
        p_mech - p_electrical - machine.damping_d * (machine.rotor_speed - 1.0)
    ) / (2.0 * machine.inertia_h)
    if governor is None:
        d_servo = 0.0
    else:
        cmd = droop_command(governor, f_coi_hz, f_nominal)
        d_servo = (cmd - servo_state) / governor.servo_time_constant
    return d_delta, d_omega, d_servo


def wind_available_power(speed: float, plant: WindPlant) -> float:
    """Available power from the cubic turbine curve: zero below cut-in and
    beyond cut-out, rated at/above rated speed, cubic in between."""
    if speed < 0:
        raise ValueError(f"wind speed must be non-negative, got {speed}")
    if speed < plant.cut_in_speed or speed > plant.cut_out_speed:
        return 0.0
    if speed >= plant.rated_speed:
        return plant.rated_power
    num = speed**3 - plant.cut_in_speed**3
    den = plant.rated_speed**3 - plant.cut_in_speed**3
    return plant.rated_power * num / den


def apc_power_order(
    plant: WindPlant, f_measured_hz: float, f_nominal: float, available: float
) -> float:
    """Wind power order: curtailed tracking of available power plus the
    deadbanded droop correction, clamped to [0, available]."""
    if available < 0:
        raise ValueError(f"available power must be non-negative, got {available}")
    order = (1.0 - plant.curtailment_fraction) * available
    err = apply_deadband(f_measured_hz - f_nominal, plant.apc_deadband_half_width_hz)
    order -= err / (plant.apc_droop * f_nominal) * plant.rated_power
    return min(max(order, 0.0), available)


def agc_step(
    agc: AgcController, f_coi_hz: float, f_nominal: float, dt: float
) -> tuple[AgcController, dict[str, float]]:
    """Advance the AGC integrator one step and split the correction.

    Returns the updated controller and per-device setpoint increments
    (participation fraction times the new state).
    """
    if not agc.enabled:
        raise ValueError("agc_step requires an enabled controller")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    state = agc.state_p_agc - agc.integral_gain_ki * agc.bias_beta * (f_coi_hz - f_nominal) * dt
    state = min(max(state, agc.state_min), agc.state_max)
    increments = {name: frac * state for name, frac in agc.participation.items()}
    return replace(agc, state_p_agc=state), increments
