"""Time-domain integrator for the stochastic grid model.

Each step advances the noise channels explicitly (Euler-Maruyama with
jumps), then solves the implicit-trapezoidal update of machine, governor,
AGC and converter states together with the network power balance by
damped Newton.  Output is the center-of-inertia frequency decimated to
the requested sampling period.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernel
from .grid import SystemModel, build_ybus, solve_power_flow
from .metrics import FrequencyTrace
from .stochastic import (
    NoiseChannel,
    RampSchedule,
    channel_rng,
    channel_step,
    sample_ramp_schedule,
    stationary_std,
)

__all__ = [
    "EngineError",
    "NewtonDivergence",
    "SimulationNaN",
    "NoSynchronousInertia",
    "SimState",
    "StepDiagnostics",
    "RunSummary",
    "NoiseConfig",
    "LoadNoiseParams",
    "WindNoiseParams",
    "RampParams",
    "coi_frequency",
    "Engine",
    "simulate",
]

RAMP_STREAM = 1_000_003  # RNG stream id reserved for the ramp schedule
NEWTON_TOL = 1e-10
NEWTON_MAXIT = 25


class EngineError(Exception):
    """Base class for integrator failures."""


class NewtonDivergence(EngineError):
    """The algebraic solve failed even after step-halving retries."""

    def __init__(self, t: float, residual: float):
        self.t = t
        self.residual = residual
        super().__init__(f"Newton diverged at t={t:.4f}s (residual {residual:.3e})")


class SimulationNaN(EngineError):
    """A non-finite state appeared; carries the last good state."""

    def __init__(self, t: float, last_good: "SimState"):
        self.t = t
        self.last_good = last_good
        super().__init__(f"non-finite state at t={t:.4f}s; last good state attached")


class NoSynchronousInertia(EngineError):
    """No machine with positive inertia: the COI frequency is undefined."""


@dataclass(frozen=True)
class LoadNoiseParams:
    """Multiplicative load noise; sigma is the stationary std of the
    per-unit deviation."""

    alpha: float = 0.5
    sigma: float = 0.01
    jump_rate: float = 0.0
    jump_sigma: float = 0.0
    jump_scale: float = 1.0


@dataclass(frozen=True)
class WindNoiseParams:
    """Wind-speed noise; sigma_fraction is the stationary std as a
    fraction of the plant's mean wind speed."""

    alpha: float = 0.05
    sigma_fraction: float = 0.03


@dataclass(frozen=True)
class RampParams:
    """Stochastic wind-ramp schedule parameters."""

    rate: float = 1.0 / 3600.0
    magnitude_sigma: float = 1.0
    duration_min: float = 300.0
    duration_max: float = 900.0


@dataclass(frozen=True)
class NoiseConfig:
    """Which stochastic inputs a run uses; None disables a source."""

    load: LoadNoiseParams | None = None
    wind: WindNoiseParams | None = None
    ramps: RampParams | None = None


@dataclass
class SimState:
    """Integrator state: clock, differential, algebraic and noise vectors.

    `held` carries sampled controller inputs (the wind plant's held
    frequency measurement, refreshed every dispatch cycle at held_t).
    """

    t: float
    x: np.ndarray
    y: np.ndarray
    kappa: np.ndarray
    held: np.ndarray = field(default_factory=lambda: np.empty(0))
    held_t: float = 0.0

    def copy(self) -> "SimState":
        return SimState(
            self.t, self.x.copy(), self.y.copy(), self.kappa.copy(),
            self.held.copy(), self.held_t,
        )


@dataclass(frozen=True)
class StepDiagnostics:
    newton_iterations: int
    residual: float
    limits_active: frozenset[str]


@dataclass(frozen=True)
class RunSummary:
    """Per-run bookkeeping reported next to the frequency trace."""

    seed: int
    horizon_s: float
    dt: float
    n_steps: int
    output_interval: float
    p_loss_avg: float
    q_loss_avg: float
    newton_iterations_avg: float
    worst_residual: float
    limiter_duty: dict[str, float] = field(default_factory=dict)
    dt_retries: int = 0
    wall_time_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "horizon_s": self.horizon_s,
                "dt": self.dt,
                "n_steps": self.n_steps,
                "output_interval": self.output_interval,
                "p_loss_avg": self.p_loss_avg,
                "q_loss_avg": self.q_loss_avg,
                "newton_iterations_avg": self.newton_iterations_avg,
                "worst_residual": self.worst_residual,
                "limiter_duty": dict(sorted(self.limiter_duty.items())),
                "dt_retries": self.dt_retries,
                "wall_time_s": self.wall_time_s,
            },
            indent=2,
            sort_keys=False,
        )


def coi_frequency(speeds, inertias, f_nominal: float) -> float:
    """Center-of-inertia frequency: inertia-weighted mean rotor speed in Hz."""
    w = np.asarray(speeds, dtype=float)
    h = np.asarray(inertias, dtype=float)
    if w.shape != h.shape:
        raise ValueError("speeds and inertias must have matching shapes")
    hsum = float(np.sum(h))
    if w.size == 0 or hsum <= 0.0:
        raise NoSynchronousInertia(
            "no synchronous inertia: designate an explicit frequency source"
        )
    return f_nominal * float(np.dot(h, w)) / hsum


class Engine:
    """Single-run integrator bound to one system and one seeded noise
    realization.  Engines are cheap to build and never shared between
    concurrent runs."""

    def __init__(self, system: SystemModel, noise: NoiseConfig | None = None, seed: int = 0):
        if not system.machines or sum(m.inertia_h for m in system.machines) <= 0:
            raise NoSynchronousInertia(
                "system has no synchronous machine with positive inertia"
            )
        self.system = system
        self.noise = noise or NoiseConfig()
        self.seed = int(seed)
        self._build_arrays()
        self._build_channels()
        self.ramp_schedule: RampSchedule | None = None

    # -- assembly ----------------------------------------------------------

    def _build_arrays(self):
        sys = self.system
        pf = solve_power_flow(sys)
        self.power_flow = pf
        idx = sys.bus_index()
        nm = len(sys.machines)
        nb = len(sys.buses)

        y = build_ybus(sys)
        self._G = np.ascontiguousarray(y.real)
        self._B = np.ascontiguousarray(y.imag)

        self._mach_bus = np.array([idx[m.bus] for m in sys.machines], dtype=np.int64)
        self._H = np.array([m.inertia_h for m in sys.machines])
        self._D = np.array([m.damping_d for m in sys.machines])
        self._XDT = np.array([m.transient_reactance for m in sys.machines])
        self._PMAX = np.array([m.p_max for m in sys.machines])
        self._PMIN = np.array([m.p_min for m in sys.machines])

        # constant EMF behind transient reactance from the power flow point
        emf = np.zeros(nm)
        delta0 = np.zeros(nm)
        pdisp = np.zeros(nm)
        for i, m in enumerate(sys.machines):
            b = idx[m.bus]
            vph = pf.v_mag[b] * np.exp(1j * pf.v_ang[b])
            s = complex(pf.machine_p[m.name], pf.machine_q[m.name])
            cur = np.conj(s / vph)
            eph = vph + 1j * m.transient_reactance * cur
            emf[i] = abs(eph)
            delta0[i] = np.angle(eph)
            # recompute dispatch from the EMF so the equilibrium is exact
            pdisp[i] = emf[i] * pf.v_mag[b] * math.sin(delta0[i] - pf.v_ang[b]) / m.transient_reactance
        self._EMF = emf
        self._PDISP = pdisp
        self._delta0 = delta0

        govs = sys.governors
        name_to_mi = {m.name: i for i, m in enumerate(sys.machines)}
        govs = tuple(g for g in govs if g.machine in name_to_mi)
        self._governors = govs
        ngov = len(govs)
        self._gov_mach = np.array([name_to_mi[g.machine] for g in govs], dtype=np.int64)
        mach_gov = -np.ones(nm, dtype=np.int64)
        for gi, g in enumerate(govs):
            mach_gov[name_to_mi[g.machine]] = gi
        self._mach_gov = mach_gov
        self._gov_R = np.array([g.droop_r for g in govs])
        self._gov_DB = np.array([g.deadband_half_width_hz for g in govs])
        self._gov_T = np.array([g.servo_time_constant for g in govs])
        self._gov_LO = np.array([g.output_min for g in govs])
        self._gov_HI = np.array([g.output_max for g in govs])

        agc = sys.agc
        has_agc = bool(agc is not None and agc.enabled)
        agc_part = np.zeros(nm)
        w_part = 0.0
        if has_agc:
            for name, frac in agc.participation.items():
                if name in name_to_mi:
                    agc_part[name_to_mi[name]] = frac
                elif sys.wind is not None and name == sys.wind.name:
                    w_part = frac
            if not (agc.includes_wind and sys.wind is not None):
                w_part = 0.0
        self._agc_part = agc_part

        self._loads = sys.loads
        self._load_bus = np.array([idx[l.bus] for l in sys.loads], dtype=np.int64)
        self._load_p = np.array([l.base_p for l in sys.loads])
        self._load_q = np.array([l.base_q for l in sys.loads])
        self._load_ch = np.array([l.noise_channel for l in sys.loads], dtype=np.int64)

        has_wind = sys.wind is not None
        nx = 2 * nm + ngov + (1 if has_agc else 0) + (2 if has_wind else 0)
        i_agc = 2 * nm + ngov if has_agc else -1
        i_pw = (2 * nm + ngov + (1 if has_agc else 0)) if has_wind else -1
        i_fm = i_pw + 1 if has_wind else -1

        sc = np.zeros(_kernel.N_SC)
        sc[_kernel.SC_F_N] = sys.f_nominal
        sc[_kernel.SC_OMEGA_N] = sys.omega_nominal
        sc[_kernel.SC_HSUM] = float(np.sum(self._H))
        if has_agc:
            sc[_kernel.SC_AGC_KI] = agc.integral_gain_ki
            sc[_kernel.SC_AGC_BETA] = agc.bias_beta
            sc[_kernel.SC_AGC_LO] = agc.state_min
            sc[_kernel.SC_AGC_HI] = agc.state_max
        w_bus = -1
        w_ch = -1
        if has_wind:
            w = sys.wind
            w_bus = idx[w.bus]
            w_ch = len(sys.loads)  # wind channel sits after the load channels
            sc[_kernel.SC_W_RATED] = w.rated_power
            sc[_kernel.SC_W_CI] = w.cut_in_speed
            sc[_kernel.SC_W_VR] = w.rated_speed
            sc[_kernel.SC_W_CO] = w.cut_out_speed
            sc[_kernel.SC_W_CURT] = w.curtailment_fraction
            sc[_kernel.SC_W_DB] = w.apc_deadband_half_width_hz
            sc[_kernel.SC_W_DROOP] = w.apc_droop
            sc[_kernel.SC_W_TC] = w.converter_time_constant
            sc[_kernel.SC_W_TM] = w.measurement_time_constant
            sc[_kernel.SC_W_Q0] = pf.wind_q
            sc[_kernel.SC_W_PART] = w_part
        iv = np.zeros(_kernel.N_IV, dtype=np.int64)
        iv[_kernel.IV_NM] = nm
        iv[_kernel.IV_NB] = nb
        iv[_kernel.IV_NGOV] = ngov
        iv[_kernel.IV_HAS_AGC] = 1 if has_agc else 0
        iv[_kernel.IV_HAS_WIND] = 1 if has_wind else 0
        iv[_kernel.IV_W_BUS] = w_bus
        iv[_kernel.IV_I_AGC] = i_agc
        iv[_kernel.IV_I_PW] = i_pw
        iv[_kernel.IV_NX] = nx
        iv[_kernel.IV_W_CH] = w_ch
        iv[_kernel.IV_I_FM] = i_fm
        self._sc = sc
        self._iv = iv
        self.nx = nx
        self.ny = 2 * nb
        self._i_agc = i_agc
        self._i_pw = i_pw
        self._i_fm = i_fm

        # limiter flag bit -> device label
        names: dict[int, str] = {}
        for i, m in enumerate(sys.machines):
            names[i] = f"{m.name}:p_mech"
        for gi, g in enumerate(govs):
            names[8 + gi] = f"{g.machine}:governor"
        names[_kernel.FLAG_AGC] = "agc"
        if has_wind:
            names[_kernel.FLAG_WIND_HI] = f"{sys.wind.name}:order_at_available"
            names[_kernel.FLAG_WIND_LO] = f"{sys.wind.name}:order_at_zero"
        self._flag_names = names

    def _kernel_args(self):
        return (
            self._G, self._B, self._mach_bus, self._H, self._D, self._XDT,
            self._EMF, self._PDISP, self._PMAX, self._PMIN,
            self._mach_gov, self._gov_mach, self._gov_R, self._gov_DB,
            self._gov_T, self._gov_LO, self._gov_HI,
            self._agc_part, self._load_bus, self._load_p, self._load_q,
            self._load_ch, self._sc, self._iv,
        )

    def _build_channels(self):
        sys = self.system
        channels: list[NoiseChannel] = []
        rngs: list[np.random.Generator] = []
        ln = self.noise.load
        for i, _ in enumerate(sys.loads):
            if ln is not None:
                ch = NoiseChannel(
                    value=0.0,
                    mean=0.0,
                    reversion_rate=ln.alpha,
                    diffusion=ln.sigma * math.sqrt(2.0 * ln.alpha),
                    jump_rate=ln.jump_rate,
                    jump_sigma=ln.jump_sigma,
                    jump_scale=ln.jump_scale,
                )
            else:
                ch = NoiseChannel(value=0.0, mean=0.0, reversion_rate=1.0)
            channels.append(ch)
            rngs.append(channel_rng(self.seed, i))
        self._wind_ch = -1
        if sys.wind is not None:
            wn = self.noise.wind
            mean = sys.wind.mean_wind_speed
            if wn is not None:
                sigma_abs = wn.sigma_fraction * mean
                ch = NoiseChannel(
                    value=mean,
                    mean=mean,
                    reversion_rate=wn.alpha,
                    diffusion=sigma_abs * math.sqrt(2.0 * wn.alpha),
                )
            else:
                ch = NoiseChannel(value=mean, mean=mean, reversion_rate=1.0)
            self._wind_ch = len(channels)
            channels.append(ch)
            rngs.append(channel_rng(self.seed, len(sys.loads)))
        self.channels = channels
        self._rngs = rngs

    # -- state construction --------------------------------------------------

    def equilibrium(self) -> SimState:
        """Noise-free equilibrium state at the power-flow solution."""
        nm = len(self.system.machines)
        x = np.zeros(self.nx)
        x[:nm] = self._delta0
        x[nm : 2 * nm] = 1.0
        if self._i_pw >= 0:
            x[self._i_pw] = self.power_flow.wind_p
            x[self._i_fm] = self.system.f_nominal
        y = np.concatenate([self.power_flow.v_ang, self.power_flow.v_mag])
        kappa = np.array([ch.mean for ch in self.channels])
        held = (
            np.array([self.system.f_nominal])
            if self.system.wind is not None
            else np.empty(0)
        )
        return SimState(t=0.0, x=x, y=y, kappa=kappa, held=held, held_t=0.0)

    def initial_state(self, stationary_noise: bool = True) -> SimState:
        """Equilibrium state with noise channels drawn from their
        stationary marginals (one extra draw per channel)."""
        state = self.equilibrium()
        if stationary_noise:
            for i, ch in enumerate(self.channels):
                s = stationary_std(ch)
                if s > 0.0:
                    state.kappa[i] = ch.mean + s * self._rngs[i].standard_normal()
        return state

    # -- stepping ------------------------------------------------------------

    def _advance_channels(self, kappa: np.ndarray, t: float, dt: float) -> np.ndarray:
        out = kappa.copy()
        for i, ch in enumerate(self.channels):
            shift = 0.0
            if i == self._wind_ch and self.ramp_schedule is not None:
                shift = self.ramp_schedule.mean_offset(t)
            out[i] = channel_step(ch, dt, self._rngs[i], value=kappa[i], mean_shift=shift)
        return out

    def _eval_f(self, state: SimState) -> np.ndarray:
        z = np.concatenate([state.x, state.y])
        f, _, _, _, _, _ = _kernel.eval_rhs(
            z, state.kappa, state.held, *self._kernel_args()
        )
        return f

    def _clamp_states(self, x: np.ndarray) -> np.ndarray:
        nm = len(self.system.machines)
        for gi in range(len(self._governors)):
            j = 2 * nm + gi
            x[j] = min(max(x[j], self._gov_LO[gi]), self._gov_HI[gi])
        if self._i_agc >= 0:
            x[self._i_agc] = min(
                max(x[self._i_agc], self._sc[_kernel.SC_AGC_LO]),
                self._sc[_kernel.SC_AGC_HI],
            )
        return x

    def _refresh_held(self, state: SimState) -> SimState:
        """Resample the wind controller's held measurement when its
        dispatch cycle has elapsed (a zero cycle samples every step)."""
        if self._i_fm < 0 or state.held.size == 0:
            return state
        cycle = self.system.wind.control_cycle_s
        if state.t >= state.held_t + cycle - 1e-12:
            state = state.copy()
            state.held[0] = state.x[self._i_fm]
            state.held_t = state.t
        return state

    def _step_raw(self, state: SimState, f_prev: np.ndarray, dt: float, depth: int = 0):
        """One dt attempt with internal halved-dt retries; returns
        (state, f_new, iters, residual, flags)."""
        if depth == 0:
            refreshed = self._refresh_held(state)
            if refreshed is not state:
                # the held input changed at this boundary; restate f there
                state = refreshed
                f_prev = self._eval_f(state)
        kappa_new = self._advance_channels(state.kappa, state.t, dt)
        xn, yn, f_new, fcoi, ploss, qloss, iters, res, flags, status = _kernel.step_once(
            state.x, state.y, kappa_new, state.held, f_prev, dt, 0.5,
            NEWTON_TOL, NEWTON_MAXIT, *self._kernel_args()
        )
        if status == _kernel.STATUS_OK:
            xn = self._clamp_states(xn)
            new = SimState(
                t=state.t + dt, x=xn, y=yn, kappa=kappa_new,
                held=state.held, held_t=state.held_t,
            )
            return new, f_new, iters, res, flags, ploss, qloss, 0
        if status == _kernel.STATUS_NAN:
            raise SimulationNaN(state.t + dt, state.copy())
        if depth >= 2:
            raise NewtonDivergence(state.t + dt, res)
        # halve the step and try the two halves
        mid, f_mid, it1, r1, fl1, pl1, ql1, rt1 = self._step_raw(state, f_prev, dt / 2, depth + 1)
        end, f_end, it2, r2, fl2, pl2, ql2, rt2 = self._step_raw(mid, f_mid, dt / 2, depth + 1)
        return end, f_end, it1 + it2, max(r1, r2), fl1 | fl2, pl2, ql2, rt1 + rt2 + 1

    def step(self, state: SimState, dt: float) -> tuple[SimState, StepDiagnostics]:
        """Advance a single step of size dt (public, diagnostic-friendly)."""
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        f_prev = self._eval_f(state)
        new, _, iters, res, flags, _, _, _ = self._step_raw(state, f_prev, dt)
        active = frozenset(
            name for bit, name in self._flag_names.items() if flags & (1 << bit)
        )
        return new, StepDiagnostics(newton_iterations=iters, residual=res, limits_active=active)

    # -- full runs -------------------------------------------------------------

    @staticmethod
    def build_ramp_schedule(
        noise: NoiseConfig, horizon_s: float, seed: int
    ) -> RampSchedule | None:
        """The ramp schedule a run with this seed will use (None when the
        noise config has no ramps).  Deterministic in (noise, horizon, seed)."""
        rp = noise.ramps
        if rp is None:
            return None
        return sample_ramp_schedule(
            horizon_s,
            rp.rate,
            rp.magnitude_sigma,
            (rp.duration_min, rp.duration_max),
            channel_rng(seed, RAMP_STREAM),
        )

    def simulate(
        self,
        horizon_s: float,
        dt: float = 0.02,
        output_interval: float = 1.0,
        stationary_init: bool = True,
    ) -> tuple[FrequencyTrace, RunSummary]:
        """Integrate for horizon_s seconds and return the COI frequency
        trace sampled every output_interval, plus run bookkeeping."""
        if horizon_s <= 0 or dt <= 0:
            raise ValueError("horizon and dt must be positive")
        t_wall = time.perf_counter()
        n_steps = int(round(horizon_s / dt))
        out_every = max(1, int(round(output_interval / dt)))
        sample_period = out_every * dt

        if self.system.wind is not None:
            self.ramp_schedule = self.build_ramp_schedule(self.noise, horizon_s, self.seed)
        state = self.initial_state(stationary_noise=stationary_init)
        f_prev = self._eval_f(state)

        f_n = self.system.f_nominal
        hsum = self._sc[_kernel.SC_HSUM]
        nm = len(self.system.machines)

        n_out = n_steps // out_every + 1
        samples = np.empty(n_out)
        samples[0] = f_n * float(np.dot(self._H, state.x[nm : 2 * nm])) / hsum
        z0 = np.concatenate([state.x, state.y])
        _, _, _, pl0, ql0, _ = _kernel.eval_rhs(
            z0, state.kappa, state.held, *self._kernel_args()
        )
        ploss_sum = pl0
        qloss_sum = ql0
        iters_sum = 0
        worst_res = 0.0
        retries = 0
        flag_counts: dict[int, int] = {bit: 0 for bit in self._flag_names}

        k_out = 1
        for n in range(1, n_steps + 1):
            state, f_prev, iters, res, flags, ploss, qloss, rt = self._step_raw(
                state, f_prev, dt
            )
            iters_sum += iters
            retries += rt
            if res > worst_res:
                worst_res = res
            if flags:
                for bit in flag_counts:
                    if flags & (1 << bit):
                        flag_counts[bit] += 1
            if n % out_every == 0:
                samples[k_out] = f_n * float(
                    np.dot(self._H, state.x[nm : 2 * nm])
                ) / hsum
                ploss_sum += ploss
                qloss_sum += qloss
                k_out += 1

        duty = {
            self._flag_names[bit]: cnt / n_steps
            for bit, cnt in flag_counts.items()
            if cnt > 0
        }
        trace = FrequencyTrace(
            samples=samples[:k_out], sample_period=sample_period, f_nominal=f_n
        )
        summary = RunSummary(
            seed=self.seed,
            horizon_s=horizon_s,
            dt=dt,
            n_steps=n_steps,
            output_interval=sample_period,
            p_loss_avg=ploss_sum / k_out,
            q_loss_avg=qloss_sum / k_out,
            newton_iterations_avg=iters_sum / n_steps,
            worst_residual=worst_res,
            limiter_duty=duty,
            dt_retries=retries,
            wall_time_s=time.perf_counter() - t_wall,
        )
        return trace, summary


def simulate(
    system: SystemModel,
    noise: NoiseConfig | None,
    horizon_s: float,
    dt: float = 0.02,
    seed: int = 0,
    output_interval: float = 1.0,
    stationary_init: bool = True,
) -> tuple[FrequencyTrace, RunSummary]:
    """Build a fresh engine and run one seeded trajectory."""
    eng = Engine(system, noise=noise, seed=seed)
    return eng.simulate(
        horizon_s, dt=dt, output_interval=output_interval, stationary_init=stationary_init
    )
