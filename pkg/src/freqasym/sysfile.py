"""Loader for the declarative system description format.

A .sys file is a sequence of [section] blocks holding either key = value
pairs or whitespace-separated column tables (first row is the header,
`-` marks an absent value).  Later files passed to load_system overlay
earlier ones section by section; a [wind_plant] section with `replaces =
<machine>` swaps that machine out for the plant.
"""

from __future__ import annotations

from pathlib import Path

from .grid import (
    AgcController,
    Bus,
    Branch,
    Governor,
    StochasticLoad,
    SynchronousMachine,
    SystemModel,
    WindPlant,
)

__all__ = ["SysFileError", "load_system"]


class SysFileError(Exception):
    """Malformed system description file."""

    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


def _parse_sections(path) -> dict[str, list[tuple[int, list[str]]]]:
    """Split a file into sections of tokenized lines (with line numbers)."""
    sections: dict[str, list[tuple[int, list[str]]]] = {}
    current: str | None = None
    text = Path(path).read_text()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            sections.setdefault(current, [])
            continue
        if current is None:
            raise SysFileError(path, line_no, "content before any [section] header")
        sections[current].append((line_no, line.split()))
    return sections


def _as_kv(path, rows: list[tuple[int, list[str]]]) -> dict[str, str]:
    out: dict[str, str] = {}
    for line_no, tokens in rows:
        if len(tokens) < 3 or tokens[1] != "=":
            raise SysFileError(path, line_no, f"expected 'key = value', got {' '.join(tokens)!r}")
        out[tokens[0].lower()] = " ".join(tokens[2:])
    return out


def _as_table(path, rows: list[tuple[int, list[str]]]) -> list[dict[str, str]]:
    if not rows:
        return []
    header = [h.lower() for h in rows[0][1]]
    records = []
    for line_no, tokens in rows[1:]:
        if len(tokens) != len(header):
            raise SysFileError(
                path, line_no, f"expected {len(header)} columns, got {len(tokens)}"
            )
        records.append(dict(zip(header, tokens)))
    return records


def _num(path, record: dict[str, str], key: str, default: float | None = None) -> float:
    raw = record.get(key, "-")
    if raw == "-":
        if default is None:
            raise SysFileError(path, 0, f"missing required value {key!r}")
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise SysFileError(path, 0, f"bad number {raw!r} for {key!r}") from exc


_TABLE_SECTIONS = ("buses", "branches", "machines", "governors", "loads")
_KV_SECTIONS = ("system", "agc", "wind_plant")


def load_system(path, *overlays) -> SystemModel:
    """Parse a system file (plus optional overlay files) into a SystemModel."""
    merged: dict[str, object] = {}
    for p in (path, *overlays):
        sections = _parse_sections(p)
        for name, rows in sections.items():
            if name in _TABLE_SECTIONS:
                merged[name] = (p, _as_table(p, rows))
            elif name in _KV_SECTIONS:
                merged[name] = (p, _as_kv(p, rows))
            else:
                raise SysFileError(p, rows[0][0] if rows else 0, f"unknown section [{name}]")

    def table(name) -> tuple[object, list[dict[str, str]]]:
        return merged.get(name, (path, []))

    def kv(name) -> tuple[object, dict[str, str]]:
        return merged.get(name, (path, {}))

    p_sys, sys_kv = kv("system")
    if not sys_kv:
        raise SysFileError(path, 0, "missing [system] section")
    base_mva = _num(p_sys, sys_kv, "base_mva", 100.0)
    f_nominal = _num(p_sys, sys_kv, "f_nominal", 50.0)

    p_b, bus_rows = table("buses")
    buses = tuple(
        Bus(
            id=int(_num(p_b, r, "id")),
            type=r.get("type", "pq").lower(),
            voltage_magnitude=_num(p_b, r, "v_set", 1.0),
        )
        for r in bus_rows
    )

    p_br, br_rows = table("branches")
    branches = tuple(
        Branch(
            from_bus=int(_num(p_br, r, "from")),
            to_bus=int(_num(p_br, r, "to")),
            resistance=_num(p_br, r, "r"),
            reactance=_num(p_br, r, "x"),
            shunt_susceptance=_num(p_br, r, "b", 0.0),
        )
        for r in br_rows
    )

    p_m, m_rows = table("machines")
    machines = tuple(
        SynchronousMachine(
            name=r["name"],
            bus=int(_num(p_m, r, "bus")),
            inertia_h=_num(p_m, r, "h"),
            damping_d=_num(p_m, r, "d", 0.0),
            transient_reactance=_num(p_m, r, "xd_t"),
            mechanical_power=_num(p_m, r, "p_dispatch", 0.0),
            p_max=_num(p_m, r, "p_max", 99.0),
            p_min=_num(p_m, r, "p_min", 0.0),
        )
        for r in m_rows
    )

    p_g, g_rows = table("governors")
    governors = tuple(
        Governor(
            machine=r["machine"],
            droop_r=_num(p_g, r, "droop_r", 0.05),
            deadband_half_width_hz=_num(p_g, r, "deadband_hz", 0.015),
            servo_time_constant=_num(p_g, r, "servo_t", 0.5),
            output_min=_num(p_g, r, "out_min", -0.25),
            output_max=_num(p_g, r, "out_max", 0.25),
            agc_participation=_num(p_g, r, "agc_share", 0.0),
        )
        for r in g_rows
    )

    p_l, l_rows = table("loads")
    loads = tuple(
        StochasticLoad(
            bus=int(_num(p_l, r, "bus")),
            base_p=_num(p_l, r, "p"),
            base_q=_num(p_l, r, "q", 0.0),
            noise_channel=i,
        )
        for i, r in enumerate(l_rows)
    )

    p_a, agc_kv = kv("agc")
    agc = None
    if agc_kv:
        shares = {g.machine: g.agc_participation for g in governors if g.agc_participation > 0}
        total = sum(shares.values())
        if total > 0:
            shares = {k: v / total for k, v in shares.items()}
        agc = AgcController(
            integral_gain_ki=_num(p_a, agc_kv, "integral_gain_ki", 0.1),
            bias_beta=_num(p_a, agc_kv, "bias_beta", 1.2),
            participation=shares,
            enabled=False,
            state_min=-_num(p_a, agc_kv, "headroom", 0.5),
            state_max=_num(p_a, agc_kv, "headroom", 0.5),
        )

    p_w, wind_kv = kv("wind_plant")
    wind = None
    if wind_kv:
        wind = WindPlant(
            name=wind_kv.get("name", "wind"),
            bus=int(_num(p_w, wind_kv, "bus")),
            rated_power=_num(p_w, wind_kv, "rated_power"),
            cut_in_speed=_num(p_w, wind_kv, "cut_in", 4.0),
            rated_speed=_num(p_w, wind_kv, "rated_speed", 13.0),
            cut_out_speed=_num(p_w, wind_kv, "cut_out", 25.0),
            curtailment_fraction=_num(p_w, wind_kv, "curtailment", 0.2),
            apc_deadband_half_width_hz=_num(p_w, wind_kv, "apc_deadband_hz", 0.2),
            apc_droop=_num(p_w, wind_kv, "apc_droop", 0.01),
            converter_time_constant=_num(p_w, wind_kv, "converter_t", 5.0),
            measurement_time_constant=_num(p_w, wind_kv, "measurement_t", 2.0),
            control_cycle_s=_num(p_w, wind_kv, "control_cycle", 4.0),
            mean_wind_speed=_num(p_w, wind_kv, "mean_wind_speed", 12.5),
            agc_participation=_num(p_w, wind_kv, "agc_share", 0.0),
        )
        replaces = wind_kv.get("replaces")
        if replaces is not None:
            if replaces not in {m.name for m in machines}:
                raise SysFileError(p_w, 0, f"wind plant replaces unknown machine {replaces!r}")
            machines = tuple(m for m in machines if m.name != replaces)
            governors = tuple(g for g in governors if g.machine != replaces)
            if agc is not None:
                shares = {g.machine: g.agc_participation for g in governors if g.agc_participation > 0}
                total = sum(shares.values())
                if total > 0:
                    shares = {k: v / total for k, v in shares.items()}
                agc = AgcController(
                    integral_gain_ki=agc.integral_gain_ki,
                    bias_beta=agc.bias_beta,
                    participation=shares,
                    enabled=False,
                    state_min=agc.state_min,
                    state_max=agc.state_max,
                )

    return SystemModel(
        base_mva=base_mva,
        f_nominal=f_nominal,
        buses=buses,
        branches=branches,
        machines=machines,
        governors=governors,
        agc=agc,
        wind=wind,
        loads=loads,
    )
