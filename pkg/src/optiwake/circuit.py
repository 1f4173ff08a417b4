"""Fixed-topology transient models of the two wake-up receivers.

Design 1 (solar cell wake-up)::

    SC1 (EMF e, R_sc) --+-- R1 --+-- B1 ---- C1 -- gnd
                        |        |
                        |        R2 -- gnd
                        |
                        +-- PMOS1 (gate B1) -- G -- 10M -- gnd
                                                |
    supply -- 3.3M -- D -- NMOS1 (gate G) -- gnd
    supply -- PMOS2 (gate D) -- MCU load -- gnd

A fast flash raises e while C1 holds B1, so PMOS1 conducts, G rises,
NMOS1 pulls D down and PMOS2 powers the MCU. Slow ambient changes move
B1 along with e and leave PMOS1 in subthreshold.

Design 2 replaces the front half with a phototransistor feeding G through a
bias resistor in series with an LDR. The LDR tracks ambient light and sets
the sensitivity of the NMOS1 gate node.

The C1 node is integrated with the trapezoidal rule, the solar EMF and the
phototransistor lag are advanced with exact exponential updates, and every
MOSFET stage is solved in closed form given its gate voltage. All state
fields are numpy arrays so independent trials can be advanced together.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .devices import (
    LdrModel,
    MosfetParams,
    PhototransistorModel,
    SolarCellModel,
    ldr_resistance_step,
    loaded_switch_drop,
    pt_collector_current,
    solar_response_time,
    solar_voc,
)

SUPPLY_VOLTAGE = 2.8
MCU_ACTIVE_CURRENT = 1.2e-3
CONNECT_FRACTION = 0.95


class IntegrationError(RuntimeError):
    pass


def default_pmos1():
    return MosfetParams(polarity="P", vgs_threshold=-0.45)


def default_nmos1():
    return MosfetParams(polarity="N", vgs_threshold=0.5)


def default_pmos2():
    return MosfetParams(polarity="P", vgs_threshold=-1.0)


@dataclass(frozen=True)
class Design1Netlist:
    r1: float = 1.33e6
    r2: float = 1.13e6
    c1: float = 470e-9
    r_gs_nmos1: float = 10e6
    r_aux: float = 3.3e6
    pmos1: MosfetParams = field(default_factory=default_pmos1)
    nmos1: MosfetParams = field(default_factory=default_nmos1)
    pmos2: MosfetParams = field(default_factory=default_pmos2)
    supply_voltage: float = SUPPLY_VOLTAGE
    solar: SolarCellModel = field(default_factory=SolarCellModel)
    r_mcu: float = SUPPLY_VOLTAGE / MCU_ACTIVE_CURRENT

    def __post_init__(self):
        for name in ("r1", "r2", "r_gs_nmos1", "r_aux", "r_mcu"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.c1 <= 0:
            raise ValueError("c1 must be > 0")
        if self.supply_voltage < 0:
            raise ValueError("supply_voltage must be >= 0")
        if self.pmos1.polarity != "P" or self.pmos2.polarity != "P" or self.nmos1.polarity != "N":
            raise ValueError("pmos1/pmos2 must be P-channel and nmos1 N-channel")


def default_coated_pt():
    return PhototransistorModel(coating_attenuation=0.01)


def default_coated_ldr():
    return LdrModel(coating_attenuation=0.01)


def default_design2_nmos1():
    # placed by experiments.calibrate_design2: the 0.10 m flash at 800 lx peaks on the threshold
    return MosfetParams(polarity="N", vgs_threshold=0.35530780760548153)


@dataclass(frozen=True)
class Design2Netlist:
    pt: PhototransistorModel = field(default_factory=default_coated_pt)
    ldr: LdrModel = field(default_factory=default_coated_ldr)
    nmos1: MosfetParams = field(default_factory=default_design2_nmos1)
    pmos_chain: MosfetParams = field(default_factory=default_pmos2)
    r_bias: float = 10e3
    r_aux: float = 3.3e6
    supply_voltage: float = SUPPLY_VOLTAGE
    r_mcu: float = SUPPLY_VOLTAGE / MCU_ACTIVE_CURRENT
    flash_efficacy: float = 300.0  # lm/W seen by the LDR from the LED

    def __post_init__(self):
        for name in ("r_bias", "r_aux", "r_mcu", "flash_efficacy"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.supply_voltage < 0:
            raise ValueError("supply_voltage must be >= 0")


@dataclass(frozen=True)
class CircuitState:
    t: float
    v_sc: np.ndarray
    v_b1: np.ndarray
    v_gate_nmos1: np.ndarray
    v_mcu: np.ndarray
    mcu_connected: np.ndarray
    supply_current: np.ndarray
    ldr_resistance: np.ndarray | None = None
    # internal quantities carried between steps
    emf: np.ndarray | None = None
    r_sc: np.ndarray | None = None
    i_pmos1: np.ndarray | None = None
    i_pt: np.ndarray | None = None
    hold: np.ndarray | None = None
    hold_warning: bool = False

    def take(self, idx) -> "CircuitState":
        """Sub-select trials (or broadcast with an index array)."""
        kw = {}
        for name in _ARRAY_FIELDS:
            v = getattr(self, name)
            kw[name] = None if v is None else np.asarray(v)[idx]
        return replace(self, **kw)


_ARRAY_FIELDS = (
    "v_sc", "v_b1", "v_gate_nmos1", "v_mcu", "mcu_connected", "supply_current",
    "ldr_resistance", "emf", "r_sc", "i_pmos1", "i_pt", "hold",
)


def equivalent_resistance(r_sc, r1, r2):
    if r1 <= 0 or r2 <= 0:
        raise ValueError("r1 and r2 must be > 0")
    if r_sc < 0:
        raise ValueError("r_sc must be >= 0")
    if math.isinf(r2):
        return r_sc + r1
    return 1.0 / (1.0 / (r_sc + r1) + 1.0 / r2)


def adaptation_time(r_e, c):
    if r_e <= 0 or c <= 0:
        raise ValueError("r_e and c must be > 0")
    return 5.0 * r_e * c


def design1_adaptation_time(net: Design1Netlist, lux: float = 0.0) -> float:
    return adaptation_time(equivalent_resistance(net.solar.series_resistance(lux), net.r1, net.r2), net.c1)


def _output_chain(nmos1, pmos2, r_aux, r_mcu, supply, v_gate, hold):
    """NMOS1 -> pull-up node D -> PMOS2 -> MCU. Returns (v_mcu, supply current)."""
    v_d, _ = loaded_switch_drop(nmos1, v_gate, supply, r_aux)
    if hold is not None:
        v_d = np.where(hold, 0.0, v_d)
    i_pull = (supply - v_d) / r_aux
    u2, i2 = loaded_switch_drop(pmos2, v_d - supply, supply, r_mcu)
    v_mcu = supply - u2
    return v_mcu, i_pull + i2


def _connected(v_mcu, supply):
    return (v_mcu >= CONNECT_FRACTION * supply) & (supply > 0)


# --- Design 1 -----------------------------------------------------------------


def design1_steady_state(net: Design1Netlist, lux, iterations: int = 8) -> CircuitState:
    """Algebraic steady state at constant illuminance (vectorised over lux)."""
    lux = np.atleast_1d(np.asarray(lux, dtype=float))
    e = np.asarray(solar_voc(net.solar, lux), dtype=float)
    r_sc = np.asarray(net.solar.series_resistance(lux), dtype=float)
    i1 = np.zeros_like(e)
    for _ in range(iterations):
        v_b1 = (e - i1 * r_sc) * net.r2 / (r_sc + net.r1 + net.r2)
        v_sc = (e * net.r1 + v_b1 * r_sc - i1 * r_sc * net.r1) / (r_sc + net.r1)
        u1, i1 = loaded_switch_drop(net.pmos1, v_b1 - v_sc, v_sc, net.r_gs_nmos1)
    v_g = v_sc - u1
    hold = np.zeros_like(e, dtype=bool)
    v_mcu, i_sup = _output_chain(net.nmos1, net.pmos2, net.r_aux, net.r_mcu, net.supply_voltage, v_g, hold)
    return CircuitState(
        t=0.0, v_sc=v_sc, v_b1=v_b1, v_gate_nmos1=v_g, v_mcu=v_mcu,
        mcu_connected=_connected(v_mcu, net.supply_voltage), supply_current=i_sup,
        emf=e, r_sc=r_sc, i_pmos1=i1, hold=hold,
    )


def step_design1(net: Design1Netlist, state: CircuitState, lux_total, dt: float,
                 emf=None, r_sc=None) -> CircuitState:
    """Advance Design 1 by ``dt`` under illuminance ``lux_total``.

    ``emf`` and ``r_sc`` override the solar cell (used when the wake-up
    divider hangs on a cell whose voltage is imposed by a front-end).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    c = net.c1
    if emf is None:
        voc = solar_voc(net.solar, lux_total)
        tau = solar_response_time(net.solar)
        e_new = voc + (state.emf - voc) * math.exp(-dt / tau)
    else:
        e_new = np.broadcast_to(np.asarray(emf, dtype=float), np.shape(state.v_b1))
    rs_new = net.solar.series_resistance(lux_total) if r_sc is None else r_sc
    rs_new = np.broadcast_to(np.asarray(rs_new, dtype=float), np.shape(state.v_b1))
    rs_old, e_old, i1 = state.r_sc, state.emf, state.i_pmos1

    def coeffs(rs, e):
        g_in = 1.0 / (rs + net.r1)
        return (g_in + 1.0 / net.r2) / c, (e - i1 * rs) * g_in / c

    a_old, b_old = coeffs(rs_old, e_old)
    a_new, b_new = coeffs(rs_new, e_new)
    v = state.v_b1
    v_b1 = (v * (1.0 - 0.5 * dt * a_old) + 0.5 * dt * (b_old + b_new)) / (1.0 + 0.5 * dt * a_new)

    v_sc = (e_new * net.r1 + v_b1 * rs_new - i1 * rs_new * net.r1) / (rs_new + net.r1)
    v_sc = np.maximum(v_sc, 0.0)
    u1, i1_new = loaded_switch_drop(net.pmos1, v_b1 - v_sc, v_sc, net.r_gs_nmos1)
    v_g = v_sc - u1
    v_mcu, i_sup = _output_chain(net.nmos1, net.pmos2, net.r_aux, net.r_mcu,
                                 net.supply_voltage, v_g, state.hold)
    if not (np.all(np.isfinite(v_b1)) and np.all(np.isfinite(v_mcu))):
        raise IntegrationError(f"non-finite node voltage at t={state.t + dt:.6g} s (dt={dt:.3g})")
    return replace(
        state, t=state.t + dt, v_sc=v_sc, v_b1=v_b1, v_gate_nmos1=v_g, v_mcu=v_mcu,
        mcu_connected=_connected(v_mcu, net.supply_voltage), supply_current=i_sup,
        emf=e_new, r_sc=rs_new, i_pmos1=i1_new,
    )


def standby_current(net: Design1Netlist, lux) -> np.ndarray | float:
    """Steady supply-rail current at constant illuminance."""
    st = design1_steady_state(net, lux)
    out = st.supply_current
    return float(out[0]) if np.ndim(lux) == 0 else out


def mcu_hold_and_release(state: CircuitState, hold: bool) -> CircuitState:
    """Latch (hold=True) or release the MCU supply path via NMOS2.

    Asserting hold on a disconnected trial is a no-op and sets
    ``hold_warning``.
    """
    current = np.zeros_like(state.mcu_connected, dtype=bool) if state.hold is None else state.hold
    if hold:
        ok = np.asarray(state.mcu_connected, dtype=bool)
        new = current | ok
        warn = bool(np.any(~ok & ~current))
        return replace(state, hold=new, hold_warning=state.hold_warning or warn)
    return replace(state, hold=np.zeros_like(current))


# --- Design 2 -----------------------------------------------------------------


def design2_gate_voltage(net: Design2Netlist, i_pt, r_ldr):
    return np.minimum(i_pt * (net.r_bias + r_ldr), net.supply_voltage)


def design2_steady_state(net: Design2Netlist, ambient_lux) -> CircuitState:
    lux = np.atleast_1d(np.asarray(ambient_lux, dtype=float))
    i_pt = np.asarray(pt_collector_current(net.pt, 0.0 * lux, lux), dtype=float)
    r_ldr = np.asarray(net.ldr.resistance_curve(lux * net.ldr.coating_attenuation), dtype=float)
    v_g = design2_gate_voltage(net, i_pt, r_ldr)
    hold = np.zeros_like(lux, dtype=bool)
    v_mcu, i_sup = _output_chain(net.nmos1, net.pmos_chain, net.r_aux, net.r_mcu,
                                 net.supply_voltage, v_g, hold)
    z = np.zeros_like(lux)
    return CircuitState(
        t=0.0, v_sc=z, v_b1=z, v_gate_nmos1=v_g, v_mcu=v_mcu,
        mcu_connected=_connected(v_mcu, net.supply_voltage), supply_current=i_sup,
        ldr_resistance=r_ldr, i_pt=i_pt, hold=hold,
    )


def step_design2(net: Design2Netlist, state: CircuitState, ambient_lux, irradiance_flash, dt: float) -> CircuitState:
    """Advance Design 2. The LDR sees ambient plus the flash's illuminance."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    target = pt_collector_current(net.pt, irradiance_flash, ambient_lux)
    tau = np.where(target > state.i_pt, net.pt.response_time_on, net.pt.response_time_off)
    i_pt = target + (state.i_pt - target) * np.exp(-dt / tau)
    lux_ldr = np.asarray(ambient_lux) + np.asarray(irradiance_flash) * net.flash_efficacy
    r_ldr = ldr_resistance_step(net.ldr, state.ldr_resistance, lux_ldr, dt)
    v_g = design2_gate_voltage(net, i_pt, r_ldr)
    v_mcu, i_sup = _output_chain(net.nmos1, net.pmos_chain, net.r_aux, net.r_mcu,
                                 net.supply_voltage, v_g, state.hold)
    if not np.all(np.isfinite(v_g)):
        raise IntegrationError(f"non-finite gate voltage at t={state.t + dt:.6g} s")
    return replace(
        state, t=state.t + dt, v_gate_nmos1=v_g, v_mcu=v_mcu,
        mcu_connected=_connected(v_mcu, net.supply_voltage), supply_current=i_sup,
        ldr_resistance=r_ldr, i_pt=i_pt,
    )


# --- harvesting front-ends ----------------------------------------------------

# photocurrent density of the harvesting cell, A per (lux * mm^2)
PHOTOCURRENT_DENSITY = 1.4e-10


def harvest_cell():
    """Harvesting cell SC2: 25 x 10 mm, four series junctions."""
    a, b = SolarCellModel().voc_coeff_a, SolarCellModel().voc_coeff_b
    return SolarCellModel(area=250.0, voc_coeff_a=4 * a, voc_coeff_b=4 * b)


def cell_current(solar: SolarCellModel, lux, v):
    """Terminal current of the cell at voltage v (diode law with slope b)."""
    lux = np.asarray(lux, dtype=float)
    voc = np.asarray(solar_voc(solar, lux), dtype=float)
    i_ph = PHOTOCURRENT_DENSITY * lux * solar.area
    vt = solar.voc_coeff_b
    num = np.expm1(np.asarray(v, dtype=float) / vt)
    den = np.expm1(voc / vt)
    frac = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
    return np.maximum(i_ph * (1.0 - frac), 0.0)


@dataclass(frozen=True)
class HarvestFrontEnd:
    kind: str = "pmic_mppt"
    clamp_fraction: float = 0.8
    v_drop: float = 0.3
    storage_voltage: float = 1.5
    storage_capacitance: float = 0.1
    sample_period: float = 1.0  # PMIC re-evaluates its set point this often
    residual: float = 0.02  # fraction of the unloaded excursion leaking through the clamp

    def __post_init__(self):
        if self.kind not in ("pmic_mppt", "schottky"):
            raise ValueError(f"unknown front-end kind {self.kind!r}")
        if not 0 < self.clamp_fraction < 1:
            raise ValueError("clamp_fraction must lie in (0, 1)")
        if not 0.15 <= self.v_drop <= 0.45:
            raise ValueError("v_drop must lie in [0.15, 0.45] V")
        if self.storage_voltage < 0 or self.storage_capacitance <= 0:
            raise ValueError("storage_voltage >= 0 and storage_capacitance > 0 required")
        if self.sample_period <= 0 or not 0 <= self.residual < 1:
            raise ValueError("sample_period > 0 and residual in [0, 1) required")


@dataclass(frozen=True)
class FrontEndState:
    storage_voltage: float
    setpoint: float | None = None
    since_sample: float = 0.0


@dataclass(frozen=True)
class FrontEndStep:
    v_sc: float
    harvested_power: float
    state: FrontEndState


def frontend_initial_state(fe: HarvestFrontEnd) -> FrontEndState:
    return FrontEndState(storage_voltage=fe.storage_voltage)


def step_frontend(fe: HarvestFrontEnd, solar: SolarCellModel, lux_total: float, dt: float,
                  state: FrontEndState | None = None) -> FrontEndStep:
    """Cell voltage and power delivered into storage for one step."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if state is None:
        state = frontend_initial_state(fe)
    voc = float(solar_voc(solar, lux_total))
    if fe.kind == "pmic_mppt":
        since = state.since_sample + dt
        setpoint = state.setpoint
        if setpoint is None or since >= fe.sample_period:
            setpoint, since = fe.clamp_fraction * voc, 0.0
        v_sc = setpoint + fe.residual * (voc - setpoint)
        power = float(cell_current(solar, lux_total, v_sc)) * v_sc
        v_bat = state.storage_voltage
        new = FrontEndState(v_bat, setpoint, since)
    else:
        v_bat = state.storage_voltage
        v_on = v_bat + fe.v_drop
        if voc > v_on:
            v_sc = v_on
            i = float(cell_current(solar, lux_total, v_sc))
            power = i * v_bat
        else:
            v_sc, power = voc, 0.0
        new = FrontEndState(v_bat, None, 0.0)
    if lux_total <= 0:
        power = 0.0
    e_store = 0.5 * fe.storage_capacitance * new.storage_voltage**2 + power * dt
    new = replace(new, storage_voltage=math.sqrt(2.0 * e_store / fe.storage_capacitance))
    return FrontEndStep(v_sc=v_sc, harvested_power=power, state=new)


# --- trajectory helpers -------------------------------------------------------

TRAJECTORY_COLUMNS = ("t", "v_sc", "v_b1", "v_mcu", "supply_current", "mcu_connected")


def trajectory_row(state: CircuitState, i: int = 0):
    return (
        state.t, float(state.v_sc[i]), float(state.v_b1[i]), float(state.v_mcu[i]),
        float(state.supply_current[i]), int(bool(state.mcu_connected[i])),
    )


def simulate_design1(net: Design1Netlist, lux_of_t, t_end: float, dt: float, state: CircuitState | None = None,
                     record_every: int = 1):
    """Single-trajectory run with a callable illuminance. Returns (rows, final state)."""
    if state is None:
        state = design1_steady_state(net, lux_of_t(0.0))
    n = int(round(t_end / dt))
    rows = [trajectory_row(state)]
    for k in range(1, n + 1):
        state = step_design1(net, state, lux_of_t(k * dt), dt)
        if k % record_every == 0:
            rows.append(trajectory_row(state))
    return rows, state


def warn_hold(state: CircuitState):
    if state.hold_warning:
        warnings.warn("hold asserted while the MCU was disconnected; ignored", RuntimeWarning, stacklevel=2)
