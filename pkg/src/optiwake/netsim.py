"""Discrete-event simulation of light-harvesting nodes that wake each other
with LED flashes.

A flash from one node is turned into irradiance at every other node through
the pairwise link geometry and then fed through that node's wake-up circuit
(the same Design 1 model used by the experiments). A woken node runs a
validate, measure, transmit and flash-forward cycle and powers off again.
Every node keeps an energy ledger that balances exactly.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import circuit as ckt
from .experiments import DEFAULT_CALIBRATION, Calibration, NoiseModel, critical_flash
from .optics import AmbientProfile, OpticalSource, geometry_between, illuminance_from_irradiance, irradiance

PHASES = ("validate", "measure", "transmit", "flash_forward")

# tie-break rank within one (time, node) slot
KIND_RANK = {
    "AmbientChange": 0,
    "StorageDepleted": 1,
    "PhaseComplete": 2,
    "WakeDetected": 3,
    "FlashEmitted": 4,
}


@dataclass(frozen=True)
class McuProfile:
    active_current: float = ckt.MCU_ACTIVE_CURRENT
    supply_voltage: float = ckt.SUPPLY_VOLTAGE
    validate: float = 0.010
    measure: float = 0.050
    transmit: float = 0.100
    flash_forward: float = 0.050

    def __post_init__(self):
        if min(self.validate, self.measure, self.transmit, self.flash_forward) <= 0:
            raise ValueError("phase durations must be > 0")
        if self.active_current < 0 or self.supply_voltage <= 0:
            raise ValueError("active_current >= 0 and supply_voltage > 0 required")

    def duration(self, phase: str) -> float:
        return getattr(self, phase)

    @property
    def active_power(self) -> float:
        return self.active_current * self.supply_voltage

    def cycle_energy(self) -> float:
        return self.active_power * sum(self.duration(p) for p in PHASES)


@dataclass
class EnergyLedger:
    initial: float
    capacity: float
    harvested: float = 0.0
    consumed_standby: float = 0.0
    consumed_active: float = 0.0
    clamp_loss: float = 0.0
    unserved: float = 0.0  # demand that found the store empty (not part of the balance)
    stored: float = field(init=False)

    def __post_init__(self):
        if self.capacity <= 0 or not 0 <= self.initial <= self.capacity:
            raise ValueError("need capacity > 0 and 0 <= initial <= capacity")
        self.stored = self.initial

    def deposit(self, energy: float):
        room = self.capacity - self.stored
        taken = min(energy, room)
        self.harvested += energy
        self.clamp_loss += energy - taken
        self.stored += taken

    def withdraw(self, energy: float, active: bool) -> bool:
        """Draw energy; returns False when the store ran empty."""
        drawn = min(energy, self.stored)
        self.unserved += energy - drawn
        if active:
            self.consumed_active += drawn
        else:
            self.consumed_standby += drawn
        self.stored -= drawn
        if self.stored < 0:
            self.stored = 0.0
        return drawn >= energy

    def balance_error(self) -> float:
        return (self.initial + self.harvested - self.consumed_standby - self.consumed_active
                - self.clamp_loss - self.stored)


@dataclass
class NodeRecord:
    id: int
    position: tuple
    led_axis: tuple = (1.0, 0.0)
    detector_normal: tuple = (-1.0, 0.0)
    calibration: Calibration = DEFAULT_CALIBRATION
    harvest: ckt.HarvestFrontEnd = field(default_factory=ckt.HarvestFrontEnd)
    harvest_cell: object = field(default_factory=ckt.harvest_cell)
    led: OpticalSource | None = None
    mcu: McuProfile = field(default_factory=McuProfile)
    storage_max_voltage: float = 3.3
    conversion_efficiency: float = 0.8
    initial_voltage: float | None = None
    state: str = "PowerOff"
    ledger: EnergyLedger | None = None
    wakes: int = 0
    missed: int = 0
    depletions: int = 0
    depleted: bool = False
    pending_wake: bool = False
    _fe_state: object = None

    def __post_init__(self):
        c = self.harvest.storage_capacitance
        cap = 0.5 * c * self.storage_max_voltage**2
        v0 = self.harvest.storage_voltage if self.initial_voltage is None else self.initial_voltage
        if self.ledger is None:
            self.ledger = EnergyLedger(initial=min(0.5 * c * v0**2, cap), capacity=cap)
        if self.led is None:
            self.led = OpticalSource(position=tuple(self.position), orientation=tuple(self.led_axis))
        if not 0 < self.conversion_efficiency <= 1:
            raise ValueError("conversion_efficiency must lie in (0, 1]")
        self.netlist = self.calibration.netlist()
        self._fe_state = ckt.frontend_initial_state(self.harvest)

    @property
    def brownout_energy(self) -> float:
        return self.mcu.cycle_energy()


def standby_power(node: NodeRecord, lux: float) -> float:
    return float(ckt.standby_current(node.netlist, lux)) * node.netlist.supply_voltage


def harvest_step(node: NodeRecord, lux: float, dt: float) -> EnergyLedger:
    """Advance the node's ledger by ``dt`` at constant illuminance."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    step = ckt.step_frontend(node.harvest, node.harvest_cell, lux, dt, node._fe_state)
    node._fe_state = replace(step.state, storage_voltage=node._fe_state.storage_voltage)
    node.ledger.deposit(step.harvested_power * dt * node.conversion_efficiency)
    if node.state == "PowerOff":
        ok = node.ledger.withdraw(standby_power(node, lux) * dt, active=False)
    else:
        ok = node.ledger.withdraw(node.mcu.active_power * dt, active=True)
    if node.depleted and node.ledger.stored >= node.brownout_energy:
        node.depleted = False
    if not ok and not node.depleted:
        node.depleted = True
        node.depletions += 1
    return node.ledger


@dataclass(frozen=True, order=True)
class SimEvent:
    time: float
    node: int
    rank: int
    kind: str = field(compare=False)
    detail: str = field(compare=False, default="")


@dataclass
class SimTrace:
    events: list
    nodes: list
    seed: int

    EVENT_HEADER = "time,node,event,detail"
    LEDGER_HEADER = "node,initial,harvested,consumed_standby,consumed_active,clamp_loss,stored,capacity,balance_error"

    def events_csv(self) -> str:
        lines = [self.EVENT_HEADER] + [f"{e.time:.9f},{e.node},{e.kind},{e.detail}" for e in self.events]
        return "\n".join(lines) + "\n"

    def ledger_csv(self) -> str:
        lines = [self.LEDGER_HEADER]
        for n in self.nodes:
            L = n.ledger
            lines.append(
                f"{n.id},{L.initial:.12e},{L.harvested:.12e},{L.consumed_standby:.12e},"
                f"{L.consumed_active:.12e},{L.clamp_loss:.12e},{L.stored:.12e},{L.capacity:.12e},"
                f"{L.balance_error():.3e}"
            )
        return "\n".join(lines) + "\n"

    def of_kind(self, kind: str):
        return [e for e in self.events if e.kind == kind]


class DetectionCache:
    """Critical flash per (calibration, ambient) so wakes become a lookup."""

    def __init__(self):
        self._crit = {}

    def detects(self, node: NodeRecord, ambient: float, flash_lux: float) -> bool:
        key = (node.calibration, round(ambient, 9))
        if key not in self._crit:
            self._crit[key] = float(critical_flash(node.netlist, [ambient])[0])
        return flash_lux >= self._crit[key]


def pulse_detection(nets, ambient, flash_lux, pulse, fine_dt=None):
    """Noise-free Design 1 response of several receivers to one flash.

    Returns first-connect latency per receiver (inf when not woken).
    """
    n = len(nets)
    lat = np.full(n, np.inf)
    # receivers share a calibration in practice; group by netlist identity
    groups = {}
    for i, net in enumerate(nets):
        groups.setdefault(id(net), (net, []))[1].append(i)
    for net, idx in groups.values():
        idx = np.array(idx)
        st = ckt.design1_steady_state(net, np.full(len(idx), ambient))
        dt = fine_dt or ckt.solar_response_time(net.solar) / 20.0
        flash = np.asarray(flash_lux, dtype=float)[idx]
        n_steps = int(math.ceil(pulse.duration / dt))
        # once the EMF has settled under a flat flash, C1 charging only lowers
        # the gate drive, so a falling NMOS1 gate means no wake this pulse
        settled_after = pulse.rise + 20.0 * ckt.solar_response_time(net.solar)
        for k in range(1, n_steps + 1):
            t = k * dt
            g_prev = st.v_gate_nmos1
            st = ckt.step_design1(net, st, ambient + flash * pulse.envelope(t - dt), dt)
            sub = lat[idx]
            newly = st.mcu_connected & np.isinf(sub)
            sub[newly] = t
            lat[idx] = sub
            waiting = np.isinf(sub)
            if not np.any(waiting):
                break
            if t > settled_after and t < pulse.duration - pulse.fall and np.all(
                    st.v_gate_nmos1[waiting] <= g_prev[waiting]):
                break
    return lat


def run_scenario(nodes, ambient: AmbientProfile, flashes, horizon: float, seed: int = 0,
                 noise: NoiseModel | None = None, cache: DetectionCache | None = None,
                 ledger_dt: float = 1.0) -> SimTrace:
    """Event-driven run.

    ``flashes``: iterable of (time, node id) initiating flashes. Flashes from
    woken nodes are emitted at the start of their flash-forward phase.
    """
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    positions = [tuple(n.position) for n in nodes]
    if len(set(positions)) != len(positions):
        raise ValueError("node positions must be distinct")
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ValueError("node ids must be unique")
    by_id = {n.id: n for n in nodes}
    noise = noise or NoiseModel.none()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), len(nodes)]))

    queue, keys, log = [], set(), []

    def push(t, node, kind, detail=""):
        ev = SimEvent(float(t), int(node), KIND_RANK[kind], kind, detail)
        key = (ev.time, ev.node, ev.rank)
        if key in keys:
            raise RuntimeError(f"duplicate event key {key}: queue order would be ambiguous")
        keys.add(key)
        heapq.heappush(queue, ev)

    for t, nid in flashes:
        if nid not in by_id:
            raise ValueError(f"unknown node id {nid} in flash schedule")
        if 0 <= t <= horizon:
            push(t, nid, "FlashEmitted", "initiator")
    for seg in ambient.segments[1:]:
        if seg.start <= horizon:
            push(seg.start, -1, "AmbientChange", f"{seg.kind}:{seg.lux:g}")

    t_now = 0.0

    def advance(t_to):
        nonlocal t_now
        while t_to - t_now > 1e-15:
            h = min(ledger_dt, t_to - t_now)
            lux = float(ambient(t_now + 0.5 * h))
            for n in nodes:
                was = n.depleted
                harvest_step(n, lux, h)
                if n.depleted and not was:
                    log.append(SimEvent(t_now + h, n.id, KIND_RANK["StorageDepleted"], "StorageDepleted", n.state))
                    if n.state != "PowerOff":
                        n.state = "PowerOff"
            t_now += h

    while queue:
        ev = heapq.heappop(queue)
        keys.discard((ev.time, ev.node, ev.rank))
        if ev.time > horizon:
            break
        advance(ev.time)
        node = by_id.get(ev.node)
        if ev.kind == "PhaseComplete" and (node.state == "PowerOff"):
            continue  # cycle aborted by brown-out
        log.append(ev)
        if ev.kind == "FlashEmitted":
            _deliver_flash(node, nodes, ambient, ev.time, push, noise, rng, cache)
        elif ev.kind == "WakeDetected":
            node.pending_wake = False
            node.wakes += 1
            node.state = "Waking"
            push(ev.time + node.mcu.validate, node.id, "PhaseComplete", "validate")
        elif ev.kind == "PhaseComplete":
            i = PHASES.index(ev.detail)
            if i + 1 < len(PHASES):
                nxt = PHASES[i + 1]
                node.state = f"Active:{nxt}"
                push(ev.time + node.mcu.duration(nxt), node.id, "PhaseComplete", nxt)
                if nxt == "flash_forward":
                    push(ev.time, node.id, "FlashEmitted", "forward")
            else:
                node.state = "PowerOff"
    advance(horizon)
    return SimTrace(events=log, nodes=list(nodes), seed=seed)


def _deliver_flash(src, nodes, ambient, t, push, noise, rng, cache):
    amb = float(ambient(t))
    targets, flash = [], []
    for n in nodes:
        if n is src:
            continue
        geom = geometry_between(src.led, n.position, n.detector_normal)
        if geom is None:
            continue
        f = illuminance_from_irradiance(irradiance(src.led, geom), n.calibration.efficacy)
        if noise.amplitude_jitter > 0:
            f *= max(1.0 + noise.amplitude_jitter * rng.standard_normal(), 0.0)
        if n.state != "PowerOff" or n.pending_wake:
            continue
        if n.depleted or n.ledger.stored < n.brownout_energy:
            n.missed += 1
            continue
        targets.append(n)
        flash.append(f)
    if not targets:
        return
    if cache is not None:
        lat = [src.led.pulse.duration if cache.detects(n, amb, f) else np.inf for n, f in zip(targets, flash)]
    else:
        lat = pulse_detection([n.netlist for n in targets], amb, flash, src.led.pulse)
    for n, l in zip(targets, lat):
        if np.isfinite(l):
            n.pending_wake = True  # ignore further flashes until this wake resolves
            push(t + l, n.id, "WakeDetected", f"from={src.id}")
        else:
            n.missed += 1


def lifetime_report(trace: SimTrace):
    """Per-node summary rows."""
    rows = []
    for n in trace.nodes:
        L = n.ledger
        rows.append({
            "node": n.id,
            "wakes": n.wakes,
            "missed": n.missed,
            "depletions": n.depletions,
            "harvested": L.harvested,
            "consumed_standby": L.consumed_standby,
            "consumed_active": L.consumed_active,
            "clamp_loss": L.clamp_loss,
            "stored": L.stored,
        })
    return rows


REPORT_HEADER = "node,wakes,missed,depletions,harvested,consumed_standby,consumed_active,clamp_loss,stored"


def report_csv(rows) -> str:
    lines = [REPORT_HEADER]
    for r in rows:
        lines.append(",".join(
            str(r[k]) if isinstance(r[k], int) else f"{r[k]:.12e}" for k in REPORT_HEADER.split(",")
        ))
    return "\n".join(lines) + "\n"


def chain(n: int, spacing: float, **kw):
    """Nodes on the x axis, LEDs pointing +x and detectors facing -x."""
    return [NodeRecord(id=i, position=(i * spacing, 0.0), **kw) for i in range(n)]
