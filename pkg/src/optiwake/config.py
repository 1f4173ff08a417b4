"""Scenario configuration: a TOML tree of sections with scalar and list values.

Every key has a default; ``parse_config`` overlays the user text on the
defaults, rejects unknown keys and type mismatches, and builds the model
objects so invariant violations surface as ConfigError naming the key.
"""

from __future__ import annotations

import copy
import hashlib
import sys
from dataclasses import dataclass

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import circuit as ckt
from .devices import LdrModel, MosfetParams, PhototransistorModel, SolarCellModel
from .experiments import NoiseModel, TrialConfig
from .netsim import McuProfile, NodeRecord
from .optics import AmbientProfile, OpticalSource, PulseShape, Segment


class ConfigError(ValueError):
    pass


def _mos(pol, vth, swing=0.090, floor=10e-12):
    return {
        "polarity": pol, "vgs_threshold": vth, "subthreshold_swing": swing,
        "off_current_floor": floor, "on_resistance": 2.0, "threshold_current": 1e-6,
    }


_SOLAR = SolarCellModel()

DEFAULTS = {
    "optics": {
        "optical_power": 0.020,
        "viewing_angle": 120.0,
        "pulse_duration": 0.050,
        "pulse_rise": 0.0,
        "pulse_fall": 0.0,
    },
    "solar": {
        "area": _SOLAR.area,
        "voc_coeff_a": _SOLAR.voc_coeff_a,
        "voc_coeff_b": _SOLAR.voc_coeff_b,
        "r_dark": _SOLAR.r_dark,
        "r_bright": _SOLAR.r_bright,
    },
    "design1": {
        "r1": 1.33e6,
        "r2": 1.13e6,
        "c1": 470e-9,
        "r_gs_nmos1": 10e6,
        "r_aux": 3.3e6,
        "supply_voltage": ckt.SUPPLY_VOLTAGE,
        "r_mcu": ckt.SUPPLY_VOLTAGE / ckt.MCU_ACTIVE_CURRENT,
        "pmos1": _mos("P", -0.45),
        "nmos1": _mos("N", 0.5),
        "pmos2": _mos("P", -1.0),
    },
    "design2": {
        "r_bias": 10e3,
        "r_aux": 3.3e6,
        "flash_efficacy": 300.0,
        "pt_coating": 0.01,
        "ldr_coating": 0.01,
        "nmos1": _mos("N", ckt.default_design2_nmos1().vgs_threshold),
    },
    "noise": {
        "flicker_fraction": 0.02,
        "flicker_bandwidth": 100.0,
        "amplitude_jitter": 0.03,
    },
    "experiment": {
        "design": 1,
        "pulses": 100,
        "pulse_period": 5.0,
        "lux": [0.0, 400.0, 800.0, 1200.0, 1600.0, 2000.0],
        "distances": [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35],
        "standby_lux": [0.0, 400.0, 800.0, 1600.0],
        "race_lux": [400.0, 800.0],
        "race_repeats": 10,
        "linkbudget_distances": [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.50],
    },
    "immunity": {
        "ramp_lux": 1600.0,
        "ramp_duration": 600.0,
        "step_duration": 0.001,
        "tail": 2.0,
    },
    "frontend": {
        "kind": "pmic_mppt",
        "clamp_fraction": 0.8,
        "v_drop": 0.3,
        "storage_voltage": 1.5,
        "storage_capacitance": 0.1,
    },
    "mcu": {
        "active_current": ckt.MCU_ACTIVE_CURRENT,
        "validate": 0.010,
        "measure": 0.050,
        "transmit": 0.100,
        "flash_forward": 0.050,
    },
    "netsim": {
        "horizon": 5.0,
        "ambient_lux": 400.0,
        "spacing": 0.15,
        "count": 5,
        "flashes": [[1.0, 0]],
        "use_cache": False,
        "conversion_efficiency": 0.8,
        "storage_max_voltage": 3.3,
    },
    "sweep": {
        "r1": [1.0e6, 1.33e6, 2.0e6],
        "r2": [0.5e6, 1.13e6],
        "c1": [100e-9, 470e-9, 1e-6],
        "pmos1_vth": [],
        "objective": "pareto",
        "reference_lux": 400.0,
        "standby_lux": 1600.0,
        "min_adaptation_time": 1.0,
    },
}


def _type_ok(default, value):
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return False


def _merge(defaults: dict, user: dict, path: str, out: dict):
    for key, value in user.items():
        where = f"{path}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown key '{where}'")
        d = defaults[key]
        if isinstance(d, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a section")
            _merge(d, value, where + ".", out[key])
        else:
            if not _type_ok(d, value):
                raise ConfigError(f"'{where}' expects {type(d).__name__}, got {type(value).__name__}")
            out[key] = float(value) if isinstance(d, float) else value


@dataclass
class Params:
    tree: dict

    def __eq__(self, other):
        return isinstance(other, Params) and self.tree == other.tree

    def section(self, name):
        return self.tree[name]

    def digest(self) -> str:
        return hashlib.sha256(render(self).encode()).hexdigest()[:16]

    # --- builders ---------------------------------------------------------
    def source(self) -> OpticalSource:
        o = self.tree["optics"]
        pulse = PulseShape(o["pulse_duration"], o["pulse_rise"], o["pulse_fall"])
        return OpticalSource(o["optical_power"], o["viewing_angle"], pulse=pulse)

    def solar(self) -> SolarCellModel:
        return SolarCellModel(**self.tree["solar"])

    def design1(self) -> ckt.Design1Netlist:
        d = dict(self.tree["design1"])
        mos = {k: MosfetParams(**d.pop(k)) for k in ("pmos1", "nmos1", "pmos2")}
        return ckt.Design1Netlist(solar=self.solar(), **mos, **d)

    def design2(self) -> ckt.Design2Netlist:
        d = dict(self.tree["design2"])
        pt = PhototransistorModel(coating_attenuation=d.pop("pt_coating"))
        ldr = LdrModel(coating_attenuation=d.pop("ldr_coating"))
        nmos1 = MosfetParams(**d.pop("nmos1"))
        return ckt.Design2Netlist(pt=pt, ldr=ldr, nmos1=nmos1, **d)

    def noise(self) -> NoiseModel:
        return NoiseModel(**self.tree["noise"])

    def frontend(self) -> ckt.HarvestFrontEnd:
        return ckt.HarvestFrontEnd(**self.tree["frontend"])

    def mcu(self) -> McuProfile:
        return McuProfile(supply_voltage=self.tree["design1"]["supply_voltage"], **self.tree["mcu"])

    def trial(self, calibration, seed: int = 0) -> TrialConfig:
        e = self.tree["experiment"]
        return TrialConfig(
            design=e["design"], pulses=e["pulses"], pulse_period=e["pulse_period"], rng_seed=seed,
            noise=self.noise(), source=self.source(), calibration=calibration,
            design1=self.design1(), design2=self.design2(),
        )

    def nodes(self, calibration):
        n = self.tree["netsim"]
        out = []
        for i in range(n["count"]):
            led = OpticalSource(
                self.tree["optics"]["optical_power"], self.tree["optics"]["viewing_angle"],
                position=(i * n["spacing"], 0.0), orientation=(1.0, 0.0), pulse=self.source().pulse,
            )
            out.append(NodeRecord(
                id=i, position=(i * n["spacing"], 0.0), calibration=calibration, harvest=self.frontend(),
                led=led, mcu=self.mcu(), storage_max_voltage=n["storage_max_voltage"],
                conversion_efficiency=n["conversion_efficiency"],
            ))
        return out

    def ambient(self) -> AmbientProfile:
        return AmbientProfile([Segment(0.0, "constant", self.tree["netsim"]["ambient_lux"])])

    def validate(self):
        """Build every object once so invariant violations are reported."""
        for name, build in (
            ("optics", self.source), ("solar", self.solar), ("design1", self.design1),
            ("design2", self.design2), ("noise", self.noise), ("frontend", self.frontend), ("mcu", self.mcu),
        ):
            try:
                build()
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"[{name}] {exc}") from exc
        e = self.tree["experiment"]
        if e["design"] not in (1, 2):
            raise ConfigError("'experiment.design' must be 1 or 2")
        if e["pulses"] < 1:
            raise ConfigError("'experiment.pulses' must be >= 1")
        if e["pulse_period"] <= self.tree["optics"]["pulse_duration"]:
            raise ConfigError("'experiment.pulse_period' must exceed the pulse duration")
        if any(x < 0 for x in e["lux"]) or any(d <= 0 for d in e["distances"]):
            raise ConfigError("'experiment.lux' must be >= 0 and 'experiment.distances' > 0")
        n = self.tree["netsim"]
        if n["horizon"] <= 0 or n["count"] < 1 or n["spacing"] <= 0:
            raise ConfigError("'netsim' needs horizon > 0, count >= 1 and spacing > 0")
        if self.tree["sweep"]["objective"] not in ("max_range", "min_standby", "pareto"):
            raise ConfigError("'sweep.objective' must be max_range, min_standby or pareto")
        return self


def parse_config(text: str) -> Params:
    try:
        user = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from exc
    tree = copy.deepcopy(DEFAULTS)
    _merge(DEFAULTS, user, "", tree)
    return Params(tree).validate()


def render(params: Params) -> str:
    return tomli_w.dumps(params.tree)


def defaulted_keys(text: str):
    """Dotted keys that were filled from defaults."""
    user = tomllib.loads(text) if text.strip() else {}
    out = []

    def walk(d, u, path):
        for k, v in d.items():
            if isinstance(v, dict):
                walk(v, u.get(k, {}) if isinstance(u, dict) else {}, f"{path}{k}.")
            elif not (isinstance(u, dict) and k in u):
                out.append(f"{path}{k}")

    walk(DEFAULTS, user, "")
    return out


# --- calibration records ------------------------------------------------------

from .experiments import FIT_PARAMS, Calibration  # noqa: E402


def calibration_to_toml(cal: Calibration) -> str:
    doc = {
        "calibration": {"name": cal.name, **{k: float(getattr(cal, k)) for k in FIT_PARAMS}},
        "residuals": [
            {"anchor": a, "model": float(m), "target": float(t), "scaled": float(r)}
            for a, m, t, r in cal.residuals
        ],
    }
    return tomli_w.dumps(doc)


def calibration_from_toml(text: str) -> Calibration:
    try:
        doc = tomllib.loads(text)
        c = doc["calibration"]
        unknown = set(c) - set(FIT_PARAMS) - {"name"}
        if unknown:
            raise ConfigError(f"unknown key 'calibration.{sorted(unknown)[0]}'")
        res = tuple((r["anchor"], r["model"], r["target"], r["scaled"]) for r in doc.get("residuals", []))
        return Calibration(name=c["name"], residuals=res, **{k: float(c[k]) for k in FIT_PARAMS})
    except (tomllib.TOMLDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed calibration record: {exc}") from exc
