"""Behavioral models of the photodetectors and MOSFET switches.

Every function accepts scalars or numpy arrays so the circuit stepper can
advance many independent trials at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import lambertw

THERMAL_VOLTAGE = 0.02585  # kT/q at 27 C, V

# Log-law anchors: Voc at two illuminance levels.
VOC_ANCHORS = ((400.0, 0.600), (1600.0, 0.750))


def fit_voc_coefficients(anchors=VOC_ANCHORS):
    """Coefficients (a, b) of Voc = a + b ln(lux) through two anchor points."""
    (e1, v1), (e2, v2) = anchors
    b = (v2 - v1) / math.log(e2 / e1)
    a = v1 - b * math.log(e1)
    return a, b


_A, _B = fit_voc_coefficients()


@dataclass(frozen=True)
class SolarCellModel:
    area: float = 80.0  # mm^2
    voc_coeff_a: float = _A
    voc_coeff_b: float = _B
    r_dark: float = 200e3
    r_bright: float = 20e3
    lux_bright: float = 1600.0
    response_time_ref: tuple = (1e-3, 375.0)  # (s, mm^2)

    def __post_init__(self):
        if self.area <= 0:
            raise ValueError("solar cell area must be > 0")
        if self.voc_coeff_b < 0:
            raise ValueError("voc_coeff_b must be >= 0 for a non-decreasing Voc")
        if not 0 < self.r_bright <= self.r_dark:
            raise ValueError("need 0 < r_bright <= r_dark")
        if self.response_time_ref[0] <= 0 or self.response_time_ref[1] <= 0:
            raise ValueError("response_time_ref entries must be > 0")

    def series_resistance(self, lux):
        """Source resistance R_sc, falling hyperbolically with light."""
        lux = np.maximum(np.asarray(lux, dtype=float), 0.0)
        k = self.r_dark / self.r_bright - 1.0
        r = self.r_dark / (1.0 + k * lux / self.lux_bright)
        return r if r.ndim else float(r)


def solar_voc(model: SolarCellModel, lux):
    """Open-circuit voltage; log-law above 1 lx, linear to 0 V below."""
    lux = np.asarray(lux, dtype=float)
    if np.any(lux < 0):
        raise ValueError("illuminance must be >= 0")
    at_one = max(0.0, model.voc_coeff_a)
    safe = np.maximum(lux, 1.0)
    v = np.maximum(0.0, model.voc_coeff_a + model.voc_coeff_b * np.log(safe))
    v = np.where(lux < 1.0, lux * at_one, v)
    return v if v.ndim else float(v)


def solar_response_time(model: SolarCellModel) -> float:
    t_ref, a_ref = model.response_time_ref
    return t_ref * model.area / a_ref


# --- phototransistor --------------------------------------------------------

AMBIENT_EFFICACY = 300.0  # lm/W used to express room light as irradiance


@dataclass(frozen=True)
class PhototransistorModel:
    sensitive_area: float = 0.29  # mm^2
    # 100 uA uncoated at 500 lx: 1e-4 / (500 / 300)
    responsivity: float = 6.0e-5  # A per W/m^2
    response_time_on: float = 15e-6
    response_time_off: float = 90e-6
    coating_attenuation: float = 1.0
    ambient_efficacy: float = AMBIENT_EFFICACY

    def __post_init__(self):
        if self.sensitive_area <= 0 or self.responsivity <= 0:
            raise ValueError("sensitive_area and responsivity must be > 0")
        if not 0 < self.coating_attenuation <= 1:
            raise ValueError("coating_attenuation must lie in (0, 1]")
        for t in (self.response_time_on, self.response_time_off):
            if not 5e-6 <= t <= 90e-6:
                raise ValueError("phototransistor response times must lie in [5, 90] us")


def pt_collector_current(model: PhototransistorModel, irradiance, ambient_lux):
    irradiance = np.asarray(irradiance, dtype=float)
    ambient_lux = np.asarray(ambient_lux, dtype=float)
    if np.any(irradiance < 0) or np.any(ambient_lux < 0):
        raise ValueError("irradiance and ambient must be >= 0")
    e_eq = irradiance + ambient_lux / model.ambient_efficacy
    i = model.responsivity * model.coating_attenuation * e_eq
    return i if i.ndim else float(i)


# --- LDR --------------------------------------------------------------------


@dataclass(frozen=True)
class LdrModel:
    """Power-law LDR: R = r_ref * (lux / lux_ref) ** -gamma, capped at r_dark."""

    r_ref: float = 10e3
    lux_ref: float = 100.0
    gamma: float = math.log(10e3 / 0.5e3) / math.log(1600.0 / 100.0)
    r_dark: float = 10e6
    tau_fall: float = 10e-3
    tau_rise: float = 1.5
    coating_attenuation: float = 1.0

    def __post_init__(self):
        if self.r_ref <= 0 or self.lux_ref <= 0 or self.gamma <= 0 or self.r_dark <= 0:
            raise ValueError("LDR curve parameters must be > 0")
        if not 0 < self.tau_fall < self.tau_rise:
            raise ValueError("need 0 < tau_fall < tau_rise")
        if not 0 < self.coating_attenuation <= 1:
            raise ValueError("coating_attenuation must lie in (0, 1]")

    def resistance_curve(self, lux):
        """Steady-state resistance at the illuminance reaching the element."""
        lux = np.maximum(np.asarray(lux, dtype=float), 0.0)
        with np.errstate(divide="ignore", over="ignore"):
            r = self.r_ref * np.power(np.maximum(lux, 1e-300) / self.lux_ref, -self.gamma)
        # series form keeps the curve strictly decreasing while capping at r_dark
        r = 1.0 / (1.0 / r + 1.0 / self.r_dark)
        return r if r.ndim else float(r)


def ldr_resistance_step(model: LdrModel, r_now, lux, dt):
    if dt <= 0:
        raise ValueError("dt must be > 0")
    r_now = np.asarray(r_now, dtype=float)
    if np.any(r_now <= 0):
        raise ValueError("r_now must be > 0")
    target = model.resistance_curve(np.asarray(lux, dtype=float) * model.coating_attenuation)
    tau = np.where(target < r_now, model.tau_fall, model.tau_rise)
    r = target + (r_now - target) * np.exp(-dt / tau)
    return r if r.ndim else float(r)


# --- MOSFET -----------------------------------------------------------------


@dataclass(frozen=True)
class MosfetParams:
    """Behavioral switch with a subthreshold region.

    Channel current is ``floor + I_T * 10**(overdrive / swing)`` shaped by the
    drain-source saturation factor and capped by the ohmic limit
    ``|vds| / on_resistance``. ``threshold_current`` is I_T, the current at
    zero overdrive.
    """

    polarity: str = "N"
    vgs_threshold: float = 0.5
    subthreshold_swing: float = 0.090
    off_current_floor: float = 10e-12
    on_resistance: float = 2.0
    threshold_current: float = 1e-6

    def __post_init__(self):
        if self.polarity not in ("N", "P"):
            raise ValueError("polarity must be 'N' or 'P'")
        if self.polarity == "N" and self.vgs_threshold <= 0:
            raise ValueError("N-channel vgs_threshold must be > 0")
        if self.polarity == "P" and self.vgs_threshold >= 0:
            raise ValueError("P-channel vgs_threshold must be < 0")
        if self.subthreshold_swing <= 0:
            raise ValueError("subthreshold_swing must be > 0")
        if self.off_current_floor < 0 or self.on_resistance <= 0 or self.threshold_current <= 0:
            raise ValueError("floor >= 0, on_resistance > 0, threshold_current > 0 required")


def overdrive(params: MosfetParams, vgs):
    vgs = np.asarray(vgs, dtype=float)
    return vgs - params.vgs_threshold if params.polarity == "N" else params.vgs_threshold - vgs


def exponential_current(params: MosfetParams, vgs):
    """Saturated (large |vds|) channel current before the ohmic cap."""
    ov = overdrive(params, vgs)
    expo = np.minimum(ov / params.subthreshold_swing, 300.0)
    return params.off_current_floor + params.threshold_current * np.power(10.0, expo)


def mosfet_current(params: MosfetParams, vgs, vds):
    """Magnitude of the channel current (always >= 0)."""
    i_e = exponential_current(params, vgs)
    u = np.abs(np.asarray(vds, dtype=float))
    i = np.minimum(i_e * -np.expm1(-u / THERMAL_VOLTAGE), u / params.on_resistance)
    return i if i.ndim else float(i)


def _ln_w_halley(t):
    # y = ln w solves e^y + y = t; start above the root, Halley converges in <= 4
    y = np.where(t > 1.0, np.log(np.maximum(t, 1.0)), t)
    for _ in range(4):
        ey = np.exp(y)
        f = ey + y - t
        d = ey + 1.0
        y = y - f / (d - 0.5 * f * ey / d)
    return y


def _w_log(t):
    """Solve w + ln(w) = t for w > 0 (principal Lambert W of exp(t))."""
    t = np.asarray(t, dtype=float)
    if t.size >= 128:  # fixed ufunc cost beats scipy's per-element cost here
        return np.exp(_ln_w_halley(t))
    w = np.asarray(lambertw(np.exp(np.minimum(t, 30.0))).real)
    big = t > 30.0
    if np.any(big):
        w[big] = np.exp(_ln_w_halley(t[big]))
    return w


def loaded_switch_drop(params: MosfetParams, vgs, v_avail, r_load):
    """Voltage across a MOSFET in series with a resistor across ``v_avail``.

    Solves ``(v_avail - u) / r_load = I(vgs, u)`` for the drain-source drop
    u in closed form. Returns (u, current).
    """
    v = np.maximum(np.asarray(v_avail, dtype=float), 0.0)
    r = np.asarray(r_load, dtype=float)
    i_e = exponential_current(params, vgs)
    ut = THERMAL_VOLTAGE
    k = r * i_e
    # u = V - K + U*w with w e^w = (K/U) exp((K - V)/U)
    ln_ku = np.log(np.maximum(k, 1e-300) / ut)
    w = _w_log(ln_ku + (k - v) / ut)
    # for w > 1 the direct form cancels (K and U*w both huge); use ln w = t - w
    u_big = ut * (ln_ku - np.log(np.maximum(w, 1e-300)))
    u_exp = np.where(w > 1.0, u_big, v - k + ut * w)
    u_ohm = v * params.on_resistance / (params.on_resistance + r)
    u = np.clip(np.maximum(u_exp, u_ohm), 0.0, v)
    i = (v - u) / r
    return u, i
