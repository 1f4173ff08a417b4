"""LED-to-detector link budget and ambient illumination profiles.

The transmitter is a generalized Lambertian emitter whose order is set by
its half-intensity viewing angle. Flash irradiance is converted to an
illuminance-equivalent through a luminous efficacy so that the flash and
the room light can be added on one scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Effective luminous efficacy of the white-LED flash (lm per optical W).
DEFAULT_EFFICACY = 300.0
DEFAULT_PULSE_DURATION = 0.050


@dataclass(frozen=True)
class PulseShape:
    duration: float = DEFAULT_PULSE_DURATION
    rise: float = 0.0
    fall: float = 0.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("pulse duration must be > 0")
        if self.rise < 0 or self.fall < 0 or self.rise + self.fall > self.duration:
            raise ValueError("rise + fall must fit inside the pulse duration")

    @property
    def trapezoidal(self) -> bool:
        return self.rise > 0 or self.fall > 0

    def envelope(self, t):
        """Relative intensity in [0, 1] at time ``t`` after emission."""
        t = np.asarray(t, dtype=float)
        env = ((t >= 0) & (t < self.duration)).astype(float)
        if self.rise > 0:
            env = np.where((t >= 0) & (t < self.rise), t / self.rise, env)
        if self.fall > 0:
            tail = self.duration - t
            env = np.where((tail > 0) & (tail < self.fall), tail / self.fall, env)
        return env


@dataclass(frozen=True)
class OpticalSource:
    optical_power: float = 0.020
    viewing_angle: float = 120.0
    position: tuple = (0.0, 0.0)
    orientation: tuple = (1.0, 0.0)
    pulse: PulseShape = field(default_factory=PulseShape)

    def __post_init__(self):
        if self.optical_power <= 0:
            raise ValueError("optical_power must be > 0")
        if not 0 < self.viewing_angle < 180:
            raise ValueError("viewing_angle must lie in (0, 180) degrees")


@dataclass(frozen=True)
class LinkGeometry:
    distance: float
    emission_angle: float = 0.0
    incidence_angle: float = 0.0

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError("distance must be > 0")
        for name in ("emission_angle", "incidence_angle"):
            a = getattr(self, name)
            if not 0 <= a <= 90:
                raise ValueError(f"{name} must lie in [0, 90] degrees")


def lambertian_order(viewing_angle: float) -> float:
    """Lambertian mode number m for a full half-intensity viewing angle."""
    if not 0 < viewing_angle < 180:
        raise ValueError(f"viewing angle {viewing_angle} outside (0, 180)")
    half = math.radians(viewing_angle / 2.0)
    return -math.log(2.0) / math.log(math.cos(half))


def irradiance(source: OpticalSource, geom: LinkGeometry) -> float:
    """Irradiance in W/m^2 at the detector plane."""
    m = lambertian_order(source.viewing_angle)
    cos_e = max(math.cos(math.radians(geom.emission_angle)), 0.0)
    cos_i = max(math.cos(math.radians(geom.incidence_angle)), 0.0)
    peak = (m + 1.0) * source.optical_power / (2.0 * math.pi * geom.distance**2)
    return peak * cos_e**m * cos_i


def illuminance_from_irradiance(e: float, efficacy: float = DEFAULT_EFFICACY) -> float:
    if e < 0:
        raise ValueError("irradiance must be >= 0")
    if efficacy <= 0:
        raise ValueError("efficacy must be > 0")
    return e * efficacy


def geometry_between(source: OpticalSource, detector_position, detector_normal) -> LinkGeometry | None:
    """Link geometry from a source to a detector, or None when out of view.

    Works for 2D and 3D coordinates. Returns None when the detector is behind
    the emitter or the emitter is behind the detector surface.
    """
    p0 = np.asarray(source.position, dtype=float)
    p1 = np.asarray(detector_position, dtype=float)
    axis = _unit(source.orientation)
    normal = _unit(detector_normal)
    d = p1 - p0
    dist = float(np.linalg.norm(d))
    if dist == 0:
        raise ValueError("source and detector coincide")
    u = d / dist
    cos_e = float(np.dot(axis, u))
    cos_i = float(np.dot(normal, -u))
    if cos_e <= 0 or cos_i <= 0:
        return None
    return LinkGeometry(
        distance=dist,
        emission_angle=math.degrees(math.acos(min(cos_e, 1.0))),
        incidence_angle=math.degrees(math.acos(min(cos_i, 1.0))),
    )


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("orientation must be non-zero")
    return v / n


# --- ambient profiles -------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """One piece of an ambient profile.

    kind is "constant", "step" (both use ``lux``) or "ramp" (``lux`` to
    ``lux_end`` over the segment's span; the span ends where the next segment
    starts, or after ``duration`` for the last one).
    """

    start: float
    kind: str
    lux: float
    lux_end: float | None = None
    duration: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "step", "ramp"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.lux < 0 or (self.lux_end is not None and self.lux_end < 0):
            raise ValueError("illuminance must be >= 0")
        if self.kind == "ramp" and self.lux_end is None:
            raise ValueError("ramp segment needs lux_end")


class AmbientProfile:
    """Piecewise background illuminance over time."""

    def __init__(self, segments: Sequence[Segment]):
        segs = list(segments)
        if not segs:
            raise ValueError("profile needs at least one segment")
        for a, b in zip(segs, segs[1:]):
            if b.start <= a.start:
                raise ValueError("segments must be strictly time-ordered")
        last = segs[-1]
        if last.kind == "ramp" and last.duration is None:
            raise ValueError("a trailing ramp needs an explicit duration")
        self.segments = tuple(segs)
        self._starts = np.array([s.start for s in segs])

    @classmethod
    def constant(cls, lux: float) -> "AmbientProfile":
        return cls([Segment(0.0, "constant", lux)])

    @classmethod
    def ramp(cls, lux_start: float, lux_end: float, duration: float, start: float = 0.0):
        segs = [Segment(start, "ramp", lux_start, lux_end, duration)]
        if start > 0:
            segs.insert(0, Segment(0.0, "constant", lux_start))
        return cls(segs)

    @classmethod
    def step(cls, lux_before: float, lux_after: float, at: float):
        return cls([Segment(0.0, "constant", lux_before), Segment(at, "step", lux_after)])

    def _end(self, i: int) -> float:
        if i + 1 < len(self.segments):
            return self.segments[i + 1].start
        seg = self.segments[i]
        return seg.start + (seg.duration if seg.duration is not None else math.inf)

    def _value(self, i: int, t):
        seg = self.segments[i]
        if seg.kind != "ramp":
            return np.full_like(t, seg.lux, dtype=float)
        span = self._end(i) - seg.start
        frac = np.clip((t - seg.start) / span, 0.0, 1.0)
        return seg.lux + (seg.lux_end - seg.lux) * frac

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        idx = np.searchsorted(self._starts, t_arr, side="right") - 1
        idx = np.clip(idx, 0, len(self.segments) - 1)
        out = np.empty_like(t_arr, dtype=float)
        for i in np.unique(idx):
            mask = idx == i
            out[mask] = self._value(int(i), t_arr[mask])
        # before the first segment: the first segment's start value
        out = np.where(t_arr < self._starts[0], self.segments[0].lux, out)
        return out if out.ndim else float(out)

    def max_lux(self) -> float:
        vals = [s.lux for s in self.segments] + [s.lux_end for s in self.segments if s.lux_end is not None]
        return max(vals)


def ambient_at(profile: AmbientProfile, t: float) -> float:
    if t < 0:
        raise ValueError("t must be >= 0")
    return float(profile(t))
