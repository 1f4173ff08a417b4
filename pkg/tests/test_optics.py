import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from optiwake.optics import (
    AmbientProfile,
    LinkGeometry,
    OpticalSource,
    PulseShape,
    Segment,
    ambient_at,
    geometry_between,
    illuminance_from_irradiance,
    irradiance,
    lambertian_order,
)


def test_order_120_deg_is_one():
    assert lambertian_order(120.0) == pytest.approx(1.0, abs=1e-12)


def test_order_60_deg():
    assert lambertian_order(60.0) == pytest.approx(-math.log(2) / math.log(math.cos(math.radians(30))), rel=1e-12)
    assert lambertian_order(60.0) == pytest.approx(4.8188, abs=1e-3)


def test_order_near_180_is_small_and_positive():
    m = lambertian_order(179.9)
    assert 0 < m < 0.1


@pytest.mark.parametrize("angle", [0.0, 180.0, -5.0, 200.0])
def test_order_rejects_out_of_range(angle):
    with pytest.raises(ValueError):
        lambertian_order(angle)


def test_irradiance_on_axis_value():
    e = irradiance(OpticalSource(0.020, 120.0), LinkGeometry(0.25))
    assert e == pytest.approx(2 * 0.02 / (2 * math.pi * 0.0625), rel=1e-12)
    assert e == pytest.approx(0.1019, abs=1e-4)


def test_irradiance_null_at_90_deg():
    assert irradiance(OpticalSource(), LinkGeometry(0.2, emission_angle=90.0)) == pytest.approx(0.0, abs=1e-15)


@given(d=st.floats(0.01, 5.0), angle=st.floats(10.0, 170.0))
def test_inverse_square(d, angle):
    src = OpticalSource(0.02, angle)
    assert irradiance(src, LinkGeometry(2 * d)) == pytest.approx(irradiance(src, LinkGeometry(d)) / 4, rel=1e-12)


@given(d=st.floats(0.01, 5.0), a=st.floats(0.0, 89.0), b=st.floats(0.0, 89.0))
def test_irradiance_monotone_in_angles(d, a, b):
    src = OpticalSource()
    lo, hi = sorted((a, b))
    assert irradiance(src, LinkGeometry(d, emission_angle=hi)) <= irradiance(src, LinkGeometry(d, emission_angle=lo)) + 1e-15
    assert irradiance(src, LinkGeometry(d, incidence_angle=hi)) <= irradiance(src, LinkGeometry(d, incidence_angle=lo)) + 1e-15


@pytest.mark.parametrize("angle", [30.0, 60.0, 120.0, 150.0])
def test_hemisphere_integral_recovers_power(angle):
    src = OpticalSource(0.020, angle)
    r = 0.7

    def ring(theta):
        e = irradiance(src, LinkGeometry(r, emission_angle=math.degrees(theta)))
        return e * 2 * math.pi * r**2 * math.sin(theta)

    total, _ = quad(ring, 0.0, math.pi / 2, epsabs=0, epsrel=1e-12, limit=200)
    assert total == pytest.approx(src.optical_power, rel=1e-6)


def test_illuminance_conversion():
    assert illuminance_from_irradiance(0.1019, 300.0) == pytest.approx(30.57, abs=1e-9)
    assert illuminance_from_irradiance(0.0) == 0.0
    assert illuminance_from_irradiance(1.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        illuminance_from_irradiance(-1.0)
    with pytest.raises(ValueError):
        illuminance_from_irradiance(1.0, 0.0)


def test_invalid_source_and_geometry():
    with pytest.raises(ValueError):
        OpticalSource(optical_power=0.0)
    with pytest.raises(ValueError):
        LinkGeometry(0.0)
    with pytest.raises(ValueError):
        LinkGeometry(1.0, emission_angle=95.0)
    with pytest.raises(ValueError):
        PulseShape(duration=0.01, rise=0.006, fall=0.006)


def test_pulse_envelope_shapes():
    sq = PulseShape(0.05)
    assert sq.envelope(-1e-6) == 0.0 and sq.envelope(0.0) == 1.0 and sq.envelope(0.05) == 0.0
    tr = PulseShape(0.05, rise=0.01, fall=0.01)
    assert tr.envelope(0.005) == pytest.approx(0.5)
    assert tr.envelope(0.045) == pytest.approx(0.5)
    assert tr.trapezoidal and not sq.trapezoidal


def test_geometry_between_facing_nodes():
    src = OpticalSource(position=(0.0, 0.0), orientation=(1.0, 0.0))
    g = geometry_between(src, (0.15, 0.0), (-1.0, 0.0))
    assert g.distance == pytest.approx(0.15)
    assert g.emission_angle == pytest.approx(0.0, abs=1e-9)
    assert g.incidence_angle == pytest.approx(0.0, abs=1e-9)
    assert geometry_between(src, (-0.15, 0.0), (1.0, 0.0)) is None
    assert geometry_between(src, (0.15, 0.0), (1.0, 0.0)) is None


def test_geometry_between_oblique_3d():
    src = OpticalSource(position=(0.0, 0.0, 0.0), orientation=(1.0, 0.0, 0.0))
    g = geometry_between(src, (1.0, 1.0, 0.0), (-1.0, 0.0, 0.0))
    assert g.distance == pytest.approx(math.sqrt(2))
    assert g.emission_angle == pytest.approx(45.0)
    assert g.incidence_angle == pytest.approx(45.0)


def test_ambient_examples():
    assert ambient_at(AmbientProfile.constant(400.0), 123.0) == 400.0
    assert ambient_at(AmbientProfile.ramp(0.0, 1600.0, 10.0), 5.0) == pytest.approx(800.0)
    step = AmbientProfile.step(400.0, 2000.0, 1.0)
    assert ambient_at(step, 0.999) == 400.0
    assert ambient_at(step, 1.0) == 2000.0
    with pytest.raises(ValueError):
        ambient_at(step, -0.1)


def test_profile_vectorised_matches_scalar():
    prof = AmbientProfile([Segment(0.0, "constant", 10.0), Segment(1.0, "ramp", 10.0, 110.0),
                           Segment(2.0, "step", 50.0)])
    t = np.linspace(0, 3, 31)
    assert np.allclose(prof(t), [prof(float(x)) for x in t])
    assert prof(1.5) == pytest.approx(60.0)
    assert prof.max_lux() == 110.0


def test_profile_validation():
    with pytest.raises(ValueError):
        AmbientProfile([])
    with pytest.raises(ValueError):
        AmbientProfile([Segment(1.0, "constant", 1.0), Segment(0.5, "constant", 2.0)])
    with pytest.raises(ValueError):
        Segment(0.0, "constant", -1.0)
    with pytest.raises(ValueError):
        AmbientProfile([Segment(0.0, "ramp", 0.0, 10.0)])


@settings(max_examples=50)
@given(a=st.floats(0, 2000), b=st.floats(0, 2000), dur=st.floats(0.1, 1000), t=st.floats(0, 2000))
def test_ramp_stays_between_endpoints(a, b, dur, t):
    v = AmbientProfile.ramp(a, b, dur)(t)
    assert min(a, b) - 1e-9 <= v <= max(a, b) + 1e-9


@pytest.mark.parametrize("m", [1, 2, 5, 20])
def test_hemisphere_normalisation_for_orders(m):
    angle = 2 * math.degrees(math.acos(2 ** (-1 / m)))
    assert lambertian_order(angle) == pytest.approx(m, rel=1e-12)
    test_hemisphere_integral_recovers_power(angle)


@given(d1=st.floats(0.01, 5.0), d2=st.floats(0.01, 5.0))
def test_irradiance_strictly_decreasing_in_distance(d1, d2):
    if d1 == d2:
        return
    lo, hi = sorted((d1, d2))
    assert irradiance(OpticalSource(), LinkGeometry(hi)) < irradiance(OpticalSource(), LinkGeometry(lo))


@given(lux=st.lists(st.floats(0, 1e5), min_size=1, max_size=5), t=st.floats(0, 100))
def test_ambient_never_negative(lux, t):
    segs = [Segment(float(i), "ramp" if i % 2 else "constant", v, lux_end=v / 2, duration=1.0)
            for i, v in enumerate(lux)]
    assert AmbientProfile(segs)(t) >= 0
