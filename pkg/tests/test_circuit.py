import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optiwake import circuit as ckt
from optiwake.devices import MosfetParams, solar_response_time, solar_voc
from optiwake.experiments import DEFAULT_CALIBRATION, ambient_immunity_trial, critical_flash
from optiwake.optics import AmbientProfile, PulseShape

NET = DEFAULT_CALIBRATION.netlist()
TAU_SC = solar_response_time(NET.solar)


def run(net, state, lux_fn, t_end, dt):
    n = int(round(t_end / dt))
    seen = []
    for k in range(1, n + 1):
        state = ckt.step_design1(net, state, lux_fn(k * dt), dt)
        seen.append(bool(state.mcu_connected[0]))
    return state, seen


# --- closed-form helpers --------------------------------------------------------


def test_equivalent_resistance_examples():
    assert ckt.equivalent_resistance(0, 1.33e6, 1.13e6) == pytest.approx(610.9e3, abs=50)
    assert ckt.equivalent_resistance(100e3, 1.33e6, 1.13e6) == pytest.approx(631.2e3, abs=50)
    assert ckt.equivalent_resistance(50e3, 1e6, 1e15) == pytest.approx(1.05e6, rel=1e-6)


def test_adaptation_time_examples():
    r_e = ckt.equivalent_resistance(0, 1.33e6, 1.13e6)
    assert ckt.adaptation_time(r_e, 470e-9) == pytest.approx(1.436, abs=1e-3)
    assert ckt.adaptation_time(r_e, 940e-9) == pytest.approx(2 * ckt.adaptation_time(r_e, 470e-9))
    with pytest.raises(ValueError):
        ckt.adaptation_time(r_e, 0.0)


@pytest.mark.parametrize("kw", [dict(c1=0.0), dict(r1=0.0), dict(supply_voltage=-1.0),
                                dict(pmos1=MosfetParams("N", 0.5))])
def test_netlist_validation(kw):
    with pytest.raises(ValueError):
        ckt.Design1Netlist(**kw)


# --- Design 1 transient ----------------------------------------------------------


def _forced_off(net):
    off = MosfetParams("P", -50.0, off_current_floor=0.0, threshold_current=1e-30)
    return replace(net, pmos1=off)


def test_rc_step_matches_single_pole():
    net = _forced_off(NET)
    rs = 20e3
    st = ckt.design1_steady_state(net, [0.0])
    e = 0.6
    # the step is applied at t = 0, so the source already reads e at the initial time
    st = replace(st, v_b1=np.zeros(1), emf=np.full(1, e), r_sc=np.full(1, rs), i_pmos1=np.zeros(1))
    tau = ckt.equivalent_resistance(rs, net.r1, net.r2) * net.c1
    v_inf = e * net.r2 / (rs + net.r1 + net.r2)
    dt = tau / 2000
    worst = 0.0
    for k in range(1, 6001):
        st = ckt.step_design1(net, st, 0.0, dt, emf=e, r_sc=rs)
        if k % 100 == 0:
            exact = v_inf * (1 - math.exp(-k * dt / tau))
            worst = max(worst, abs(float(st.v_b1[0]) - exact) / exact)
    assert worst < 1e-3


def test_steady_state_divider_and_disconnected_at_400():
    st = ckt.design1_steady_state(NET, [400.0])
    rs = NET.solar.series_resistance(400.0)
    i1 = float(st.i_pmos1[0])
    # KCL at B1: current in from the cell through R1 equals current out through R2
    i_in = (float(st.v_sc[0]) - float(st.v_b1[0])) / NET.r1
    assert i_in == pytest.approx(float(st.v_b1[0]) / NET.r2, rel=1e-9)
    # KCL at the cell node
    assert (0.6 - float(st.v_sc[0])) / rs == pytest.approx(i_in + i1, rel=1e-9)
    assert not st.mcu_connected[0]
    held, seen = run(NET, st, lambda t: 400.0, 3.0, 1e-3)
    assert not any(seen)
    assert float(held.v_b1[0]) == pytest.approx(float(st.v_b1[0]), rel=1e-6)


def test_flash_connects_during_pulse():
    st = ckt.design1_steady_state(NET, [400.0])
    dt = TAU_SC / 20
    _, seen = run(NET, st, lambda t: 400.0 + (5000.0 if t < 0.05 else 0.0), 0.05, dt)
    assert any(seen)


def test_slow_ramp_no_transitions():
    assert ambient_immunity_trial(AmbientProfile.ramp(0.0, 1600.0, 60.0, start=0.5), 61.0, NET) == 0


@pytest.mark.parametrize("lux", [0.0, 400.0, 1600.0])
def test_constant_profile_no_false_wake(lux):
    assert ambient_immunity_trial(AmbientProfile.constant(lux), 5.0, NET) == 0


def test_dt_halving_changes_trajectory_little():
    def flash(t):
        return 400.0 + 3000.0 * PulseShape(0.02, 0.002, 0.002).envelope(t - 0.01)

    st0 = ckt.design1_steady_state(NET, 400.0)
    dt = TAU_SC / 10
    rows1, _ = ckt.simulate_design1(NET, flash, 0.06, dt, st0)
    rows2, _ = ckt.simulate_design1(NET, flash, 0.06, dt / 2, st0)
    a = np.array(rows1)
    b = np.array(rows2)[::2]
    for col in (1, 2):  # v_sc, v_b1
        scale = np.max(np.abs(a[:, col]))
        assert np.max(np.abs(a[:, col] - b[:, col])) / scale < 5e-3


def test_zero_supply_draws_nothing():
    net = replace(NET, supply_voltage=0.0)
    for lux in (0.0, 800.0, 2000.0):
        assert ckt.standby_current(net, lux) == 0.0
    st = ckt.design1_steady_state(net, [400.0])
    st, _ = run(net, st, lambda t: 9000.0, 0.01, TAU_SC / 20)
    assert float(st.supply_current[0]) == 0.0 and not st.mcu_connected[0]


def test_standby_monotone_in_lux():
    i = ckt.standby_current(NET, np.array([0.0, 400.0, 800.0, 1600.0]))
    assert np.all(np.diff(i) > 0)


def test_integrator_rejects_bad_dt():
    st = ckt.design1_steady_state(NET, [0.0])
    with pytest.raises(ValueError):
        ckt.step_design1(NET, st, 0.0, 0.0)


def test_higher_gate_resistor_never_shrinks_detection():
    ambients = [0.0, 400.0, 1200.0]
    pulse = PulseShape()
    crit = [critical_flash(replace(NET, r_gs_nmos1=r), ambients, pulse, passes=2, points=24)
            for r in (3e6, 10e6, 30e6)]
    for lo, hi in zip(crit, crit[1:]):
        assert np.all(hi <= lo * (1 + 1e-6))


# --- hold latch --------------------------------------------------------------------


def _woken():
    st = ckt.design1_steady_state(NET, [400.0])
    dt = TAU_SC / 20
    for k in range(1, 2000):
        st = ckt.step_design1(NET, st, 5400.0, dt)
        if st.mcu_connected[0]:
            return st, dt
    raise AssertionError("flash did not wake the receiver")


def test_hold_keeps_mcu_connected_after_flash():
    st, dt = _woken()
    st = ckt.mcu_hold_and_release(st, True)
    st, seen = run(NET, st, lambda t: 400.0, 2.0, 1e-3)
    assert all(seen)
    assert not st.hold_warning


def test_release_in_dark_disconnects_quickly():
    st, dt = _woken()
    st = ckt.mcu_hold_and_release(st, True)
    st, _ = run(NET, st, lambda t: 0.0, 3.0, 1e-3)
    st = ckt.mcu_hold_and_release(st, False)
    st, seen = run(NET, st, lambda t: 0.0, TAU_SC, TAU_SC / 20)
    assert not seen[-1]


def test_release_then_new_flash_detects_again():
    st, dt = _woken()
    st = ckt.mcu_hold_and_release(st, True)
    st, _ = run(NET, st, lambda t: 400.0, 5.0, 1e-3)
    st = ckt.mcu_hold_and_release(st, False)
    st, seen = run(NET, st, lambda t: 400.0, 0.01, 1e-3)
    assert not seen[-1]
    _, seen = run(NET, st, lambda t: 5400.0, 0.02, dt)
    assert any(seen)


def test_hold_on_disconnected_warns():
    st = ckt.design1_steady_state(NET, [0.0])
    st = ckt.mcu_hold_and_release(st, True)
    assert st.hold_warning and not st.hold[0]
    with pytest.warns(RuntimeWarning):
        ckt.warn_hold(st)


# --- Design 2 ----------------------------------------------------------------------

NET2 = ckt.Design2Netlist()


def test_design2_dark_strong_flash_wakes():
    st = ckt.design2_steady_state(NET2, [0.0])
    hit = False
    for _ in range(500):
        st = ckt.step_design2(NET2, st, 0.0, 5.0, 10e-6)
        hit |= bool(st.mcu_connected[0])
    assert hit


def test_design2_uncoated_is_stuck_on_at_500():
    bare = replace(NET2, pt=replace(NET2.pt, coating_attenuation=1.0), ldr=replace(NET2.ldr, coating_attenuation=1.0))
    assert ckt.design2_steady_state(bare, [500.0]).mcu_connected[0]
    assert not ckt.design2_steady_state(NET2, [500.0]).mcu_connected[0]


# --- harvesting front-ends ---------------------------------------------------------


def test_pmic_hides_flash():
    fe = ckt.HarvestFrontEnd()
    cell = NET.solar
    s = ckt.step_frontend(fe, cell, 400.0, 1e-3)
    base = s.v_sc
    flashed = ckt.step_frontend(fe, cell, 400.0 + 20000.0, 1e-4, s.state).v_sc
    unloaded = solar_voc(cell, 20400.0) - solar_voc(cell, 400.0)
    assert abs(flashed - base) < 0.05 * unloaded


@settings(max_examples=40, deadline=None)
@given(amb=st.floats(1.0, 2000.0), flash=st.floats(0.0, 1e5))
def test_pmic_flash_invariance_bound(amb, flash):
    fe = ckt.HarvestFrontEnd()
    cell = ckt.harvest_cell()
    s = ckt.step_frontend(fe, cell, amb, 1e-3)
    f = ckt.step_frontend(fe, cell, amb + flash, 1e-4, s.state)
    unloaded = solar_voc(cell, amb + flash) - solar_voc(cell, amb)
    assert abs(f.v_sc - s.v_sc) <= 0.05 * unloaded + 1e-15


def test_schottky_pins_cell_to_storage():
    fe = ckt.HarvestFrontEnd(kind="schottky", storage_voltage=1.5)
    s = ckt.step_frontend(fe, ckt.harvest_cell(), 1000.0, 1e-3)
    assert s.v_sc == pytest.approx(1.5 + fe.v_drop)
    assert s.harvested_power > 0


@pytest.mark.parametrize("kind", ["pmic_mppt", "schottky"])
def test_dark_harvests_nothing(kind):
    s = ckt.step_frontend(ckt.HarvestFrontEnd(kind=kind), ckt.harvest_cell(), 0.0, 1.0)
    assert s.harvested_power == 0.0


def test_frontend_validation():
    with pytest.raises(ValueError):
        ckt.HarvestFrontEnd(kind="buck")
    with pytest.raises(ValueError):
        ckt.HarvestFrontEnd(v_drop=0.6)
    with pytest.raises(ValueError):
        ckt.step_frontend(ckt.HarvestFrontEnd(), ckt.harvest_cell(), 100.0, 0.0)


def test_pmic_resamples_setpoint():
    fe = ckt.HarvestFrontEnd(sample_period=0.5)
    cell = ckt.harvest_cell()
    s = ckt.step_frontend(fe, cell, 100.0, 0.1)
    for _ in range(6):
        s = ckt.step_frontend(fe, cell, 1000.0, 0.1, s.state)
    assert s.state.setpoint == pytest.approx(fe.clamp_fraction * solar_voc(cell, 1000.0))


def test_simulate_records_columns():
    rows, st = ckt.simulate_design1(NET, lambda t: 400.0, 0.01, 1e-3, record_every=2)
    assert len(rows) == 6 and len(rows[0]) == len(ckt.TRAJECTORY_COLUMNS)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ckt.warn_hold(st)


def _day_profile():
    from optiwake.optics import Segment

    h = 3600.0
    segs = [Segment(0.0, "constant", 0.0), Segment(5 * h, "ramp", 0.0, 1600.0), Segment(11 * h, "constant", 1600.0),
            Segment(13 * h, "ramp", 1600.0, 900.0), Segment(13 * h + 180, "ramp", 900.0, 1600.0),
            Segment(13 * h + 360, "constant", 1600.0), Segment(15 * h, "ramp", 1600.0, 0.0),
            Segment(21 * h, "constant", 0.0)]
    return AmbientProfile(segs)


def test_slow_day_profile_respects_slew_bound_and_never_wakes():
    from optiwake.experiments import voc_slew_bound

    prof = _day_profile()
    t = np.linspace(0.0, 86400.0, 864001)
    v = solar_voc(NET.solar, prof(t))
    slew = np.abs(np.diff(v)) / np.diff(t)
    lux_mid = prof(0.5 * (t[1:] + t[:-1]))
    grid = np.array([0.0, 1.0, 2.0, 5.0, 10.0, 50.0, 100.0, 200.0, 400.0, 800.0, 1200.0, 1600.0, 2000.0])
    bound = voc_slew_bound(NET, grid)
    # the bound falls with lux, so the next grid level above each sample is conservative
    allowed = bound[np.minimum(np.searchsorted(grid, lux_mid), len(grid) - 1)]
    assert np.all(slew <= allowed)
    assert ambient_immunity_trial(prof, 86400.0, NET, max_dt=1.0) == 0
