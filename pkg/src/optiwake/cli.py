"""Command-line front end.

    optiwake COMMAND [--config PATH] [--out DIR] [--seed N] [--calibration ID]

COMMAND is one of linkbudget, errgrid, immunity, race, standby, calibrate,
netsim or sweep. Results are CSV files plus ``summary.txt`` in the output
directory. ``--calibration`` takes ``default`` (the shipped fit) or the path
of a record written by ``calibrate``.

Exit codes: 0 success, 2 configuration error, 3 calibration failure,
4 runtime error.
"""

from __future__ import annotations

import argparse
import itertools
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import circuit as ckt
from . import experiments as ex
from . import netsim
from .config import ConfigError, Params, calibration_from_toml, calibration_to_toml, defaulted_keys, parse_config
from .optics import AmbientProfile, LinkGeometry, illuminance_from_irradiance, irradiance

COMMANDS = ("linkbudget", "errgrid", "immunity", "race", "standby", "calibrate", "netsim", "sweep")

EXIT_OK, EXIT_CONFIG, EXIT_CALIBRATION, EXIT_RUNTIME = 0, 2, 3, 4


class CalibrationMissing(RuntimeError):
    pass


def load_calibration(ident: str | None) -> ex.Calibration:
    if ident in (None, "default"):
        return ex.DEFAULT_CALIBRATION
    path = Path(ident)
    if not path.is_file():
        raise CalibrationMissing(
            f"calibration '{ident}' not found; pass --calibration default or run "
            f"'optiwake calibrate --out DIR' and point --calibration at DIR/calibration.toml"
        )
    return calibration_from_toml(path.read_text())


def _csv(rows, header):
    lines = [header] + [",".join(_fmt(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


# --- sweep --------------------------------------------------------------------


def sweep(params: Params, calibration: ex.Calibration):
    """Evaluate the R1 x R2 x C1 x PMOS1-threshold grid.

    Returns rows (r1, r2, c1, pmos1_vth, t_amb, feasible, range_m, standby_a,
    pareto, rank) ordered by rank (feasible candidates first).
    """
    s = params.section("sweep")
    vths = s["pmos1_vth"] or [calibration.pmos1_vth]
    grid = list(itertools.product(s["r1"], s["r2"], s["c1"], vths))
    if not grid:
        raise ConfigError("sweep grid is empty")
    base = params.design1()
    src = params.source()
    f_ref = illuminance_from_irradiance(irradiance(src, LinkGeometry(1.0)), calibration.efficacy)
    rows = []
    for r1, r2, c1, vth in grid:
        try:
            net = replace(calibration, pmos1_vth=vth).netlist(replace(base, r1=r1, r2=r2, c1=c1))
        except ValueError as exc:
            raise ConfigError(f"sweep candidate ({r1}, {r2}, {c1}, {vth}): {exc}") from exc
        # the band's shortest adaptation time is at the brightest end (lowest R_sc)
        t_amb = min(ckt.design1_adaptation_time(net, lux) for lux in (0.0, 1600.0))
        feasible = t_amb >= s["min_adaptation_time"]
        crit = float(ex.critical_flash(net, [s["reference_lux"]], src.pulse, lo=1.0, hi=1e6)[0])
        rng = math.sqrt(f_ref / crit) if 0 < crit < math.inf else (0.0 if crit == math.inf else math.inf)
        standby = float(ckt.standby_current(net, s["standby_lux"]))
        rows.append([r1, r2, c1, vth, t_amb, feasible, rng, standby])
    feas = [r for r in rows if r[5] and math.isfinite(r[6])]
    for r in rows:
        r.append(r in feas and not any(
            (o[6] >= r[6] and o[7] <= r[7]) and (o[6] > r[6] or o[7] < r[7]) for o in feas
        ))
    key = {
        "max_range": lambda r: (-r[6], r[7]),
        "min_standby": lambda r: (r[7], -r[6]),
        "pareto": lambda r: (not r[8], -r[6], r[7]),
    }[s["objective"]]
    ordered = sorted(feas, key=key) + sorted((r for r in rows if r not in feas), key=lambda r: -r[4])
    for i, r in enumerate(ordered):
        r.append(i + 1 if r in feas else 0)
    return ordered


SWEEP_HEADER = "r1,r2,c1,pmos1_vth,t_amb,feasible,range_m,standby_a,pareto,rank"


# --- commands -----------------------------------------------------------------


def _linkbudget(p, cal, seed, out):
    src = p.source()
    rows = []
    for d in p.section("experiment")["linkbudget_distances"]:
        e = irradiance(src, LinkGeometry(d))
        rows.append((d, e, illuminance_from_irradiance(e, cal.efficacy)))
    (out / "linkbudget.csv").write_text(_csv(rows, "distance_m,irradiance_w_m2,flash_lux"))
    return [f"distances: {len(rows)}"]


def _errgrid(p, cal, seed, out):
    e = p.section("experiment")
    rep = ex.error_rate_grid(e["lux"], e["distances"], p.trial(cal, seed))
    (out / "errgrid.csv").write_text(rep.to_csv())
    return [f"design: {e['design']}", f"cells: {len(rep.rows)}",
            f"total errors: {sum(r[4] for r in rep.rows)}"]


def _immunity(p, cal, seed, out):
    im = p.section("immunity")
    net = cal.netlist(p.design1())
    top, ramp_t, step_t, tail = im["ramp_lux"], im["ramp_duration"], im["step_duration"], im["tail"]
    ramp = AmbientProfile.ramp(0.0, top, ramp_t, start=1.0)
    step = AmbientProfile.ramp(0.0, top, step_t, start=1.0)
    rows = [
        ("ramp", top, ramp_t, ex.ambient_immunity_trial(ramp, 1.0 + ramp_t + tail, net)),
        ("step", top, step_t, ex.ambient_immunity_trial(step, 1.0 + step_t + tail, net)),
    ]
    (out / "immunity.csv").write_text(_csv(rows, "scenario,lux,transition_s,false_wakeups"))
    return [f"{r[0]}: {r[3]} false wake-ups" for r in rows]


def _race(p, cal, seed, out):
    e = p.section("experiment")
    res = ex.race_condition_demo(e["race_lux"], e["race_repeats"], seed, net=p.design2(),
                                 noise=p.noise(), source=p.source())
    rows = [(lux, i, det) for lux, r in res.items() for i, det in enumerate(r["detected"])]
    (out / "race.csv").write_text(_csv(rows, "lux,repeat,detected"))
    for lux, r in res.items():
        (out / f"race_trace_{lux:g}lx.csv").write_text(
            _csv(r["trace"], "t,i_pt,r_ldr,v_gate,mcu_connected"))
    return [f"{lux:g} lx: {sum(r['detected'])}/{len(r['detected'])} detected" for lux, r in res.items()]


def _standby(p, cal, seed, out):
    rows = ex.standby_sweep(p.section("experiment")["standby_lux"], cal.netlist(p.design1()))
    (out / "standby.csv").write_text(_csv(rows, "lux,amps,watts"))
    return [f"{l:g} lx: {a:.4g} A, {w:.4g} W" for l, a, w in rows]


def _calibrate(p, cal, seed, out):
    try:
        fit = ex.calibrate(start=cal, name="fit")
    except ex.CalibrationError as exc:
        if len(exc.args) > 1:
            (out / "calibration_failed.toml").write_text(calibration_to_toml(exc.args[1]))
        raise
    (out / "calibration.toml").write_text(calibration_to_toml(fit))
    (out / "calibration_residuals.csv").write_text(_csv(fit.residuals, "anchor,model,target,scaled_residual"))
    return [f"{a}: model {m:.4g} target {t:.4g} ({r:+.3f} tol)" for a, m, t, r in fit.residuals]


def _netsim(p, cal, seed, out):
    n = p.section("netsim")
    nodes = p.nodes(cal)
    cache = netsim.DetectionCache() if n["use_cache"] else None
    flashes = [(float(t), int(i)) for t, i in n["flashes"]]
    trace = netsim.run_scenario(nodes, p.ambient(), flashes, n["horizon"], seed=seed, cache=cache)
    (out / "events.csv").write_text(trace.events_csv())
    (out / "ledger.csv").write_text(trace.ledger_csv())
    (out / "report.csv").write_text(netsim.report_csv(netsim.lifetime_report(trace)))
    return [f"node {nd.id}: wakes {nd.wakes}" for nd in nodes]


def _sweep(p, cal, seed, out):
    rows = sweep(p, cal)
    (out / "sweep.csv").write_text(_csv(rows, SWEEP_HEADER))
    feas = [r for r in rows if r[5]]
    if not feas:
        near = max(rows, key=lambda r: r[4])
        raise ConfigError(
            f"no feasible candidate; nearest is r1={near[0]:g} r2={near[1]:g} c1={near[2]:g} "
            f"with t_amb={near[4]:.3f} s"
        )
    return [f"candidates: {len(rows)}", f"feasible: {len(feas)}"]


HANDLERS = {
    "linkbudget": _linkbudget, "errgrid": _errgrid, "immunity": _immunity, "race": _race,
    "standby": _standby, "calibrate": _calibrate, "netsim": _netsim, "sweep": _sweep,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="optiwake", description="Optical wake-up receiver simulator")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="TOML scenario file (defaults used when omitted)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--calibration", default="default", help="'default' or a calibration.toml path")
    return ap


def dispatch(command, config_text="", out=".", seed=0, calibration="default"):
    """Run one command; returns the exit status."""
    out = Path(out)
    try:
        params = parse_config(config_text)
        cal = load_calibration(calibration)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
        if not os.access(out, os.W_OK):
            raise ConfigError(f"output directory {out} is not writable")
        lines = HANDLERS[command](params, cal, seed, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CalibrationMissing, ex.CalibrationError) as exc:
        print(f"calibration error: {exc.args[0]}", file=sys.stderr)
        return EXIT_CALIBRATION
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    summary = [
        f"command: {command}",
        f"version: {__version__}",
        f"seed: {seed}",
        f"calibration: {cal.name}",
        f"parameter_hash: {params.digest()}",
        f"defaulted_keys: {len(defaulted_keys(config_text))}",
    ] + lines
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    return dispatch(args.command, text, args.out, args.seed, args.calibration)


if __name__ == "__main__":
    sys.exit(main())
