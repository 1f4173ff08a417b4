import math

import pytest

from optiwake import cli, config
from optiwake import experiments as ex
from optiwake.config import ConfigError, parse_config, render

SMALL_SWEEP = """
[sweep]
r1 = [1330000.0]
r2 = [1130000.0]
c1 = [1e-7, 4.7e-7, 1e-6]
"""


def test_empty_config_gives_builtin_defaults():
    p = parse_config("")
    net = p.design1()
    assert (net.r1, net.r2, net.c1) == (1.33e6, 1.13e6, 470e-9)
    assert len(config.defaulted_keys("")) > 50


def test_overrides_are_applied_and_reported():
    text = "[design1]\nc1 = 1e-6\n[design1.pmos1]\nvgs_threshold = -0.6\n"
    p = parse_config(text)
    assert p.design1().c1 == 1e-6
    assert p.design1().pmos1.vgs_threshold == -0.6
    missing = config.defaulted_keys(text)
    assert "design1.c1" not in missing and "design1.r1" in missing


@pytest.mark.parametrize("text,needle", [
    ("[design1]\nc1 = 0.0\n", "c1"),
    ("[design1]\nr3 = 1.0\n", "unknown key 'design1.r3'"),
    ("[bogus]\nx = 1\n", "unknown key 'bogus'"),
    ("[design1]\nr1 = \"big\"\n", "design1.r1"),
    ("[experiment]\ndesign = 3\n", "design"),
    ("[sweep]\nobjective = \"fastest\"\n", "objective"),
    ("[design1\n", "syntax"),
])
def test_invalid_configs_rejected(text, needle):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert needle in str(info.value)


def test_integer_accepted_for_float_key():
    assert parse_config("[design1]\nr1 = 1000000\n").design1().r1 == 1e6


def test_render_round_trip():
    p = parse_config("[netsim]\ncount = 3\n")
    assert parse_config(render(p)) == p
    assert parse_config(render(p)).digest() == p.digest()


def test_calibration_record_round_trip():
    text = config.calibration_to_toml(ex.DEFAULT_CALIBRATION)
    assert config.calibration_from_toml(text) == ex.DEFAULT_CALIBRATION
    with pytest.raises(ConfigError):
        config.calibration_from_toml("[calibration]\nname = 'x'\n")


# --- sweep ------------------------------------------------------------------------


def test_sweep_feasibility_and_linear_c1():
    rows = cli.sweep(parse_config(SMALL_SWEEP), ex.DEFAULT_CALIBRATION)
    by_c = {r[2]: r for r in rows}
    assert by_c[4.7e-7][5] and by_c[1e-6][5]
    assert not by_c[1e-7][5] and by_c[1e-7][9] == 0
    assert by_c[4.7e-7][4] >= 1.436
    assert by_c[1e-6][4] / by_c[1e-7][4] == pytest.approx(10.0, rel=1e-9)
    assert by_c[4.7e-7][6] == pytest.approx(0.275, rel=0.05)


def test_sweep_pareto_members_are_non_dominated():
    text = SMALL_SWEEP.replace("r2 = [1130000.0]", "r2 = [500000.0, 1130000.0]")
    rows = cli.sweep(parse_config(text), ex.DEFAULT_CALIBRATION)
    front = [r for r in rows if r[8]]
    assert front
    feas = [r for r in rows if r[5]]
    for f in front:
        for o in feas:
            assert not (o[6] >= f[6] and o[7] <= f[7] and (o[6] > f[6] or o[7] < f[7]))
    ranks = sorted(r[9] for r in feas)
    assert ranks == list(range(1, len(feas) + 1))


# --- dispatch -------------------------------------------------------------------


def read_summary(path):
    return dict(line.split(": ", 1) for line in (path / "summary.txt").read_text().splitlines())


def test_standby_command_writes_artifacts(tmp_path):
    assert cli.main(["standby", "--out", str(tmp_path), "--seed", "3"]) == 0
    s = read_summary(tmp_path)
    assert s["command"] == "standby" and s["seed"] == "3" and s["calibration"] == "default"
    assert len(s["parameter_hash"]) == 16
    rows = (tmp_path / "standby.csv").read_text().splitlines()
    assert rows[0] == "lux,amps,watts"
    p0 = float(rows[1].split(",")[2])
    p1600 = float(rows[-1].split(",")[2])
    assert p0 == pytest.approx(248e-12, rel=0.30)
    assert p1600 == pytest.approx(627e-9, rel=0.30)


def test_linkbudget_command(tmp_path):
    assert cli.main(["linkbudget", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "linkbudget.csv").read_text().splitlines()
    d, e, lux = map(float, lines[5].split(","))
    assert d == 0.25 and e == pytest.approx(0.1019, abs=1e-4)


def test_sweep_command_with_config(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text(SMALL_SWEEP)
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    header = (tmp_path / "o" / "sweep.csv").read_text().splitlines()[0]
    assert header == cli.SWEEP_HEADER


def test_sweep_with_nothing_feasible_names_nearest(tmp_path, capsys):
    cfg = tmp_path / "s.toml"
    cfg.write_text(SMALL_SWEEP.replace("c1 = [1e-7, 4.7e-7, 1e-6]", "c1 = [1e-8, 1e-7]"))
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "nearest" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[design1]\nr3 = 1.0\n")
    assert cli.main(["standby", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["standby", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2


def test_unwritable_output_exits_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["standby", "--out", str(blocker / "sub")]) == 2


def test_missing_calibration_exits_3(tmp_path, capsys):
    assert cli.main(["standby", "--calibration", str(tmp_path / "none.toml"), "--out", str(tmp_path)]) == 3
    assert "optiwake calibrate" in capsys.readouterr().err


def test_saved_calibration_is_loadable(tmp_path):
    rec = tmp_path / "cal.toml"
    rec.write_text(config.calibration_to_toml(ex.DEFAULT_CALIBRATION))
    assert cli.main(["standby", "--calibration", str(rec), "--out", str(tmp_path / "o")]) == 0


def test_calibration_failure_exits_3(tmp_path, monkeypatch):
    def boom(**kw):
        raise ex.CalibrationError("calibration failed: anchor x off", ex.DEFAULT_CALIBRATION)

    monkeypatch.setattr(ex, "calibrate", boom)
    assert cli.main(["calibrate", "--out", str(tmp_path)]) == 3
    assert (tmp_path / "calibration_failed.toml").exists()


def test_runtime_failure_exits_4(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("diverged")

    monkeypatch.setitem(cli.HANDLERS, "standby", boom)
    assert cli.main(["standby", "--out", str(tmp_path)]) == 4


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        cli.main(["fly"])
