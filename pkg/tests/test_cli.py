import csv

import pytest

from tabsim.cli import ConfigError, build_parser, main, parse_config, parse_config_text
from tabsim.scenarios import SCENARIOS

SMALL = """\
[system]
n_servers = 200
[arrivals]
kind = constant
rate = 0.3
[timers]
mu = 0.1
nu = 0.1
[run]
horizon = 20
replications = 2
seed = 4
"""


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_builtin_scenarios_parse():
    for name in SCENARIOS:
        cfg = parse_config(name)
        assert cfg.name == name
    left = parse_config("fig2-left")
    assert left.mu == 0.1 and left.nu == 0.1 and left.arrivals.rate == 0.3


def test_all_errors_reported():
    text = SMALL.replace("mu = 0.1", "mu = 0\nmuu = 3") + "[service]\nkind = phase_type\nr = 0.5, 0.4\ngamma = 1, 2\n"
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    msgs = "\n".join(exc.value.errors)
    assert "standby rate must be positive" in msgs
    assert "unknown key 'muu'" in msgs
    assert "phase_type" in msgs
    assert all(m.startswith("line ") for m in exc.value.errors)


def test_missing_section():
    with pytest.raises(ConfigError, match="missing section"):
        parse_config_text("[system]\nn_servers = 3\n")


def test_empty_sweep_rejected():
    with pytest.raises(ConfigError, match="at least one value"):
        parse_config_text(SMALL + "[sweep]\nparameter = lambda\nvalues =\n")


def test_echo_round_trip():
    cfg = parse_config("fig2-right")
    again = parse_config_text(cfg.echo(), cfg.name)
    assert again.echo() == cfg.echo()


def test_help_lists_keys():
    text = build_parser().format_help()
    for key in ("n_servers", "p_idle", "warmup_fraction", "gamma", "values", "watts"):
        assert key in text


def test_both_writes_outputs(tmp_path, capsys):
    ini = tmp_path / "s.ini"
    ini.write_text(SMALL)
    assert main(["both", str(ini), "--out", str(tmp_path / "a")]) == 0
    out = tmp_path / "a"
    for f in ("trace_rep0.csv", "trace_rep1.csv", "tasks_rep0.csv", "fluid.csv", "metrics.csv", "config_echo"):
        assert (out / f).exists()
    m = rows(out / "metrics.csv")
    assert [r["source"] for r in m] == ["fluid", "simulation"]
    assert float(m[1]["trajectory_gap"]) > 0
    trace = rows(out / "trace_rep0.csv")
    assert list(trace[0])[:3] == ["t", "q1", "q2"] and len(trace) == 21
    assert rows(out / "fluid.csv")[0]["xi"] == "0"


def test_byte_identical_reruns(tmp_path):
    ini = tmp_path / "s.ini"
    ini.write_text(SMALL)
    main(["simulate", str(ini), "--out", str(tmp_path / "a")])
    main(["simulate", str(ini), "--out", str(tmp_path / "b"), "--jobs", "2"])
    for f in ("trace_rep0.csv", "trace_rep1.csv", "metrics.csv", "tasks_rep1.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_compare_and_sweep(tmp_path):
    ini = tmp_path / "s.ini"
    ini.write_text(SMALL + "[sweep]\nparameter = mu_inverse\nvalues = 1, 10\n")
    assert main(["compare", str(ini), "--out", str(tmp_path / "c"), "--policies", "tabs,jiq,delayedoff"]) == 0
    assert [r["policy"] for r in rows(tmp_path / "c" / "metrics.csv")] == ["tabs", "jiq", "delayedoff"]
    assert main(["sweep", str(ini), "--out", str(tmp_path / "s"), "--replications", "1"]) == 0
    sw = rows(tmp_path / "s" / "metrics.csv")
    assert [r["mu"] for r in sw] == ["1", "0.1"] and all(r["status"] == "ok" for r in sw)


def test_sweep_point_failure_recorded(tmp_path):
    ini = tmp_path / "s.ini"
    ini.write_text(SMALL + "[sweep]\nparameter = n_servers\nvalues = 0.5, 100\n")
    assert main(["sweep", str(ini), "--out", str(tmp_path / "s"), "--replications", "1"]) == 0
    sw = rows(tmp_path / "s" / "metrics.csv")
    assert sw[0]["status"].startswith("error") and sw[1]["status"] == "ok"


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text(SMALL.replace("nu = 0.1", "nu = -1"))
    assert main(["simulate", str(bad)]) == 1
    assert main(["fluid", str(tmp_path / "missing.ini")]) == 1
    ini = tmp_path / "s.ini"
    ini.write_text(SMALL)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["fluid", str(ini), "--out", str(blocker / "sub")]) == 2


def test_stability_command(tmp_path):
    ini = tmp_path / "s.ini"
    ini.write_text(SMALL.replace("mu = 0.1", "mu = 0.5").replace("nu = 0.1", "nu = 0.5"))
    assert main(["stability", str(ini), "--out", str(tmp_path / "st"), "--initials", "3", "--horizon", "200"]) == 0
    assert all(r["converged"] == "1" for r in rows(tmp_path / "st" / "stability.csv"))
