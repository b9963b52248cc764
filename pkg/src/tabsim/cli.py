"""Command-line driver: scenario files in, CSV traces and metrics out.

    python -m tabsim simulate fig2-left --out runs/left
    python -m tabsim both scenario.ini --replications 5 --jobs 2
    python -m tabsim sweep fig3-nu10

A scenario is an INI file (or the name of a built-in scenario, see
``tabsim.scenarios``). Exit status: 0 success, 1 invalid scenario or
arguments, 2 failure while running.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import metrics as M
from .core import (
    ArrivalProfile,
    Constant,
    DivergenceError,
    EnergyParams,
    InvalidPhaseType,
    PhaseTypeService,
    Sinusoid,
    Table,
    all_idle_off,
    all_idle_on,
)
from .fluid import DEFAULT_DT, FluidParams, FluidTrajectory, integrate_fluid, stability_sweep
from .scenarios import SCENARIOS
from .simulate import Policy, SimConfig, SimulationError, TaskTable, TraceSample, run_simulation

FMT = "%.12g"
SWEEPABLE = ("mu_inverse", "nu_inverse", "n_servers", "lambda")
METRIC_COLUMNS = ("scenario", "policy", "N", "lambda", "mu", "nu", "mean_wait", "mean_power",
                  "normalized_power", "wastage", "loss_fraction", "msg_per_task",
                  "source", "replications", "trajectory_gap", "status")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


# (section, key) -> (unit / meaning, required)
KEYS: dict[str, dict[str, tuple[str, bool]]] = {
    "system": {
        "n_servers": ("number of servers N (integer >= 1)", True),
        "buffer": ("per-server buffer B, tasks including the one in service (default 10)", False),
    },
    "arrivals": {
        "kind": ("constant | sinusoid | table", True),
        "rate": ("constant: arrivals per unit time per server", False),
        "base": ("sinusoid: mean rate per server", False),
        "amplitude": ("sinusoid: rate swing per server", False),
        "period": ("sinusoid: time scale T in base + amplitude*sin(t/T)", False),
        "times": ("table: comma-separated breakpoints, starting at 0 (time)", False),
        "rates": ("table: comma-separated rates per server on each piece", False),
    },
    "timers": {
        "mu": ("standby-expiry rate, 1/time (mean standby 1/mu)", True),
        "nu": ("setup-completion rate, 1/time (mean setup 1/nu)", True),
    },
    "service": {
        "kind": ("exponential | phase_type (default exponential, unit mean)", False),
        "r": ("phase_type: initial phase probabilities, comma-separated", False),
        "R": ("phase_type: phase transition matrix, rows split by ';'", False),
        "gamma": ("phase_type: phase rates, 1/time, comma-separated", False),
        "normalize": ("phase_type: rescale gamma to unit mean service (default true)", False),
    },
    "policy": {
        "name": ("tabs | jiq | delayedoff (default tabs)", False),
        "compare": ("comma-separated policies for the compare command", False),
    },
    "energy": {
        "p_full": ("watts drawn by a busy or setting-up server (default 200)", False),
        "p_idle": ("watts drawn by an idle-on server (default 140)", False),
    },
    "run": {
        "horizon": ("simulated time, in mean service times (default 250)", False),
        "sample_interval": ("time between trace samples (default 1)", False),
        "seed": ("base seed; replication k uses seed + k (default 0)", False),
        "replications": ("independent simulation runs (default 20)", False),
        "warmup_fraction": ("fraction of the horizon discarded by metrics (default 0.4)", False),
        "dt": ("fluid integration step, time (default 0.001)", False),
        "initial": ("idle_on | idle_off starting state (default idle_on)", False),
        "record_tasks": ("keep per-task records and write tasks_rep<k>.csv (default true)", False),
    },
    "sweep": {
        "parameter": ("one of " + ", ".join(SWEEPABLE), True),
        "values": ("comma-separated values for the parameter", True),
    },
}
REQUIRED_SECTIONS = ("system", "arrivals", "timers")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    n_servers: int
    arrivals: ArrivalProfile
    mu: float
    nu: float
    buffer: int = 10
    service: PhaseTypeService | None = None
    policy: Policy = Policy.TABS
    compare: tuple[Policy, ...] = ()
    energy: EnergyParams = field(default_factory=EnergyParams)
    horizon: float = 250.0
    sample_interval: float = 1.0
    seed: int = 0
    replications: int = 20
    warmup_fraction: float = 0.4
    dt: float = DEFAULT_DT
    initial: str = "idle_on"
    record_tasks: bool = True
    sweep_parameter: str | None = None
    sweep_values: tuple[float, ...] = ()

    def sim_config(self, rep: int, policy: Policy | None = None) -> SimConfig:
        policy = Policy(policy or self.policy)
        return SimConfig(
            n_servers=self.n_servers, arrivals=self.arrivals, mu=self.mu, nu=self.nu, policy=policy,
            buffer=self.buffer, service=self.service, horizon=self.horizon,
            sample_interval=self.sample_interval, seed=self.seed + rep, initial=self.initial,
            record_tasks=self.record_tasks,
        )

    def fluid_params(self, policy: Policy | None = None) -> FluidParams:
        jiq = Policy(policy or self.policy) == Policy.JIQ
        return FluidParams(self.arrivals, 0.0 if jiq else self.mu, self.nu, self.buffer, self.service)

    def with_value(self, parameter: str, value: float) -> ScenarioConfig:
        if parameter == "mu_inverse":
            return dataclasses.replace(self, mu=1.0 / value)
        if parameter == "nu_inverse":
            return dataclasses.replace(self, nu=1.0 / value)
        if parameter == "n_servers":
            return dataclasses.replace(self, n_servers=int(value))
        if parameter == "lambda":
            return dataclasses.replace(self, arrivals=Constant(value))
        raise ValueError(f"cannot sweep {parameter!r}")

    @property
    def lam_mean(self) -> float:
        return self.arrivals.mean_rate

    def echo(self) -> str:
        """Fully resolved scenario in the input format."""
        out = io.StringIO()
        a = self.arrivals
        lines = [f"# scenario {self.name}", "[system]", f"n_servers = {self.n_servers}", f"buffer = {self.buffer}", "",
                 "[arrivals]"]
        if isinstance(a, Constant):
            lines += ["kind = constant", f"rate = {a.rate!r}"]
        elif isinstance(a, Sinusoid):
            lines += ["kind = sinusoid", f"base = {a.base!r}", f"amplitude = {a.amplitude!r}", f"period = {a.period!r}"]
        else:
            lines += ["kind = table", "times = " + ", ".join(map(repr, map(float, a.times))),
                      "rates = " + ", ".join(map(repr, map(float, a.rates)))]
        lines += ["", "[timers]", f"mu = {self.mu!r}", f"nu = {self.nu!r}", "", "[service]"]
        if self.service is None:
            lines.append("kind = exponential")
        else:
            d = self.service
            lines += ["kind = phase_type", "r = " + _fmt_list(d.r),
                      "R = " + "; ".join(_fmt_list(row) for row in d.R),
                      "gamma = " + _fmt_list(d.gamma), "normalize = false"]
        lines += ["", "[policy]", f"name = {self.policy.value}"]
        if self.compare:
            lines.append("compare = " + ", ".join(p.value for p in self.compare))
        lines += ["", "[energy]", f"p_full = {self.energy.p_full!r}", f"p_idle = {self.energy.p_idle!r}", "",
                  "[run]"]
        for k in ("horizon", "sample_interval", "seed", "replications", "warmup_fraction", "dt", "initial"):
            lines.append(f"{k} = {getattr(self, k)!r}".replace("'", ""))
        lines.append(f"record_tasks = {str(self.record_tasks).lower()}")
        if self.sweep_parameter:
            lines += ["", "[sweep]", f"parameter = {self.sweep_parameter}",
                      "values = " + _fmt_list(self.sweep_values)]
        out.write("\n".join(lines) + "\n")
        return out.getvalue()


def _fmt_list(xs) -> str:
    return ", ".join(FMT % float(x) for x in xs)


# -- parsing ---------------------------------------------------------------

def _line_index(text: str) -> dict[tuple[str, str], int]:
    where, section = {}, None
    for n, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where[(section, "")] = n
            continue
        m = re.match(r"\s*([^#;=\s][^=:]*?)\s*[=:]", line)
        if m and section:
            where[(section, m.group(1))] = n
    return where


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.replace(";", ",").split(",") if x.strip()]


def parse_config_text(text: str, name: str = "scenario") -> ScenarioConfig:
    """Parse and validate; raises ``ConfigError`` listing every problem found."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    where = _line_index(text)
    errors: list[str] = []

    def at(section, key=""):
        n = where.get((section, key)) or where.get((section, ""))
        return f"line {n}: " if n else ""

    for sec in cp.sections():
        if sec not in KEYS:
            errors.append(f"{at(sec)}unknown section [{sec}]")
            continue
        for key in cp[sec]:
            if key not in KEYS[sec]:
                errors.append(f"{at(sec, key)}unknown key '{key}' in [{sec}]")
    for sec in REQUIRED_SECTIONS:
        if not cp.has_section(sec):
            errors.append(f"missing section [{sec}]")
    for sec, keys in KEYS.items():
        if cp.has_section(sec):
            for key, (_, required) in keys.items():
                if required and key not in cp[sec]:
                    errors.append(f"{at(sec)}missing key '{key}' in [{sec}]")

    def get(sec, key, conv: Callable[[str], Any], default=None):
        if not cp.has_section(sec) or key not in cp[sec]:
            return default
        raw = cp[sec][key]
        try:
            return conv(raw)
        except (TypeError, ValueError):
            errors.append(f"{at(sec, key)}[{sec}] {key} = {raw!r} is not a valid value")
            return default

    def boolean(s: str) -> bool:
        v = s.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(s)

    def check(ok: bool, sec: str, key: str, msg: str):
        if not ok:
            errors.append(f"{at(sec, key)}{msg}")

    n = get("system", "n_servers", int, 1)
    B = get("system", "buffer", int, 10)
    mu = get("timers", "mu", float, 1.0)
    nu = get("timers", "nu", float, 1.0)
    check(mu > 0, "timers", "mu", "standby rate must be positive")
    check(nu > 0, "timers", "nu", "setup rate must be positive")
    check(n >= 1, "system", "n_servers", "n_servers must be at least 1")
    check(B >= 1, "system", "buffer", "buffer must be at least 1")

    arrivals: ArrivalProfile = Constant(0.5)
    kind = get("arrivals", "kind", str.strip, "constant")
    try:
        if kind == "constant":
            rate = get("arrivals", "rate", float)
            check(rate is not None, "arrivals", "kind", "constant arrivals need 'rate'")
            if rate is not None:
                arrivals = Constant(rate)
        elif kind == "sinusoid":
            vals = [get("arrivals", k, float) for k in ("base", "amplitude", "period")]
            check(None not in vals, "arrivals", "kind", "sinusoid arrivals need base, amplitude and period")
            if None not in vals:
                arrivals = Sinusoid(*vals)
        elif kind == "table":
            times, rates = get("arrivals", "times", _floats), get("arrivals", "rates", _floats)
            check(times is not None and rates is not None, "arrivals", "kind", "table arrivals need times and rates")
            if times is not None and rates is not None:
                arrivals = Table(times, rates)
        else:
            errors.append(f"{at('arrivals', 'kind')}unknown arrival kind {kind!r}")
    except ValueError as exc:
        errors.append(f"{at('arrivals', 'kind')}arrivals: {exc}")

    service = None
    skind = get("service", "kind", str.strip, "exponential")
    if skind == "phase_type":
        r = get("service", "r", _floats)
        gamma = get("service", "gamma", _floats)
        R = get("service", "R", lambda s: [_floats(row) for row in s.split(";")])
        norm = get("service", "normalize", boolean, True)
        if r is None or gamma is None:
            errors.append(f"{at('service', 'kind')}phase_type service needs r and gamma")
        else:
            if R is None:
                R = [[0.0] * len(r) for _ in r]
            try:
                service = PhaseTypeService.build(r, np.array(R, dtype=float), gamma, normalize=norm)
            except (InvalidPhaseType, ValueError) as exc:
                errors.append(f"{at('service', 'r')}phase_type service: {exc}")
    elif skind != "exponential":
        errors.append(f"{at('service', 'kind')}unknown service kind {skind!r}")

    policy = get("policy", "name", lambda s: Policy(s.strip()), Policy.TABS)
    compare = get("policy", "compare", lambda s: tuple(Policy(p.strip()) for p in s.split(",") if p.strip()), ())
    if policy == Policy.DELAYEDOFF or Policy.DELAYEDOFF in compare:
        check(service is None, "service", "kind", "delayedoff baseline is defined for exponential service only")

    p_full = get("energy", "p_full", float, 200.0)
    p_idle = get("energy", "p_idle", float, 140.0)
    energy = EnergyParams()
    try:
        energy = EnergyParams(p_full, p_idle)
    except ValueError as exc:
        errors.append(f"{at('energy')}energy: {exc}")

    run = dict(
        horizon=get("run", "horizon", float, 250.0),
        sample_interval=get("run", "sample_interval", float, 1.0),
        seed=get("run", "seed", int, 0),
        replications=get("run", "replications", int, 20),
        warmup_fraction=get("run", "warmup_fraction", float, 0.4),
        dt=get("run", "dt", float, DEFAULT_DT),
        initial=get("run", "initial", str.strip, "idle_on"),
        record_tasks=get("run", "record_tasks", boolean, True),
    )
    check(run["horizon"] > 0, "run", "horizon", "horizon must be positive")
    check(run["sample_interval"] > 0, "run", "sample_interval", "sample_interval must be positive")
    check(run["replications"] >= 1, "run", "replications", "replications must be at least 1")
    check(0 <= run["warmup_fraction"] < 1, "run", "warmup_fraction", "warmup_fraction must lie in [0, 1)")
    check(run["dt"] > 0, "run", "dt", "dt must be positive")
    check(0 <= run["seed"] < 2 ** 63, "run", "seed", "seed must be a nonnegative 63-bit integer")
    check(run["initial"] in ("idle_on", "idle_off"), "run", "initial", "initial must be idle_on or idle_off")
    check(not (policy == Policy.JIQ and run["initial"] == "idle_off"), "run", "initial",
          "jiq servers never switch on from idle-off")

    sweep_parameter, sweep_values = None, ()
    if cp.has_section("sweep"):
        sweep_parameter = get("sweep", "parameter", str.strip)
        sweep_values = tuple(get("sweep", "values", _floats, []) or [])
        check(sweep_parameter in SWEEPABLE, "sweep", "parameter",
              f"sweep parameter must be one of {', '.join(SWEEPABLE)}")
        check(len(sweep_values) > 0, "sweep", "values", "sweep needs at least one value")
        if sweep_parameter in ("mu_inverse", "nu_inverse", "n_servers"):
            check(all(v > 0 for v in sweep_values), "sweep", "values", "sweep values must be positive")
        if sweep_parameter == "lambda":
            check(all(v > 0 for v in sweep_values), "sweep", "values", "arrival rates must be positive")

    if errors:
        raise ConfigError(errors)
    return ScenarioConfig(name=name, n_servers=n, arrivals=arrivals, mu=mu, nu=nu, buffer=B, service=service,
                          policy=policy, compare=compare, energy=energy, sweep_parameter=sweep_parameter,
                          sweep_values=sweep_values, **run)


def parse_config(path: str | Path) -> ScenarioConfig:
    """Read a scenario file, or a built-in scenario by name."""
    p = Path(path)
    if not p.exists() and str(path) in SCENARIOS:
        return parse_config_text(SCENARIOS[str(path)], str(path))
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {p}: {exc.strerror}"]) from None
    return parse_config_text(text, p.stem)


# -- CSV writers -------------------------------------------------------------

def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return FMT % x


def trace_header(B: int, K: int | None, with_xi: bool = False) -> list[str]:
    cols = ["t"] + [f"q{i}" for i in range(1, B + 1)] + ["delta0", "delta1", "u", "arrivals", "departures",
                                                           "drops", "msgs_green", "msgs_red", "setups"]
    if K is not None:
        cols += [f"q{i}_{j}" for i in range(1, B + 1) for j in range(1, K + 1)]
    if with_xi:
        cols.append("xi")
    return cols


def _open_csv(path: Path):
    return path.open("w", newline="", encoding="utf-8")


def write_trace(path: Path, samples: Sequence[TraceSample]):
    s0 = samples[0].fluid
    K = s0.K if s0.is_phase else None
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(s0.B, K))
        for s in samples:
            f = s.fluid
            row = [s.t, *f.levels, f.delta0, f.delta1, f.u, s.arrivals, s.departures, s.drops, s.green, s.red,
                   s.setups]
            if K is not None:
                row += list(np.asarray(f.q).ravel())
            w.writerow([_num(x) for x in row])


def write_tasks(path: Path, tasks: TaskTable):
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arrival", "start", "departure", "server", "dropped"])
        for a, s, d, srv, drop in zip(tasks.arrival, tasks.start, tasks.departure, tasks.server, tasks.dropped):
            w.writerow([_num(float(a)), _num(float(s)), _num(float(d)), "" if srv < 0 else int(srv), int(drop)])


def write_fluid(path: Path, traj: FluidTrajectory):
    """Same columns as a simulator trace plus ``xi``; counter columns are left blank."""
    K = traj.K
    levels = traj.levels
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(traj.B, K, with_xi=True))
        for k in range(len(traj)):
            row = [_num(traj.t[k]), *(_num(v) for v in levels[k]), _num(traj.delta0[k]), _num(traj.delta1[k]),
                   _num(traj.u[k])] + [""] * 6
            if K is not None:
                row += [_num(v) for v in traj.x[k, :traj.B * K]]
            row.append(_num(traj.xi[k]))
            w.writerow(row)


def metrics_row(cfg: ScenarioConfig, policy: Policy, rep: M.MetricsReport | None, source: str, n_reps: int,
                gap: float | None = None, status: str = "ok") -> dict[str, str]:
    row = {"scenario": cfg.name, "policy": policy.value, "N": str(cfg.n_servers), "lambda": _num(cfg.lam_mean),
           "mu": _num(cfg.mu), "nu": _num(cfg.nu), "source": source, "replications": str(n_reps),
           "trajectory_gap": _num(gap), "status": status}
    for f in M.FIELDS:
        row[f] = _num(getattr(rep, f)) if rep is not None else ""
    return row


def write_metrics(path: Path, rows: list[dict[str, str]]):
    with _open_csv(path) as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# -- running -----------------------------------------------------------------

@dataclass
class RepOutcome:
    samples: list[TraceSample]
    tasks: TaskTable | None
    report: M.MetricsReport


def _one_replication(args) -> RepOutcome:
    cfg, rep, policy = args
    res = run_simulation(cfg.sim_config(rep, policy))
    report = M.simulation_report(res.samples, res.tasks if cfg.record_tasks else None, cfg.n_servers,
                                 cfg.energy, cfg.warmup_fraction)
    return RepOutcome(res.samples, res.tasks if cfg.record_tasks else None, report)


def _map(fn, items: list, jobs: int) -> list:
    """Ordered map; results come back in input order whatever the completion order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def simulate_replications(cfg: ScenarioConfig, policy: Policy | None = None, jobs: int = 1) -> list[RepOutcome]:
    policy = Policy(policy or cfg.policy)
    return _map(_one_replication, [(cfg, k, policy) for k in range(cfg.replications)], jobs)


def _fluid_initial(cfg: ScenarioConfig):
    K = cfg.service.K if cfg.service is not None else None
    return all_idle_on(cfg.buffer, K) if cfg.initial == "idle_on" else all_idle_off(cfg.buffer, K)


def run_fluid(cfg: ScenarioConfig, policy: Policy | None = None) -> FluidTrajectory:
    return integrate_fluid(_fluid_initial(cfg), cfg.fluid_params(policy), cfg.horizon, cfg.dt,
                           sample_interval=cfg.sample_interval)


def run_scenario(cfg: ScenarioConfig, mode: str, out: Path, jobs: int = 1) -> list[M.MetricsReport]:
    """Write traces, the fluid path and metrics for one scenario; returns the reports written."""
    if mode not in ("simulate", "fluid", "both"):
        raise ValueError(f"unknown mode {mode!r}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_echo").write_text(cfg.echo(), encoding="utf-8")
    rows, reports = [], []
    traj = None
    if mode in ("fluid", "both"):
        traj = run_fluid(cfg)
        write_fluid(out / "fluid.csv", traj)
        fr = M.fluid_report(traj, cfg.arrivals, cfg.energy, cfg.warmup_fraction)
        rows.append(metrics_row(cfg, cfg.policy, fr, "fluid", 0))
        reports.append(fr)
    if mode in ("simulate", "both"):
        outcomes = simulate_replications(cfg, jobs=jobs)
        gaps = []
        for k, o in enumerate(outcomes):
            write_trace(out / f"trace_rep{k}.csv", o.samples)
            if o.tasks is not None:
                write_tasks(out / f"tasks_rep{k}.csv", o.tasks)
            if traj is not None:
                gaps.append(M.trajectory_gap(o.samples, traj))
        agg = M.aggregate([o.report for o in outcomes])
        gap = float(np.median(gaps)) if gaps else None
        rows.append(metrics_row(cfg, cfg.policy, agg, "simulation", len(outcomes), gap))
        reports.append(agg)
    write_metrics(out / "metrics.csv", rows)
    return reports


def run_sweep(cfg: ScenarioConfig, out: Path, jobs: int = 1, policies: Sequence[Policy] | None = None) -> list[dict]:
    """One metrics row per (value, policy); a failing point is recorded and the sweep goes on."""
    if not cfg.sweep_parameter or not cfg.sweep_values:
        raise ConfigError(["sweep needs a [sweep] section with a parameter and at least one value"])
    policies = list(policies or cfg.compare or (cfg.policy,))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_echo").write_text(cfg.echo(), encoding="utf-8")
    rows = []
    for v in cfg.sweep_values:
        for pol in policies:
            point = cfg
            try:
                point = cfg.with_value(cfg.sweep_parameter, v)
                point.sim_config(0, pol)  # validates this point
                outcomes = simulate_replications(point, pol, jobs)
                rows.append(metrics_row(point, pol, M.aggregate([o.report for o in outcomes]), "simulation",
                                        len(outcomes)))
            except (ValueError, RuntimeError) as exc:
                msg = str(exc).replace("\n", " ")
                rows.append(metrics_row(point, pol, None, "simulation", 0, status=f"error: {msg}"))
    write_metrics(out / "metrics.csv", rows)
    return rows


def run_compare(cfg: ScenarioConfig, out: Path, jobs: int = 1, policies: Sequence[Policy] | None = None) -> list[dict]:
    """Same seeds for every policy (common random numbers), one row per policy."""
    policies = list(policies or cfg.compare or (Policy.TABS, Policy.JIQ))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_echo").write_text(cfg.echo(), encoding="utf-8")
    rows = []
    for pol in policies:
        cfg.sim_config(0, pol)
        outcomes = simulate_replications(cfg, pol, jobs)
        rows.append(metrics_row(cfg, pol, M.aggregate([o.report for o in outcomes]), "simulation", len(outcomes)))
    write_metrics(out / "metrics.csv", rows)
    return rows


def run_stability(cfg: ScenarioConfig, out: Path, n_initials: int = 100, horizon: float = 2000.0,
                  tol: float = 1e-3, dt: float = 1e-2):
    if not isinstance(cfg.arrivals, Constant) or cfg.arrivals.rate >= 1:
        raise ConfigError(["stability needs constant arrivals with rate below 1"])
    rep = stability_sweep(cfg.fluid_params(), n_initials=n_initials, horizon=horizon, tol=tol, seed=cfg.seed, dt=dt)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_echo").write_text(cfg.echo(), encoding="utf-8")
    with _open_csv(out / "stability.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["initial", "distance", "converged"])
        for k, d in enumerate(rep.distances):
            w.writerow([k, _num(float(d)), int(d <= tol)])
    return rep


# -- argument parsing ----------------------------------------------------------

def _epilog() -> str:
    lines = ["scenario file keys (INI sections):"]
    for sec, keys in KEYS.items():
        lines.append(f"  [{sec}]")
        for key, (desc, required) in keys.items():
            lines.append(f"    {key:<16} {desc}{'  (required)' if required else ''}")
    lines.append("")
    lines.append("built-in scenarios: " + ", ".join(SCENARIOS))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabsim", description="Token-based auto-scaling simulator and fluid solver.",
        epilog=_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("simulate", "run simulation replications"), ("fluid", "integrate the fluid limit"),
                        ("both", "simulate, integrate and report the trajectory gap"),
                        ("sweep", "sweep the [sweep] parameter"), ("compare", "compare policies with common seeds"),
                        ("stability", "fluid global-stability sweep from random initial states")]:
        p = sub.add_parser(name, help=help_, epilog=_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("scenario", help="scenario INI file or built-in scenario name")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--out", type=Path, help="output directory (default runs/<scenario>)")
        p.add_argument("--dt", type=float, help="override [run] dt")
        p.add_argument("--replications", type=int, help="override [run] replications")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default 1)")
        if name == "compare":
            p.add_argument("--policies", help="comma-separated policies (default from [policy] compare)")
        if name == "stability":
            p.add_argument("--initials", type=int, default=100, help="number of random initial states")
            p.add_argument("--horizon", type=float, default=2000.0, help="integration horizon")
            p.add_argument("--tol", type=float, default=1e-3, help="convergence tolerance, L-inf")
    return parser


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    errors, changes = [], {}
    if args.seed is not None:
        if args.seed < 0:
            errors.append("--seed must be nonnegative")
        changes["seed"] = args.seed
    if args.dt is not None:
        if not args.dt > 0:
            errors.append("--dt must be positive")
        changes["dt"] = args.dt
    if args.replications is not None:
        if args.replications < 1:
            errors.append("--replications must be at least 1")
        changes["replications"] = args.replications
    if args.jobs < 1:
        errors.append("--jobs must be at least 1")
    if errors:
        raise ConfigError(errors)
    return dataclasses.replace(cfg, **changes)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _apply_overrides(parse_config(args.scenario), args)
        out = args.out or Path("runs") / cfg.name
        if args.command in ("simulate", "fluid", "both"):
            reports = run_scenario(cfg, args.command, out, args.jobs)
            for r in reports:
                print(f"mean_wait={FMT % r.mean_wait} mean_power={FMT % r.mean_power} "
                      f"wastage={FMT % r.wastage} loss={FMT % r.loss_fraction}")
        elif args.command == "sweep":
            rows = run_sweep(cfg, out, args.jobs)
            print(f"{len(rows)} sweep rows, {sum(r['status'] != 'ok' for r in rows)} failed")
        elif args.command == "compare":
            pols = None
            if args.policies:
                try:
                    pols = [Policy(p.strip()) for p in args.policies.split(",") if p.strip()]
                except ValueError as exc:
                    raise ConfigError([f"--policies: {exc}"]) from None
            for r in run_compare(cfg, out, args.jobs, pols):
                print(f"{r['policy']}: mean_power={r['mean_power']} mean_wait={r['mean_wait']}")
        else:
            rep = run_stability(cfg, out, args.initials, args.horizon, args.tol,
                                args.dt if args.dt is not None else 1e-2)
            print(f"{rep.converged}/{rep.n_initials} converged, worst distance {FMT % rep.worst_distance}")
        print(f"wrote {out}")
        return 0
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return 1
    except (DivergenceError, SimulationError, OSError, RuntimeError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
