"""Waiting time, energy and agreement metrics for simulator traces and fluid paths.

Traces are accepted in either form: a list of ``TraceSample`` from the
simulator or a ``FluidTrajectory``. Both are reduced to a time grid plus a
matrix of packed fluid states ``[q..., delta0, delta1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import EnergyParams, FluidState
from .fluid import FluidTrajectory
from .simulate import TaskRecord, TaskTable, TraceSample

DEFAULT_WARMUP_FRACTION = 0.4
N_BATCHES = 10


class EmptySample(ValueError):
    """No observations fall inside the requested window."""


class AlignmentError(ValueError):
    """Two traces share no common time range."""


Trace = Sequence[TraceSample] | FluidTrajectory


def _grid(trace: Trace) -> tuple[np.ndarray, np.ndarray, int, int | None]:
    """(times, packed states, B, K) for either trace form."""
    if isinstance(trace, FluidTrajectory):
        return trace.t, trace.x, trace.B, trace.K
    if not len(trace):
        raise EmptySample("empty trace")
    s0 = trace[0].fluid
    t = np.array([s.t for s in trace])
    X = np.array([s.fluid.to_vector() for s in trace])
    return t, X, s0.B, (s0.K if s0.is_phase else None)


def _levels(X: np.ndarray, B: int, K: int | None) -> np.ndarray:
    if K is None:
        return X[:, :B]
    return X[:, :B * K].reshape(len(X), B, K).sum(axis=2)


# -- fluid-state formulas ---------------------------------------------------

def fluid_mean_wait(s: FluidState, lam: float) -> float:
    """Little's law: tasks waiting behind the one in service, per unit arrival rate."""
    if lam <= 0:
        raise ValueError("arrival rate must be positive")
    return float(s.levels[1:].sum() / lam)


def energy_per_server(s: FluidState, e: EnergyParams) -> float:
    """Busy and setting-up servers draw full power, idle-on servers idle power, off servers nothing."""
    return (s.q1 + s.delta1) * e.p_full + s.u * e.p_idle


def energy_wastage(mean_power: float, lam_admitted: float, e: EnergyParams) -> float:
    return mean_power - lam_admitted * e.p_full


def jiq_energy(lam: float, e: EnergyParams) -> float:
    """Stationary power per server when servers never switch off."""
    if not 0 < lam < 1:
        raise ValueError("need 0 < lam < 1")
    return lam * e.p_full * (1.0 + (1.0 / lam - 1.0) * e.f)


def jiq_relative_saving(lam: float, f: float) -> float:
    """Fraction of JIQ power saved by switching idle servers off."""
    x = (1.0 / lam - 1.0) * f
    return x / (1.0 + x)


# -- trace metrics --------------------------------------------------------

def empirical_mean_wait(tasks: TaskTable | Iterable[TaskRecord], warmup: float = 0.0) -> float:
    """Average wait of non-dropped tasks arriving at or after ``warmup``."""
    if isinstance(tasks, TaskTable):
        sel = (~tasks.dropped) & (tasks.arrival >= warmup) & ~np.isnan(tasks.start)
        if not sel.any():
            raise EmptySample("no served tasks after warmup")
        return float(np.mean(tasks.start[sel] - tasks.arrival[sel]))
    waits = [r.wait for r in tasks if not r.dropped and r.arrival_time >= warmup
             and r.service_start_time is not None]
    if not waits:
        raise EmptySample("no served tasks after warmup")
    return float(np.mean(waits))


def trajectory_gap(a: Trace, b: Trace) -> float:
    """Sup-distance over the times of ``a`` that ``b`` covers; ``b`` is
    linearly interpolated. Compares every q component plus delta0 and delta1."""
    ta, Xa, Ba, Ka = _grid(a)
    tb, Xb, Bb, Kb = _grid(b)
    if (Ba, Ka) != (Bb, Kb):
        raise ValueError(f"state layouts differ: B={Ba},K={Ka} vs B={Bb},K={Kb}")
    eps = 1e-9 * max(1.0, abs(tb[-1]))
    keep = (ta >= tb[0] - eps) & (ta <= tb[-1] + eps)
    if not keep.any():
        raise AlignmentError(f"time ranges [{ta[0]:g}, {ta[-1]:g}] and [{tb[0]:g}, {tb[-1]:g}] do not overlap")
    ta, Xa = ta[keep], Xa[keep]
    Xi = np.column_stack([np.interp(ta, tb, Xb[:, c]) for c in range(Xb.shape[1])])
    return float(np.max(np.abs(Xa - Xi)))


@dataclass(frozen=True)
class StationaryEstimate:
    state: FluidState
    stderr: FluidState      # batch-means standard error per component
    n_samples: int
    window: tuple[float, float]


def _batch_means(X: np.ndarray, n_batches: int = N_BATCHES) -> tuple[np.ndarray, np.ndarray]:
    # constant columns are returned exactly, free of summation rounding
    flat = np.all(X == X[0], axis=0)
    mean = np.where(flat, X[0], X.mean(axis=0))
    k = min(n_batches, len(X))
    if k < 2:
        return mean, np.zeros_like(mean)
    means = np.array([c.mean(axis=0) for c in np.array_split(X, k)])
    return mean, np.where(flat, 0.0, means.std(axis=0, ddof=1) / math.sqrt(k))


def stationary_estimate(trace: Trace, warmup: float) -> StationaryEstimate:
    t, X, B, K = _grid(trace)
    if t[-1] <= warmup:
        raise EmptySample(f"horizon {t[-1]:g} does not exceed warmup {warmup:g}")
    sel = t >= warmup
    mean, se = _batch_means(X[sel])
    return StationaryEstimate(FluidState.from_vector(mean, B, K), FluidState.from_vector(se, B, K),
                              int(sel.sum()), (float(t[sel][0]), float(t[-1])))


# -- reports ----------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    mean_wait: float
    mean_power: float          # watts per server
    wastage: float             # watts per server above lam_admitted * p_full
    normalized_power: float    # mean_power / (p_full + p_idle)
    loss_fraction: float
    msg_per_task: float
    sample_count: int
    warmup_used: float
    lam_admitted: float = math.nan
    wait_source: str = "tasks"   # "tasks" (per-task records) or "little" (queue lengths)

    @property
    def wastage_flagged(self) -> bool:
        """Negative wastage is finite-sample noise and reported as-is."""
        return self.wastage < 0


FIELDS = ("mean_wait", "mean_power", "normalized_power", "wastage", "loss_fraction", "msg_per_task")


def _power_series(X: np.ndarray, B: int, K: int | None, e: EnergyParams) -> np.ndarray:
    q1 = _levels(X, B, K)[:, 0]
    d0, d1 = X[:, -2], X[:, -1]
    return (q1 + d1) * e.p_full + (1.0 - q1 - d0 - d1) * e.p_idle


def simulation_report(samples: Sequence[TraceSample], tasks: TaskTable | None, n_servers: int,
                      e: EnergyParams, warmup_fraction: float = DEFAULT_WARMUP_FRACTION) -> MetricsReport:
    """Metrics of one replication over ``[warmup, horizon]``.

    Load, losses and power come from the samples in the window; the message
    rate uses whole-run totals so initial-state messages are included.
    """
    if not 0 <= warmup_fraction < 1:
        raise ValueError("warmup_fraction must lie in [0, 1)")
    t, X, B, K = _grid(samples)
    warmup = warmup_fraction * t[-1]
    sel = t >= warmup - 1e-9 * max(1.0, t[-1])
    first = next(s for s in samples if s.t >= t[sel][0])
    last = samples[-1]
    span = last.t - first.t
    arrivals = last.arrivals - first.arrivals
    drops = last.drops - first.drops
    if span > 0:
        lam_adm = (arrivals - drops) / (n_servers * span)
    else:
        lam_adm = math.nan
    power = float(_power_series(X[sel], B, K, e).mean())
    if tasks is not None and len(tasks):
        wait, source = empirical_mean_wait(tasks, warmup), "tasks"
    else:
        queued = _levels(X[sel], B, K)[:, 1:].sum(axis=1)
        wait = float(queued.mean() / lam_adm) if lam_adm > 0 else math.nan
        source = "little"
    total_arrivals = last.arrivals
    msgs = (last.green + last.red) / total_arrivals if total_arrivals else math.nan
    return MetricsReport(
        mean_wait=wait,
        mean_power=power,
        wastage=energy_wastage(power, lam_adm, e),
        normalized_power=power / (e.p_full + e.p_idle),
        loss_fraction=drops / arrivals if arrivals else 0.0,
        msg_per_task=msgs,
        sample_count=int(sel.sum()),
        warmup_used=float(warmup),
        lam_admitted=lam_adm,
        wait_source=source,
    )


def fluid_report(traj: FluidTrajectory, lam_at, e: EnergyParams,
                 warmup_fraction: float = DEFAULT_WARMUP_FRACTION) -> MetricsReport:
    """Same metrics on a fluid path; waits by Little's law, no messages."""
    t = traj.t
    warmup = warmup_fraction * t[-1]
    sel = t >= warmup - 1e-9 * max(1.0, t[-1])
    lam = np.array([lam_at(x) for x in t[sel]])
    lam_mean = float(lam.mean())
    power = float(_power_series(traj.x[sel], traj.B, traj.K, e).mean())
    queued = traj.levels[sel, 1:].sum(axis=1)
    return MetricsReport(
        mean_wait=float(queued.mean() / lam_mean),
        mean_power=power,
        wastage=energy_wastage(power, lam_mean, e),
        normalized_power=power / (e.p_full + e.p_idle),
        loss_fraction=0.0,
        msg_per_task=math.nan,
        sample_count=int(sel.sum()),
        warmup_used=float(warmup),
        lam_admitted=lam_mean,
        wait_source="little",
    )


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Field-wise mean over replications; counts are summed."""
    if not reports:
        raise EmptySample("no reports to aggregate")
    avg = {f: float(np.mean([getattr(r, f) for r in reports]))
           for f in FIELDS + ("lam_admitted",)}
    return MetricsReport(**avg, sample_count=sum(r.sample_count for r in reports),
                         warmup_used=reports[0].warmup_used, wait_source=reports[0].wait_source)
