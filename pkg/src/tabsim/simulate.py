"""Seeded discrete-event simulation of N parallel servers.

Three policies share one event loop:

* ``tabs``: token-based dispatch with auto-scaling. Idle servers advertise a
  green token, turn themselves off after an Exp(mu) standby, and an arrival
  that finds no green token wakes one red (off) server into an Exp(nu) setup.
* ``jiq``: the same dispatcher with standby disabled, so servers never switch off.
* ``delayedoff``: a centralized FCFS queue where every waiting task may hold
  one setup (M/M/N/setup/delayedoff).

Event ties at equal times are broken by kind (departure, setup completion,
standby expiry, arrival) and then by server id. Samples are taken after all
events at the sample time.
"""

from __future__ import annotations

import enum
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .core import (
    DEFAULT_BUFFER,
    ArrivalProfile,
    Constant,
    DispatcherLedger,
    FluidState,
    Mode,
    PhaseTypeService,
    ServerState,
    validate_fluid_state,
)

BUSY, IDLE_ON, IDLE_OFF, SETUP = (int(m) for m in Mode)
# colour index of each mode: green, yellow, red, orange
_GREEN, _YELLOW, _RED, _ORANGE = IDLE_ON, BUSY, IDLE_OFF, SETUP

# event kinds double as tie-break priorities
DEPARTURE, SETUP_DONE, STANDBY, ARRIVAL = 0, 1, 2, 3


class Policy(str, enum.Enum):
    TABS = "tabs"
    JIQ = "jiq"
    DELAYEDOFF = "delayedoff"


class SimulationError(RuntimeError):
    """Internal invariant failure; a bug, not a property of the workload."""


@dataclass(frozen=True)
class SimConfig:
    n_servers: int
    arrivals: ArrivalProfile
    mu: float
    nu: float
    policy: Policy = Policy.TABS
    buffer: int = DEFAULT_BUFFER
    service: PhaseTypeService | None = None   # None: unit-mean exponential
    horizon: float = 250.0
    sample_interval: float = 1.0
    seed: int = 0
    initial: str | FluidState = "idle_on"     # "idle_on", "idle_off" or explicit fractions
    record_tasks: bool = True
    check_invariants: bool = False

    def __post_init__(self):
        if isinstance(self.arrivals, (int, float)):
            object.__setattr__(self, "arrivals", Constant(float(self.arrivals)))
        object.__setattr__(self, "policy", Policy(self.policy))
        errors = self.errors()
        if errors:
            raise ValueError("; ".join(errors))

    def errors(self) -> list[str]:
        e = []
        if self.n_servers < 1:
            e.append("n_servers must be at least 1")
        if self.buffer < 1:
            e.append("buffer must be at least 1")
        if not (self.mu > 0 or (self.policy == Policy.JIQ and self.mu == 0)):
            e.append("standby rate must be positive")
        if not self.nu > 0:
            e.append("setup rate must be positive")
        if not self.horizon > 0:
            e.append("horizon must be positive")
        if not self.sample_interval > 0:
            e.append("sample_interval must be positive")
        if not 0 <= self.seed < 2 ** 64:
            e.append("seed must fit in 64 bits")
        if self.policy == Policy.DELAYEDOFF and self.service is not None:
            e.append("delayedoff baseline is defined for exponential service only")
        if isinstance(self.initial, str):
            if self.initial not in ("idle_on", "idle_off"):
                e.append(f"unknown initial state {self.initial!r}")
            elif self.policy == Policy.JIQ and self.initial == "idle_off":
                e.append("jiq servers never switch on from idle-off")
        else:
            s = self.initial
            e += [f"initial state: {p}" for p in validate_fluid_state(s, tol=1e-12)]
            if s.B != self.buffer:
                e.append(f"initial state has {s.B} levels but buffer is {self.buffer}")
            if s.is_phase != (self.service is not None) or (s.is_phase and s.K != self.service.K):
                e.append("initial state layout does not match the service model")
            if self.policy == Policy.JIQ and (s.delta0 > 0 or s.delta1 > 0):
                e.append("jiq initial state cannot have off or setup servers")
            if self.policy == Policy.DELAYEDOFF and np.any(s.levels[1:] > 0):
                e.append("delayedoff initial state cannot have queued tasks")
        return e


@dataclass(frozen=True)
class TaskRecord:
    arrival_time: float
    service_start_time: float | None
    departure_time: float | None
    server: int | None
    dropped: bool

    @property
    def wait(self) -> float | None:
        if self.dropped or self.service_start_time is None:
            return None
        return self.service_start_time - self.arrival_time


@dataclass(frozen=True, eq=False)
class TaskTable(Sequence[TaskRecord]):
    """Column store of per-task records; NaN / -1 mark fields a task never reached."""

    arrival: np.ndarray
    start: np.ndarray
    departure: np.ndarray
    server: np.ndarray
    dropped: np.ndarray

    def __len__(self):
        return len(self.arrival)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if self.dropped[k]:
            return TaskRecord(float(self.arrival[k]), None, None, None, True)
        start, dep = float(self.start[k]), float(self.departure[k])
        srv = int(self.server[k])
        # tasks still queued at the horizon have no start or departure yet
        return TaskRecord(float(self.arrival[k]), None if math.isnan(start) else start,
                          None if math.isnan(dep) else dep, srv if srv >= 0 else None, False)

    def __iter__(self) -> Iterator[TaskRecord]:
        return (self[k] for k in range(len(self)))

    @property
    def waits(self) -> np.ndarray:
        return self.start - self.arrival


@dataclass(frozen=True)
class TraceSample:
    t: float
    fluid: FluidState
    green: int          # cumulative green (server idle-on) messages
    red: int            # cumulative red (server off) messages
    setups: int         # cumulative setup initiations
    arrivals: int
    departures: int
    drops: int
    waiting: float = 0.0  # central-queue length / N (delayedoff only)

    @property
    def u(self) -> float:
        return self.fluid.u


@dataclass(frozen=True)
class SimResult:
    samples: list[TraceSample]
    tasks: TaskTable
    config: SimConfig
    degenerate_drops: int = 0   # arrivals that found neither an idle-on nor a busy server

    def __iter__(self):
        # allows ``samples, tasks = run_simulation(cfg)``
        return iter((self.samples, self.tasks))


class _Stream:
    """Buffered draws from one numpy generator."""

    __slots__ = ("_gen", "_exp", "_uni", "_ie", "_iu", "_block")

    def __init__(self, seed_seq: np.random.SeedSequence, block: int = 1 << 14):
        self._gen = np.random.Generator(np.random.PCG64(seed_seq))
        self._block = block
        self._exp = self._uni = []
        self._ie = self._iu = 0

    def exp(self) -> float:
        if self._ie >= len(self._exp):
            self._exp = self._gen.standard_exponential(self._block).tolist()
            self._ie = 0
        v = self._exp[self._ie]
        self._ie += 1
        return v

    def uniform(self) -> float:
        if self._iu >= len(self._uni):
            self._uni = self._gen.random(self._block).tolist()
            self._iu = 0
        v = self._uni[self._iu]
        self._iu += 1
        return v


def _streams(seed: int) -> dict[str, _Stream]:
    names = ("arrival", "service", "dispatch", "timers")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return dict(zip(names, (_Stream(c) for c in children)))


def sample_service(service: PhaseTypeService | None, rng: np.random.Generator) -> float:
    """One service duration: Exp(1), or a walk through the phases until exit."""
    if service is None:
        return float(rng.standard_exponential())
    return sum(sojourn for _, sojourn in sample_phase_path(service, rng))


def sample_phase_path(service: PhaseTypeService, rng: np.random.Generator) -> list[tuple[int, float]]:
    """Visited phases (0-based) and the sojourn spent in each."""
    cum_r = np.cumsum(service.r)
    cum_R = np.cumsum(service.R, axis=1)
    j = min(int(np.searchsorted(cum_r, rng.random(), side="right")), service.K - 1)
    path = []
    while True:
        path.append((j, float(rng.standard_exponential() / service.gamma[j])))
        nxt = int(np.searchsorted(cum_R[j], rng.random(), side="right"))
        if nxt >= service.K:
            return path
        j = nxt


class _Base:
    """State and bookkeeping common to the token and centralized simulators."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.N = N = cfg.n_servers
        self.B = cfg.buffer
        self.t = 0.0
        rng = _streams(cfg.seed)
        self._arr, self._svc, self._pick, self._tim = rng["arrival"], rng["service"], rng["dispatch"], rng["timers"]
        self.mode = [IDLE_ON] * N
        self.qlen = [0] * N
        self.phase = [-1] * N
        self.epoch = [0] * N
        # colour lists (green, yellow, red, orange indexed by mode) + position of each server
        self.members: list[list[int]] = [[], [], [], []]
        self.pos = [0] * N
        self.K = cfg.service.K if cfg.service is not None else 0
        self.by_len = [0] * (self.B + 2)
        self.by_len_phase = [[0] * max(self.K, 1) for _ in range(self.B + 2)]
        self.events: list[tuple] = []
        self.n_green = self.n_red = self.n_setups = 0
        self.n_arrivals = self.n_departures = self.n_drops = 0
        self.degenerate_drops = 0
        self.queues: list[deque[int]] = [deque() for _ in range(N)]
        self.t_arr: list[float] = []
        self.t_start: list[float] = []
        self.t_dep: list[float] = []
        self.srv: list[int] = []
        if cfg.service is not None:
            d = cfg.service
            self._cum_r = np.cumsum(d.r).tolist()
            self._cum_R = np.cumsum(d.R, axis=1).tolist()
            self._inv_gamma = (1.0 / d.gamma).tolist()
        lam = cfg.arrivals
        self._lam = lam
        self._lam_max = lam.max_rate
        self._const_rate = isinstance(lam, Constant)
        self._next_arrival(0.0)

    # -- colour sets ---------------------------------------------------------

    def _place(self, s: int, colour: int):
        lst = self.members[colour]
        self.pos[s] = len(lst)
        lst.append(s)

    def _recolour(self, s: int, old: int, new: int):
        lst = self.members[old]
        i = self.pos[s]
        last = lst.pop()
        if last != s:
            lst[i] = last
            self.pos[last] = i
        self.mode[s] = new
        self._place(s, new)

    def _pick_from(self, colour: int) -> int:
        lst = self.members[colour]
        return lst[int(self._pick.uniform() * len(lst))]

    # -- scheduling ----------------------------------------------------------

    def _push(self, time: float, kind: int, server: int, tag: int = 0):
        heapq.heappush(self.events, (time, kind, server, tag))

    def _next_arrival(self, t: float):
        if self._const_rate:
            t += self._arr.exp() / (self.N * self._lam_max)
        else:
            # thinning against the profile's maximum rate
            while True:
                t += self._arr.exp() / (self.N * self._lam_max)
                if self._arr.uniform() * self._lam_max <= self._lam(t):
                    break
        self._push(t, ARRIVAL, -1)

    def _set_len(self, s: int, new: int):
        old = self.qlen[s]
        self.by_len[old] -= 1
        self.by_len[new] += 1
        if self.K:
            j = self.phase[s]
            if old:
                self.by_len_phase[old][j] -= 1
            if new:
                self.by_len_phase[new][j] += 1
        self.qlen[s] = new

    def _new_task(self, t: float) -> int:
        self.n_arrivals += 1
        if not self.cfg.record_tasks:
            return -1
        self.t_arr.append(t)
        self.t_start.append(math.nan)
        self.t_dep.append(math.nan)
        self.srv.append(-1)
        return len(self.t_arr) - 1

    def _drop(self, task: int):
        self.n_drops += 1
        if task >= 0:
            self.srv[task] = -2

    def _begin_service(self, s: int, task: int, t: float):
        """Start ``task`` at server ``s`` (queue already accounts for it)."""
        if task >= 0:
            self.t_start[task] = t
            self.srv[task] = s
        if not self.K:
            self._push(t + self._svc.exp(), DEPARTURE, s)
            return
        u = self._svc.uniform()
        j = 0
        cum = self._cum_r
        while j < self.K - 1 and u >= cum[j]:
            j += 1
        self._enter_phase(s, j, t)

    def _enter_phase(self, s: int, j: int, t: float):
        ql = self.qlen[s]
        old = self.phase[s]
        if ql:
            if old >= 0:
                self.by_len_phase[ql][old] -= 1
            self.by_len_phase[ql][j] += 1
        self.phase[s] = j
        self._push(t + self._svc.exp() * self._inv_gamma[j], DEPARTURE, s)

    def _next_phase(self, s: int) -> int:
        """Next phase after a sojourn in the current one, or -1 for completion."""
        u = self._svc.uniform()
        row = self._cum_R[self.phase[s]]
        for k in range(self.K):
            if u < row[k]:
                return k
        return -1

    # -- initial state ------------------------------------------------------

    def _initial_counts(self) -> tuple[list[tuple[int, int]], int, int]:
        """(queue length, phase) per busy server, number off, number in setup."""
        init, N = self.cfg.initial, self.N
        if init == "idle_on":
            return [], 0, 0
        if init == "idle_off":
            return [], N, 0
        Q = np.rint(np.asarray(init.q) * N).astype(int)
        Q = Q if init.is_phase else Q[:, None]
        d0, d1 = int(round(init.delta0 * N)), int(round(init.delta1 * N))
        if Q[0].sum() + d0 + d1 > N:
            raise ValueError("initial fractions do not round consistently to N servers")
        busy = []
        for i in range(Q.shape[0]):
            nxt = Q[i + 1] if i + 1 < Q.shape[0] else np.zeros(Q.shape[1], dtype=int)
            for j in range(Q.shape[1]):
                busy += [(i + 1, j)] * int(Q[i, j] - nxt[j])
        return busy, d0, d1

    # -- observation ---------------------------------------------------------

    def fluid_state(self) -> FluidState:
        N, B = self.N, self.B
        tail = 0
        if self.K:
            q = np.zeros((B, self.K))
            acc = np.zeros(self.K)
            for i in range(B, 0, -1):
                acc = acc + self.by_len_phase[i]
                q[i - 1] = acc / N
        else:
            q = np.zeros(B)
            for i in range(B, 0, -1):
                tail += self.by_len[i]
                q[i - 1] = tail / N
        return FluidState(q, len(self.members[_RED]) / N, len(self.members[_ORANGE]) / N)

    def _sample(self, t: float, waiting: float = 0.0) -> TraceSample:
        return TraceSample(t, self.fluid_state(), self.n_green, self.n_red, self.n_setups,
                           self.n_arrivals, self.n_departures, self.n_drops, waiting)

    def server_states(self) -> list[ServerState]:
        return [ServerState(Mode(m), q, (p + 1 if self.K and m == BUSY else None))
                for m, q, p in zip(self.mode, self.qlen, self.phase)]

    def ledger(self) -> DispatcherLedger:
        g, y, r, o = (frozenset(self.members[c]) for c in (_GREEN, _YELLOW, _RED, _ORANGE))
        return DispatcherLedger(green=g, yellow=y, red=r, orange=o)

    def check(self):
        """Full O(N) consistency check of tokens, modes and counters."""
        led = self.ledger()
        errors = led.partition_errors(self.N)
        sets = led_sets(led)
        for s in range(self.N):
            if s not in sets[self.mode[s]]:
                errors.append(f"server {s} in mode {Mode(self.mode[s]).name} has the wrong token")
            if (self.mode[s] == BUSY) != (self.qlen[s] >= 1):
                errors.append(f"server {s}: mode {Mode(self.mode[s]).name} with {self.qlen[s]} tasks")
        hist = [0] * (self.B + 2)
        for ql in self.qlen:
            hist[ql] += 1
        if hist != self.by_len:
            errors.append("queue-length histogram out of sync")
        if errors:
            raise SimulationError(f"t={self.t:.6g}: " + "; ".join(errors))

    def _tasks(self) -> TaskTable:
        srv = np.array(self.srv, dtype=np.int64)
        return TaskTable(np.array(self.t_arr), np.array(self.t_start), np.array(self.t_dep),
                         np.where(srv >= 0, srv, -1), srv == -2)

    # -- main loop ----------------------------------------------------------

    def step(self) -> tuple[float, int, int]:
        """Process the next event; returns ``(time, kind, server)``."""
        t, kind, s, tag = heapq.heappop(self.events)
        self.t = t
        self._dispatch(t, kind, s, tag)
        if self.cfg.check_invariants:
            self.check()
        return t, kind, s

    def run(self) -> SimResult:
        cfg = self.cfg
        horizon, dt = cfg.horizon, cfg.sample_interval
        n_samples = int(math.floor(horizon / dt + 1e-9))
        samples = [self._sample(0.0, self._waiting())]
        events, dispatch, check = self.events, self._dispatch, cfg.check_invariants
        pop = heapq.heappop
        k = 1
        next_sample = dt if n_samples >= 1 else math.inf
        while True:
            t = events[0][0]
            while t > next_sample:
                samples.append(self._sample(next_sample, self._waiting()))
                k += 1
                next_sample = k * dt if k <= n_samples else math.inf
            if t > horizon:
                break
            t, kind, s, tag = pop(events)
            self.t = t
            dispatch(t, kind, s, tag)
            if check:
                self.check()
        if samples[-1].t < horizon:
            samples.append(self._sample(horizon, self._waiting()))
        self.t = horizon
        return SimResult(samples, self._tasks(), cfg, self.degenerate_drops)

    def _waiting(self) -> float:
        return 0.0


def led_sets(led: DispatcherLedger) -> dict[int, frozenset[int]]:
    return {IDLE_ON: led.green, BUSY: led.yellow, IDLE_OFF: led.red, SETUP: led.orange}


class TokenSimulation(_Base):
    """TABS (and, with standby disabled, JIQ) on N servers with local FIFO queues."""

    def __init__(self, cfg: SimConfig):
        if cfg.policy == Policy.DELAYEDOFF:
            raise ValueError("use CentralizedSimulation for the delayedoff policy")
        super().__init__(cfg)
        self.standby = cfg.policy == Policy.TABS
        busy, n_off, n_setup = self._initial_counts()
        order = list(range(self.N))
        s_iter = iter(order)
        self.by_len[0] = self.N
        for ql, j in busy:
            s = next(s_iter)
            self.mode[s] = BUSY
            self._place(s, _YELLOW)
            self.phase[s] = j if self.K else -1
            self._set_len(s, ql)
            # tasks present at time zero are not recorded
            self.queues[s].extend([-1] * ql)
            scale = self._inv_gamma[j] if self.K else 1.0
            self._push(self._svc.exp() * scale, DEPARTURE, s)
        for _ in range(n_off):
            s = next(s_iter)
            self.mode[s] = IDLE_OFF
            self._place(s, _RED)
            self.n_red += 1
        for _ in range(n_setup):
            s = next(s_iter)
            self.mode[s] = SETUP
            self._place(s, _ORANGE)
            self._push(self._tim.exp() / cfg.nu, SETUP_DONE, s)
        for s in s_iter:
            self.mode[s] = IDLE_ON
            self._place(s, _GREEN)
            self.n_green += 1
            self._arm_standby(s, 0.0)

    def _arm_standby(self, s: int, t: float):
        if self.standby:
            self._push(t + self._tim.exp() / self.cfg.mu, STANDBY, s, self.epoch[s])

    def _dispatch(self, t, kind, s, tag):
        if kind == ARRIVAL:
            self.tabs_on_arrival(t)
        elif kind == DEPARTURE:
            if self.K:
                nxt = self._next_phase(s)
                if nxt >= 0:
                    self._enter_phase(s, nxt, t)
                    return
            self.tabs_on_departure(s, t)
        elif kind == STANDBY:
            self.tabs_on_standby_expiry(s, tag)
        else:
            self.tabs_on_setup_complete(s, t)

    # -- the four handlers ---------------------------------------------------

    def tabs_on_arrival(self, t: float):
        """Green token -> that server; otherwise a random busy server (dropped if
        its buffer is full) and, under TABS, one red server starts its setup."""
        task = self._new_task(t)
        members = self.members
        if members[_GREEN]:
            s = self._pick_from(_GREEN)
            self._recolour(s, _GREEN, _YELLOW)
            self.epoch[s] += 1           # cancels the pending standby expiry
            self.queues[s].append(task)
            if self.K:
                # phase is unknown until service starts; _enter_phase files it
                self.qlen[s] = 1
                self.by_len[0] -= 1
                self.by_len[1] += 1
            else:
                self._set_len(s, 1)
            self._begin_service(s, task, t)
        else:
            if members[_YELLOW]:
                s = self._pick_from(_YELLOW)
                if self.qlen[s] >= self.B:
                    self._drop(task)
                else:
                    self._set_len(s, self.qlen[s] + 1)
                    self.queues[s].append(task)
                    if task >= 0:
                        self.srv[task] = s
            else:
                self.degenerate_drops += 1
                self._drop(task)
            if self.standby and members[_RED]:
                r = self._pick_from(_RED)
                self._recolour(r, _RED, _ORANGE)
                self.n_setups += 1
                self._push(t + self._tim.exp() / self.cfg.nu, SETUP_DONE, r)
        self._next_arrival(t)

    def tabs_on_departure(self, s: int, t: float):
        if self.mode[s] != BUSY or self.qlen[s] < 1:
            raise SimulationError(f"departure from server {s} in mode {Mode(self.mode[s]).name}")
        self.n_departures += 1
        done = self.queues[s].popleft()
        if done >= 0:
            self.t_dep[done] = t
        ql = self.qlen[s] - 1
        self._set_len(s, ql)
        if ql:
            self._begin_service(s, self.queues[s][0], t)
            return
        self.phase[s] = -1
        self._recolour(s, _YELLOW, _GREEN)
        self.n_green += 1
        self.epoch[s] += 1
        self._arm_standby(s, t)

    def tabs_on_standby_expiry(self, s: int, tag: int):
        if self.mode[s] != IDLE_ON or self.epoch[s] != tag:
            return  # server was re-busied since the timer was set
        self._recolour(s, _GREEN, _RED)
        self.n_red += 1

    def tabs_on_setup_complete(self, s: int, t: float):
        if self.mode[s] != SETUP:
            raise SimulationError(f"setup completion for server {s} in mode {Mode(self.mode[s]).name}")
        self._recolour(s, _ORANGE, _GREEN)
        self.n_green += 1
        self.epoch[s] += 1
        self._arm_standby(s, t)


class CentralizedSimulation(_Base):
    """M/M/N/setup/delayedoff: one FCFS queue; idle servers switch off after
    Exp(mu); each waiting task may hold one setup, reassigned FIFO to the
    oldest task without one when its owner is served elsewhere."""

    def __init__(self, cfg: SimConfig):
        if cfg.policy != Policy.DELAYEDOFF:
            raise ValueError("centralized simulation runs the delayedoff policy only")
        super().__init__(cfg)
        self.waiting: deque[int] = deque()
        self.is_waiting: set[int] = set()
        self.setup_of: dict[int, int] = {}     # waiting task -> server in setup for it
        self.owner_of: dict[int, int] = {}     # server in setup -> waiting task
        self.unlinked: list[int] = []           # heap of waiting tasks without a setup
        self._task_seq = 0
        busy, n_off, n_setup = self._initial_counts()
        if n_setup:
            raise ValueError("delayedoff initial state cannot have setups without waiting tasks")
        s_iter = iter(range(self.N))
        self.by_len[0] = self.N
        for ql, _ in busy:
            s = next(s_iter)
            self.mode[s] = BUSY
            self._place(s, _YELLOW)
            self._set_len(s, 1)
            self.queues[s].append(-1)
            self._push(self._svc.exp(), DEPARTURE, s)
        for _ in range(n_off):
            s = next(s_iter)
            self.mode[s] = IDLE_OFF
            self._place(s, _RED)
        for s in s_iter:
            self.mode[s] = IDLE_ON
            self._place(s, _GREEN)
            self._arm(s, 0.0)

    def _arm(self, s: int, t: float):
        self.epoch[s] += 1
        self._push(t + self._tim.exp() / self.cfg.mu, STANDBY, s, self.epoch[s])

    def _waiting(self) -> float:
        return len(self.waiting) / self.N

    def _dispatch(self, t, kind, s, tag):
        if kind == ARRIVAL:
            self.on_arrival(t)
        elif kind == DEPARTURE:
            self.on_completion(s, t)
        elif kind == STANDBY:
            if self.mode[s] == IDLE_ON and self.epoch[s] == tag:
                self._recolour(s, _GREEN, _RED)
        elif self.mode[s] == SETUP and self.epoch[s] == tag:
            self.on_setup_complete(s, t)

    def _serve(self, s: int, task: int, t: float):
        self._set_len(s, 1)
        self.queues[s].append(task)
        self._begin_service(s, task, t)

    def on_arrival(self, t: float):
        key = self._task_seq
        self._task_seq += 1
        task = self._new_task(t)
        if self.members[_GREEN]:
            s = self._pick_from(_GREEN)
            self._recolour(s, _GREEN, _YELLOW)
            self.epoch[s] += 1
            self._serve(s, task, t)
        elif len(self.waiting) >= self.N * (self.B - 1):
            self._drop(task)
        else:
            self.waiting.append((key, task))
            self.is_waiting.add(key)
            if self.members[_RED]:
                x = self._pick_from(_RED)
                self._recolour(x, _RED, _ORANGE)
                self.n_setups += 1
                self.epoch[x] += 1
                self._link(x, key)
                self._push(t + self._tim.exp() / self.cfg.nu, SETUP_DONE, x, self.epoch[x])
            else:
                heapq.heappush(self.unlinked, key)
        self._next_arrival(t)

    def _link(self, x: int, key: int):
        self.owner_of[x] = key
        self.setup_of[key] = x

    def _oldest_unlinked(self) -> int | None:
        h = self.unlinked
        while h and (h[0] not in self.is_waiting or h[0] in self.setup_of):
            heapq.heappop(h)
        return heapq.heappop(h) if h else None

    def _leave_queue(self, t: float) -> int:
        """Pop the head task; hand its setup (if any) to the oldest task without
        one, or cancel that setup when every waiting task already has one."""
        key, task = self.waiting.popleft()
        self.is_waiting.discard(key)
        x = self.setup_of.pop(key, None)
        if x is not None:
            del self.owner_of[x]
            w = self._oldest_unlinked()
            if w is not None:
                self._link(x, w)
            else:
                self._recolour(x, _ORANGE, _RED)
                self.epoch[x] += 1   # the pending completion is now stale
        return task

    def on_completion(self, s: int, t: float):
        if self.mode[s] != BUSY:
            raise SimulationError(f"completion at server {s} in mode {Mode(self.mode[s]).name}")
        self.n_departures += 1
        done = self.queues[s].popleft()
        if done >= 0:
            self.t_dep[done] = t
        self._set_len(s, 0)
        if self.waiting:
            self._serve(s, self._leave_queue(t), t)
            return
        self._recolour(s, _YELLOW, _GREEN)
        self._arm(s, t)

    def on_setup_complete(self, x: int, t: float):
        key = self.owner_of.pop(x, None)
        if key is not None:
            del self.setup_of[key]
            heapq.heappush(self.unlinked, key)
        if self.waiting:
            self._recolour(x, _ORANGE, _YELLOW)
            self.epoch[x] += 1
            self._serve(x, self._leave_queue(t), t)
        else:
            self._recolour(x, _ORANGE, _GREEN)
            self._arm(x, t)


def make_simulation(cfg: SimConfig) -> _Base:
    if cfg.policy == Policy.DELAYEDOFF:
        return CentralizedSimulation(cfg)
    return TokenSimulation(cfg)


def run_simulation(cfg: SimConfig) -> SimResult:
    """Run one replication. The result unpacks as ``(samples, tasks)``."""
    return make_simulation(cfg).run()


def run_delayedoff(cfg: SimConfig) -> SimResult:
    if cfg.policy != Policy.DELAYEDOFF:
        raise ValueError("run_delayedoff needs policy=delayedoff")
    return CentralizedSimulation(cfg).run()
