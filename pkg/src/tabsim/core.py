"""Domain types and phase-type service math shared by the simulator and the fluid engine.

Everything here is an immutable value: arrays stored on frozen dataclasses are
marked read-only at construction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_BUFFER = 10
MAX_PHASES = 32
PROJECTION_TOL = 1e-6


class InvalidPhaseType(ValueError):
    """Raised for a phase-type specification that does not describe a proper service time."""


class DivergenceError(RuntimeError):
    """Raised when a numerical state drifts too far outside the occupancy space."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class Mode(enum.IntEnum):
    BUSY = 0
    IDLE_ON = 1
    IDLE_OFF = 2
    SETUP = 3


@dataclass(frozen=True)
class ServerState:
    mode: Mode
    queue_len: int = 0
    current_phase: int | None = None

    def __post_init__(self):
        if (self.mode == Mode.BUSY) != (self.queue_len >= 1):
            raise ValueError(f"mode {self.mode.name} inconsistent with queue_len={self.queue_len}")


@dataclass(frozen=True)
class DispatcherLedger:
    """Token view held by the dispatcher: one colour per server."""

    green: frozenset[int]
    yellow: frozenset[int]
    red: frozenset[int]
    orange: frozenset[int]

    def partition_errors(self, n_servers: int) -> list[str]:
        errors = []
        sets = {"green": self.green, "yellow": self.yellow, "red": self.red, "orange": self.orange}
        names = list(sets)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                both = sets[a] & sets[b]
                if both:
                    errors.append(f"servers {sorted(both)[:5]} hold both {a} and {b} tokens")
        covered = self.green | self.yellow | self.red | self.orange
        if covered != set(range(n_servers)):
            errors.append("token sets do not cover every server exactly")
        return errors

    def matches(self, servers: Sequence[ServerState]) -> bool:
        colour = {Mode.IDLE_ON: self.green, Mode.BUSY: self.yellow,
                  Mode.IDLE_OFF: self.red, Mode.SETUP: self.orange}
        return not self.partition_errors(len(servers)) and all(
            i in colour[s.mode] for i, s in enumerate(servers))


@dataclass(frozen=True, eq=False)
class FluidState:
    """Fluid-scaled occupancy point.

    ``q[i-1]`` is the fraction of servers with at least ``i`` tasks. For
    phase-type service ``q`` has shape ``(B, K)`` and ``q[i-1, j-1]`` also
    requires the task in service to be in phase ``j``.
    """

    q: np.ndarray
    delta0: float
    delta1: float

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim not in (1, 2):
            raise ValueError("q must be a vector or a B x K matrix")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "delta0", float(self.delta0))
        object.__setattr__(self, "delta1", float(self.delta1))

    @property
    def B(self) -> int:
        return self.q.shape[0]

    @property
    def K(self) -> int:
        return 1 if self.q.ndim == 1 else self.q.shape[1]

    @property
    def is_phase(self) -> bool:
        return self.q.ndim == 2

    @property
    def levels(self) -> np.ndarray:
        """Aggregate q_i over phases (identity for exponential states)."""
        return self.q if self.q.ndim == 1 else self.q.sum(axis=1)

    @property
    def q1(self) -> float:
        return float(self.levels[0])

    @property
    def u(self) -> float:
        return 1.0 - self.q1 - self.delta0 - self.delta1

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.q.ravel(), [self.delta0, self.delta1]])

    @classmethod
    def from_vector(cls, x, B: int, K: int | None = None) -> FluidState:
        x = np.asarray(x, dtype=float)
        if K is None:
            return cls(x[:B].copy(), x[B], x[B + 1])
        n = B * K
        return cls(x[:n].reshape(B, K).copy(), x[n], x[n + 1])

    def __eq__(self, other):
        if not isinstance(other, FluidState):
            return NotImplemented
        return (self.q.shape == other.q.shape and np.array_equal(self.q, other.q)
                and self.delta0 == other.delta0 and self.delta1 == other.delta1)

    def __repr__(self):
        return f"FluidState(q={self.levels.round(6).tolist()}, delta0={self.delta0:.6g}, delta1={self.delta1:.6g})"


def all_idle_on(B: int = DEFAULT_BUFFER, K: int | None = None) -> FluidState:
    shape = B if K is None else (B, K)
    return FluidState(np.zeros(shape), 0.0, 0.0)


def all_idle_off(B: int = DEFAULT_BUFFER, K: int | None = None) -> FluidState:
    shape = B if K is None else (B, K)
    return FluidState(np.zeros(shape), 1.0, 0.0)


@dataclass(frozen=True, eq=False)
class PhaseTypeService:
    """Phase-type service time: start in phase j w.p. r[j], stay Exp(gamma[j]),
    then move to phase k w.p. R[j, k] or finish w.p. 1 - sum_k R[j, k].

    Use :meth:`build` to get a unit-mean service; the raw constructor keeps
    ``gamma`` exactly as given.
    """

    r: np.ndarray
    R: np.ndarray
    gamma: np.ndarray
    eta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r, R, gamma = _frozen(self.r), _frozen(self.R), _frozen(self.gamma)
        K = r.shape[0]
        if r.ndim != 1 or R.shape != (K, K) or gamma.shape != (K,):
            raise InvalidPhaseType("r, R and gamma must have shapes (K,), (K, K), (K,)")
        if K > MAX_PHASES:
            raise InvalidPhaseType(f"at most {MAX_PHASES} phases are supported, got {K}")
        if np.any(r < 0) or abs(r.sum() - 1.0) > 1e-12:
            raise InvalidPhaseType(f"initial distribution must be a probability vector (sums to {r.sum():.6g})")
        if np.any(R < 0) or np.any(R.sum(axis=1) > 1 + 1e-12):
            raise InvalidPhaseType("transition matrix must be row-substochastic")
        if np.any(np.diag(R) != 0):
            raise InvalidPhaseType("self-transitions r_jj must be zero")
        if np.any(gamma <= 0):
            raise InvalidPhaseType("phase rates must be positive")
        # every phase transient <=> I - R invertible with nonnegative inverse
        try:
            fundamental = np.linalg.inv(np.eye(K) - R)
        except np.linalg.LinAlgError:
            raise InvalidPhaseType("some phase is never left towards completion") from None
        if not np.all(np.isfinite(fundamental)) or np.any(fundamental < -1e-9) or np.linalg.cond(np.eye(K) - R) > 1e12:
            raise InvalidPhaseType("some phase is never left towards completion")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "eta", _frozen(_solve_embedded(r, R)))

    @property
    def K(self) -> int:
        return self.r.shape[0]

    @property
    def exit_probs(self) -> np.ndarray:
        return 1.0 - self.R.sum(axis=1)

    @classmethod
    def build(cls, r, R, gamma, normalize: bool = True) -> PhaseTypeService:
        d = cls(r, R, gamma)
        return d.normalized() if normalize else d

    def normalized(self) -> PhaseTypeService:
        # the two readings of the mean formula agree exactly at 1
        return PhaseTypeService(self.r, self.R, self.gamma / phase_type_mean(self))

    def true_mean(self) -> float:
        """Expected total sojourn time, sum_j (expected visits to j) / gamma_j."""
        return float(np.sum(self.eta[1:] / (self.gamma * self.eta[0])))

    @classmethod
    def exponential(cls, rate: float = 1.0) -> PhaseTypeService:
        return cls([1.0], [[0.0]], [rate])

    @classmethod
    def hyperexponential(cls, probs, rates, normalize: bool = False) -> PhaseTypeService:
        K = len(probs)
        return cls.build(probs, np.zeros((K, K)), rates, normalize=normalize)

    @classmethod
    def erlang(cls, k: int, rate: float) -> PhaseTypeService:
        R = np.zeros((k, k))
        for j in range(k - 1):
            R[j, j + 1] = 1.0
        r = np.zeros(k)
        r[0] = 1.0
        return cls(r, R, np.full(k, float(rate)))


def _solve_embedded(r: np.ndarray, R: np.ndarray) -> np.ndarray:
    K = r.shape[0]
    P = np.zeros((K + 1, K + 1))
    P[0, 1:] = r
    P[1:, 1:] = R
    P[1:, 0] = 1.0 - R.sum(axis=1)
    A = P.T - np.eye(K + 1)
    A[-1, :] = 1.0
    b = np.zeros(K + 1)
    b[-1] = 1.0
    if np.linalg.cond(A) > 1e12:
        raise InvalidPhaseType("embedded chain has no unique stationary distribution")
    try:
        eta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        raise InvalidPhaseType("embedded chain has no unique stationary distribution") from None
    if np.any(eta < -1e-12):
        raise InvalidPhaseType("embedded chain stationary vector has negative entries")
    return np.clip(eta, 0.0, None)


def embedded_stationary(d: PhaseTypeService) -> np.ndarray:
    """Stationary vector (eta_0, ..., eta_K) of the jump chain that restarts at phase r after each completion."""
    return np.array(d.eta)


def phase_type_mean(d: PhaseTypeService) -> float:
    """``(sum_i eta_i / (gamma_i eta_0))**-1``.

    This is the reciprocal of :meth:`PhaseTypeService.true_mean`; both equal 1
    for every service built with ``normalize=True``.
    """
    if np.any(d.gamma <= 0):
        raise InvalidPhaseType("phase rates must be positive")
    return 1.0 / float(np.sum(d.eta[1:] / (d.gamma * d.eta[0])))


@dataclass(frozen=True)
class Constant:
    rate: float

    def __post_init__(self):
        if not self.rate > 0 or not math.isfinite(self.rate):
            raise ValueError("arrival rate must be positive and finite")

    def __call__(self, t: float) -> float:
        return self.rate

    @property
    def max_rate(self) -> float:
        return self.rate

    @property
    def mean_rate(self) -> float:
        return self.rate


@dataclass(frozen=True)
class Sinusoid:
    """``base + amplitude * sin(t / period)``."""

    base: float
    amplitude: float
    period: float

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.base - abs(self.amplitude) <= 0:
            raise ValueError("sinusoid must stay strictly positive")

    def __call__(self, t: float) -> float:
        return self.base + self.amplitude * math.sin(t / self.period)

    @property
    def max_rate(self) -> float:
        return self.base + abs(self.amplitude)

    @property
    def mean_rate(self) -> float:
        return self.base


@dataclass(frozen=True)
class Table:
    """Piecewise-constant rate: ``rates[k]`` applies on ``[times[k], times[k+1])``."""

    times: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(x) for x in self.times))
        object.__setattr__(self, "rates", tuple(float(x) for x in self.rates))
        if len(self.times) != len(self.rates) or not self.times:
            raise ValueError("table needs matching, nonempty times and rates")
        if self.times[0] != 0.0 or any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("table breakpoints must start at 0 and increase strictly")
        if any(not x > 0 for x in self.rates):
            raise ValueError("table rates must be positive")

    def __call__(self, t: float) -> float:
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.rates[max(int(k), 0)]

    @property
    def max_rate(self) -> float:
        return max(self.rates)

    @property
    def mean_rate(self) -> float:
        return self.rates[0] if len(self.rates) == 1 else float(np.mean(self.rates))


ArrivalProfile = Constant | Sinusoid | Table


@dataclass(frozen=True)
class EnergyParams:
    p_full: float = 200.0
    p_idle: float = 140.0

    def __post_init__(self):
        if not 0 <= self.p_idle <= self.p_full:
            raise ValueError("need 0 <= p_idle <= p_full")

    @property
    def f(self) -> float:
        return self.p_idle / self.p_full if self.p_full else 0.0


def validate_fluid_state(s: FluidState, tol: float = 0.0) -> list[str]:
    """All violated membership conditions of the occupancy space; empty means valid."""
    problems = []
    q = s.q if s.is_phase else s.q[:, None]
    if np.any(~np.isfinite(q)) or not (math.isfinite(s.delta0) and math.isfinite(s.delta1)):
        return ["non-finite component"]
    for (i, j) in np.argwhere((q < -tol) | (q > 1 + tol)):
        problems.append(f"q_{i + 1}{'' if not s.is_phase else f',{j + 1}'} = {q[i, j]:.6g} outside [0, 1]")
    for name, v in (("delta0", s.delta0), ("delta1", s.delta1)):
        if v < -tol or v > 1 + tol:
            problems.append(f"{name} = {v:.6g} outside [0, 1]")
    for (i, j) in np.argwhere(q[1:] > q[:-1] + tol):
        idx = f"{i + 2}" if not s.is_phase else f"{i + 2},{j + 1}"
        prev = f"{i + 1}" if not s.is_phase else f"{i + 1},{j + 1}"
        problems.append(f"q_{idx} > q_{prev}")
    mass = s.q1 + s.delta0 + s.delta1
    # allow summation-order rounding on top of tol
    if mass > 1 + tol + 16 * np.finfo(float).eps:
        problems.append(f"mass {mass:.6g} > 1")
    return problems


def project_rows(X: np.ndarray, B: int, K: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise projection of packed states ``[q..., delta0, delta1]``.

    Returns the repaired rows and the L-infinity displacement of each row.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, k = X.shape[0], (K or 1)
    m = B * k
    q = np.clip(X[:, :m].reshape(n, B, k), 0.0, 1.0)
    d = np.clip(X[:, m:m + 2], 0.0, 1.0)
    q = np.minimum.accumulate(q, axis=1)
    mass = q[:, 0, :].sum(axis=1) + d.sum(axis=1)
    over = mass > 1.0
    if np.any(over):
        # a few ulps extra so the rounded sum cannot land just above one
        scale = np.where(over, mass * (1.0 + 8 * np.finfo(float).eps), 1.0)
        q[:, 0, :] /= scale[:, None]
        d /= scale[:, None]
        q = np.minimum.accumulate(q, axis=1)
    out = np.concatenate([q.reshape(n, m), d], axis=1)
    return out, np.max(np.abs(out - X[:, :m + 2]), axis=1)


def project_to_E(s: FluidState, tol: float = PROJECTION_TOL) -> FluidState:
    """Nearest-point repair of a state that sits within ``tol`` of the occupancy space.

    Clamp to [0, 1], restore monotonicity by a running minimum down the levels,
    then shrink (q_1, delta0, delta1) proportionally if their sum exceeds one.
    """
    K = s.K if s.is_phase else None
    out, moved = project_rows(s.to_vector(), s.B, K)
    if not moved[0] <= tol:
        raise DivergenceError(f"state is {moved[0]:.3g} away from the occupancy space (tolerance {tol:g})")
    return FluidState.from_vector(out[0], s.B, K)
