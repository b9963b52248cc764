"""Fluid-limit dynamics of the token scheme: assignment coefficients, vector
fields for exponential and phase-type service, a projected RK4 integrator,
fixed points, the JIQ closed form, and a global-stability sweep.

States are packed as ``[q (B or B*K entries), delta0, delta1]``. The batched
internals take arrays of shape ``(n, dim)`` so many trajectories can be
stepped together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as _k
from .core import (
    DEFAULT_BUFFER,
    PROJECTION_TOL,
    ArrivalProfile,
    Constant,
    DivergenceError,
    FluidState,
    PhaseTypeService,
    Sinusoid,
    Table,
    project_rows,
    validate_fluid_state,
)

TOL_U = _k.TOL_U
TOL_DELTA = _k.TOL_DELTA
DEFAULT_DT = 1e-3
MAX_HALVINGS = 40
KINK_TOL = 1e-12  # overshoot accepted without splitting a step


class DomainError(ValueError):
    """State outside the occupancy space handed to a vector-field evaluation."""


class NoFixedPoint(ValueError):
    pass


@dataclass(frozen=True)
class FluidParams:
    lam: ArrivalProfile
    mu: float
    nu: float
    B: int = DEFAULT_BUFFER
    service: PhaseTypeService | None = None  # None means unit exponential

    def __post_init__(self):
        if isinstance(self.lam, (int, float)):
            object.__setattr__(self, "lam", Constant(float(self.lam)))
        # mu = 0 is JIQ: servers never leave the idle-on state
        if not self.mu >= 0 or not self.nu > 0:
            raise ValueError("need mu >= 0 and nu > 0")
        if self.B < 1:
            raise ValueError("buffer must be at least 1")

    @property
    def K(self) -> int | None:
        return None if self.service is None else self.service.K

    @property
    def dim(self) -> int:
        return self.B * (self.K or 1) + 2


def _check_domain(s: FluidState):
    problems = validate_fluid_state(s, tol=PROJECTION_TOL)
    if problems:
        raise DomainError("; ".join(problems))


def _profile_code(lam: ArrivalProfile) -> tuple[int, np.ndarray, np.ndarray]:
    if isinstance(lam, Constant):
        return 0, np.array([lam.rate]), np.zeros(1)
    if isinstance(lam, Sinusoid):
        return 1, np.array([lam.base, lam.amplitude, lam.period]), np.zeros(1)
    if isinstance(lam, Table):
        return 2, np.array(lam.times), np.array(lam.rates)
    raise TypeError(f"unsupported arrival profile {lam!r}")


def _service_arrays(service: PhaseTypeService | None):
    if service is None:
        one = np.ones(1)
        return 0, one, np.zeros((1, 1)), one, one
    return service.K, np.asarray(service.r), np.asarray(service.R), np.asarray(service.gamma), service.exit_probs


def _eval(X: np.ndarray, lam: float, params: FluidParams, phase: bool) -> tuple[np.ndarray, float]:
    K, r, R, gamma, exitp = _service_arrays(params.service if phase else None)
    dx = np.empty_like(X)
    chi = _k.rhs(X, float(lam), float(params.mu), float(params.nu), params.B, K, r, R, gamma, exitp, dx)
    return dx, chi


# -- exponential service -----------------------------------------------------

def assignment_probs(s: FluidState, lam: float, nu: float) -> np.ndarray:
    """Fractions (p_0, ..., p_B) of arrivals joining servers with 0, ..., B tasks.

    Overflow that finds no busy server (q_1 = 0 and u = 0) is not assigned to
    any level, so the vector then sums to p_0 only.
    """
    if not lam > 0:
        raise ValueError("arrival rate must be positive")
    _check_domain(s)
    q = s.levels
    B = q.shape[0]
    q2 = q[1] if B > 1 else 0.0
    p = np.zeros(B + 1)
    if s.u > TOL_U:
        p[0] = 1.0
        return p
    p[0] = min((s.delta1 * nu + q[0] - q2) / lam, 1.0)
    if q[0] > 0:
        diffs = q - np.append(q[1:], 0.0)
        p[1:] = (1.0 - p[0]) * diffs / q[0]
    return p


def fluid_rhs(s: FluidState, t: float, params: FluidParams) -> np.ndarray:
    """Time derivative of ``[q_1..q_B, delta0, delta1]``."""
    if s.is_phase:
        return fluid_rhs_phase(s, t, params)
    _check_domain(s)
    return _eval(s.to_vector(), params.lam(t), params, phase=False)[0]


def setup_rate(s: FluidState, t: float, params: FluidParams) -> float:
    """Rate at which setups are initiated (the integrand of xi)."""
    _check_domain(s)
    if s.is_phase:
        return _eval(s.to_vector(), params.lam(t), params, phase=True)[1]
    return _eval(s.to_vector(), params.lam(t), params, phase=False)[1]


# -- phase-type service ------------------------------------------------------

def assignment_probs_phase(s: FluidState, lam: float, nu: float, d: PhaseTypeService) -> np.ndarray:
    """Matrix ``p[i, j]``: fraction of arrivals joining a server with ``i`` tasks
    whose task in service is (or will start) in phase ``j``."""
    _check_domain(s)
    q = s.q
    B, K = q.shape
    q_next = np.vstack([q[1:], np.zeros((1, K))])
    p = np.zeros((B + 1, K))
    if s.u > TOL_U:
        p[0] = d.r
        return p
    freed = float(np.sum((q[0] - q_next[0]) * d.gamma * d.exit_probs))
    s0 = min((s.delta1 * nu + freed) / lam, 1.0)
    p[0] = s0 * d.r
    total = q[0].sum()
    if total > 0:
        p[1:] = (1.0 - s0) * (q - q_next) / total
    return p


def fluid_rhs_phase(s: FluidState, t: float, params: FluidParams) -> np.ndarray:
    """Time derivative of ``[q_{i,j} (row-major), delta0, delta1]``.

    A level-i phase-j count grows with arrivals routed there, with phase
    changes k -> j at level >= i, and with completions at level >= i + 1 whose
    next task starts in phase j; it shrinks with every phase-j completion.
    """
    if params.service is None:
        raise ValueError("phase-type vector field needs a phase-type service")
    if not s.is_phase:
        s = FluidState(s.q[:, None], s.delta0, s.delta1)
    _check_domain(s)
    return _eval(s.to_vector(), params.lam(t), params, phase=True)[0]


# -- integration -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FluidTrajectory:
    """Samples of an integrated fluid path on a uniform time grid.

    ``x`` holds packed states row by row; ``xi`` is the cumulative
    setup-initiation integral.
    """

    t: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    B: int
    K: int | None = None

    def __len__(self):
        return len(self.t)

    def state(self, k: int) -> FluidState:
        return FluidState.from_vector(self.x[k], self.B, self.K)

    @property
    def final(self) -> FluidState:
        return self.state(-1)

    @property
    def levels(self) -> np.ndarray:
        """Per-level fractions q_i, summed over phases for phase-type paths."""
        if self.K is None:
            return self.x[:, :self.B]
        return self.x[:, :self.B * self.K].reshape(len(self.t), self.B, self.K).sum(axis=2)

    @property
    def delta0(self) -> np.ndarray:
        return self.x[:, -2]

    @property
    def delta1(self) -> np.ndarray:
        return self.x[:, -1]

    @property
    def u(self) -> np.ndarray:
        return 1.0 - self.levels[:, 0] - self.delta0 - self.delta1


def _integrate_batch(X0: np.ndarray, params: FluidParams, horizon: float, dt: float,
                     sample_interval: float | None = None):
    n_steps = int(round(horizon / dt))
    if n_steps < 1 or abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a whole number of steps of {dt}")
    every = 1 if sample_interval is None else int(round(sample_interval / dt))
    if every < 1 or abs(every * dt - (sample_interval or dt)) > 1e-9 * max(1.0, every * dt):
        raise ValueError("sample_interval must be a whole number of steps")
    B = params.B
    X0, moved = project_rows(X0, B, params.K)
    if np.any(moved > PROJECTION_TOL):
        raise DivergenceError("initial state is outside the occupancy space")
    kind, a, b = _profile_code(params.lam)
    K, r, R, gamma, exitp = _service_arrays(params.service)
    xs, xis, bad_step, bad_row = _k.integrate(
        np.ascontiguousarray(X0), n_steps, float(dt), every, kind, a, b, float(params.mu), float(params.nu),
        B, K, r, R, gamma, exitp, PROJECTION_TOL, KINK_TOL, MAX_HALVINGS)
    if bad_step >= 0:
        raise DivergenceError(f"step {bad_step} (t={bad_step * dt:.6g}, row {bad_row}): state left the "
                              f"occupancy space by more than {PROJECTION_TOL:g} even after "
                              f"{MAX_HALVINGS} step halvings")
    ts = np.arange(xs.shape[0]) * (every * dt)
    ts[-1] = n_steps * dt
    return ts, xs, xis


def integrate_fluid(initial: FluidState, params: FluidParams, horizon: float,
                    dt: float = DEFAULT_DT, sample_interval: float | None = None) -> FluidTrajectory:
    """Fixed-step RK4 with projection onto the occupancy space after every step.

    A step that crosses a kink of the vector field (u or delta0 reaching zero)
    overshoots the boundary by O(dt); such steps are redone with 2, 4, ...
    substeps until the overshoot is within the projection tolerance.
    ``sample_interval`` (a multiple of ``dt``) thins the recorded grid; by
    default every step is kept.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if params.service is not None and not initial.is_phase:
        if params.K != 1:
            raise ValueError("phase-type model needs a B x K initial state")
        initial = FluidState(initial.q[:, None], initial.delta0, initial.delta1)
    if params.service is None and initial.is_phase:
        raise ValueError("exponential model needs a vector initial state")
    if initial.B != params.B:
        raise ValueError(f"initial state has {initial.B} levels, params say {params.B}")
    ts, xs, xis = _integrate_batch(initial.to_vector()[None, :], params, horizon, dt, sample_interval)
    return FluidTrajectory(ts, xs[:, 0, :], xis[:, 0], params.B, params.K)


# -- fixed points and closed forms ------------------------------------------

def fixed_point(lam: float, B: int = DEFAULT_BUFFER) -> FluidState:
    """Unique equilibrium for constant load ``lam``: a fraction ``lam`` of servers
    hold exactly one task, everyone else is off. Does not depend on mu or nu."""
    if not 0 < lam < 1:
        raise NoFixedPoint(f"no fixed point for load {lam}; need 0 < lam < 1")
    q = np.zeros(B)
    q[0] = lam
    return FluidState(q, 1.0 - lam, 0.0)


def fixed_point_phase(lam: float, d: PhaseTypeService, B: int = DEFAULT_BUFFER) -> FluidState:
    if not 0 < lam < 1:
        raise NoFixedPoint(f"no fixed point for load {lam}; need 0 < lam < 1")
    q = np.zeros((B, d.K))
    q[0] = d.eta[1:] * lam / (d.eta[0] * d.gamma)
    return FluidState(q, 1.0 - lam, 0.0)


def _expm1_ratio(z: float) -> float:
    return 1.0 if z == 0 else math.expm1(z) / z


def jiq_closed_form(t: float, lam: float, mu: float) -> tuple[float, float]:
    """Busy fraction q_1(t) and idle-on fraction y(t) from an all-idle-on start
    while no setups occur.

    y(t) = [(lam + mu - 1) e^{-mu t} - lam e^{-t}] / (mu - 1)
         = e^{-mu t} - lam t e^{-t} * expm1(z) / z,  z = (1 - mu) t,
    which stays finite at mu = 1 (limit e^{-t} (1 - lam t)).
    """
    q1 = lam * -math.expm1(-t)
    y = math.exp(-mu * t) - lam * t * math.exp(-t) * _expm1_ratio((1.0 - mu) * t)
    return q1, y


# -- global stability --------------------------------------------------------

@dataclass
class StabilityReport:
    n_initials: int
    converged: int
    worst_distance: float
    worst_initial: FluidState
    distances: np.ndarray = field(repr=False)
    tol: float = 1e-3

    @property
    def all_converged(self) -> bool:
        return self.converged == self.n_initials


def random_states(n: int, B: int = DEFAULT_BUFFER, K: int | None = None,
                  rng: np.random.Generator | None = None) -> list[FluidState]:
    """States drawn uniformly from the occupancy space.

    A Dirichlet(1, ..., 1) split of unit mass over (exact-level tiers, delta0,
    delta1, u); q is the tail sum over tiers, so it is monotone by construction.
    """
    rng = rng or np.random.default_rng()
    k = K or 1
    w = rng.dirichlet(np.ones(B * k + 3), size=n)
    tiers = w[:, :B * k].reshape(n, B, k)
    q = np.cumsum(tiers[:, ::-1], axis=1)[:, ::-1]
    out = []
    for row in range(n):
        qq = q[row, :, 0] if K is None else q[row]
        out.append(FluidState(qq, w[row, B * k], w[row, B * k + 1]))
    return out


def _distance(X: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.max(np.abs(X - target), axis=-1)


def stability_sweep(params: FluidParams, n_initials: int = 100, horizon: float = 2000.0,
                    tol: float = 1e-3, seed: int = 0, dt: float = 1e-2,
                    initials: Sequence[FluidState] | None = None) -> StabilityReport:
    """Integrate many initial states together and measure how close each ends to
    the fixed point. ``initials`` overrides the random draw."""
    if not isinstance(params.lam, Constant) or not params.lam.rate < 1:
        raise ValueError("stability sweep needs a constant load below 1")
    lam = params.lam.rate
    target = (fixed_point(lam, params.B) if params.service is None
              else fixed_point_phase(lam, params.service, params.B)).to_vector()
    if initials is None:
        initials = random_states(n_initials, params.B, params.K, np.random.default_rng(seed))
    X0 = np.stack([(s if s.is_phase or params.K is None else FluidState(s.q[:, None], s.delta0, s.delta1)).to_vector()
                   for s in initials])
    try:
        _, xs, _ = _integrate_batch(X0, params, horizon, dt, sample_interval=horizon)
    except DivergenceError as exc:
        # find the offender by re-running rows one at a time
        for s, x0 in zip(initials, X0):
            try:
                _integrate_batch(x0[None, :], params, horizon, dt, sample_interval=horizon)
            except DivergenceError:
                raise DivergenceError(f"{exc} (initial state {s!r})") from None
        raise
    dist = _distance(xs[-1], target)
    worst = int(np.argmax(dist))
    return StabilityReport(len(initials), int(np.sum(dist <= tol)), float(dist[worst]),
                           initials[worst], dist, tol)
