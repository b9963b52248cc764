import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from tabsim.core import (
    EnergyParams,
    FluidState,
    InvalidPhaseType,
    Mode,
    PhaseTypeService,
    embedded_stationary,
    phase_type_mean,
    project_to_E,
    validate_fluid_state,
)
from tabsim.fluid import (
    FluidParams,
    FluidTrajectory,
    assignment_probs,
    fixed_point,
    fluid_rhs,
    fluid_rhs_phase,
    integrate_fluid,
    random_states,
)
from tabsim.metrics import energy_per_server, energy_wastage, fluid_mean_wait, jiq_energy, trajectory_gap
from tabsim.simulate import SimConfig, make_simulation, run_simulation

E = EnergyParams(200.0, 140.0)
B = 6
SLOW = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def states(draw, B=B):
    """Points of the occupancy space, built from a mass split like the sweep uses."""
    w = np.array(draw(st.lists(st.floats(0, 1), min_size=B + 3, max_size=B + 3)))
    if draw(st.booleans()):
        w[-1] = 0.0  # u = 0: the overflow branch of the field
    total = w.sum()
    assume(total > 1e-6)
    w = w / total
    q = np.cumsum(w[:B][::-1])[::-1]
    return FluidState(q, w[B], w[B + 1])


@st.composite
def phase_types(draw):
    K = draw(st.integers(1, 4))
    r = np.array(draw(st.lists(st.floats(0.01, 1), min_size=K, max_size=K)))
    r /= r.sum()
    R = np.array(draw(st.lists(st.floats(0, 1), min_size=K * K, max_size=K * K))).reshape(K, K)
    np.fill_diagonal(R, 0.0)
    R *= draw(st.floats(0, 0.9)) / np.maximum(R.sum(axis=1, keepdims=True), 1e-12)
    gamma = draw(st.lists(st.floats(0.05, 20), min_size=K, max_size=K))
    return r, R, gamma


@given(phase_types())
def test_normalized_mean_is_one(spec):
    r, R, gamma = spec
    d = PhaseTypeService.build(r, R, gamma)
    assert phase_type_mean(d) == pytest.approx(1.0, abs=1e-9)
    assert d.true_mean() == pytest.approx(1.0, abs=1e-9)


@given(phase_types())
def test_eta_is_stationary(spec):
    r, R, gamma = spec
    d = PhaseTypeService(r, R, gamma)
    eta = embedded_stationary(d)
    assert np.all(eta >= -1e-15) and abs(eta.sum() - 1) <= 1e-12
    assert np.max(np.abs(eta[0] * d.r + d.R.T @ eta[1:] - eta[1:])) <= 1e-12


@given(states(), st.lists(st.floats(-1e-7, 1e-7), min_size=B + 2, max_size=B + 2))
def test_projection_idempotent(s, noise):
    x = s.to_vector() + np.array(noise)
    p = project_to_E(FluidState.from_vector(x, B))
    assert validate_fluid_state(p) == []
    assert project_to_E(p) == p


@given(states(), st.floats(0.01, 2.0), st.floats(0.01, 2.0))
def test_assignment_is_distribution(s, lam, nu):
    p = assignment_probs(s, lam, nu)
    assert np.all(p >= 0)
    if s.q1 > 0 or s.u > 1e-12:
        assert p.sum() == pytest.approx(1.0, abs=1e-12)


@given(states(), st.floats(0.01, 0.99), st.floats(0.0, 1.0), st.floats(0.01, 1.0))
def test_q1_cannot_fall_when_load_covers_departures(s, lam, mu, nu):
    q = s.levels
    assume(q[0] - q[1] <= lam)
    assert fluid_rhs(s, 0.0, FluidParams(lam, mu, nu, B=B))[0] >= -1e-15


@given(states(), st.floats(0.01, 0.99), st.floats(0.0, 1.0), st.floats(0.01, 1.0))
def test_k1_phase_type_reduces_to_exponential(s, lam, mu, nu):
    a = fluid_rhs(s, 0.0, FluidParams(lam, mu, nu, B=B))
    unit = PhaseTypeService.exponential(1.0)
    b = fluid_rhs_phase(FluidState(s.q[:, None], s.delta0, s.delta1), 0.0, FluidParams(lam, mu, nu, B=B, service=unit))
    np.testing.assert_allclose(a, b, atol=1e-15, rtol=0)


@given(st.floats(0.001, 0.999))
def test_fixed_point_metrics(lam):
    fp = fixed_point(lam)
    assert fluid_mean_wait(fp, lam) == 0
    assert abs(energy_wastage(energy_per_server(fp, E), lam, E)) <= 1e-12
    assert jiq_energy(lam, E) - energy_per_server(fp, E) == pytest.approx((1 - lam) * E.p_idle, abs=1e-12)


def _traj(X):
    return FluidTrajectory(np.arange(len(X), dtype=float), X, np.zeros(len(X)), B)


@given(st.lists(states(), min_size=3, max_size=3), st.lists(states(), min_size=3, max_size=3),
       st.lists(states(), min_size=3, max_size=3))
def test_gap_is_a_metric(a, b, c):
    A, Bt, C = (_traj(np.array([s.to_vector() for s in xs])) for xs in (a, b, c))
    assert trajectory_gap(A, A) == 0
    assert trajectory_gap(A, Bt) == trajectory_gap(Bt, A) >= 0
    assert trajectory_gap(A, C) <= trajectory_gap(A, Bt) + trajectory_gap(Bt, C) + 1e-15


@SLOW
@given(st.integers(0, 2**32), st.floats(0.05, 0.95), st.floats(0.05, 2.0), st.floats(0.05, 2.0))
def test_trajectories_stay_in_E(seed, lam, mu, nu):
    s = random_states(1, B, None, np.random.default_rng(seed))[0]
    tr = integrate_fluid(s, FluidParams(lam, mu, nu, B=B), 5.0, dt=1e-2, sample_interval=0.1)
    assert np.all(np.diff(tr.xi) >= 0) and tr.xi[0] == 0
    for k in range(len(tr)):
        st_k = tr.state(k)
        assert validate_fluid_state(st_k) == []
        assert st_k.q1 + st_k.delta0 + st_k.delta1 + st_k.u == pytest.approx(1.0, abs=1e-9)


@SLOW
@given(st.integers(0, 2**32), st.sampled_from(["tabs", "jiq", "delayedoff"]), st.integers(1, 40),
       st.floats(0.1, 1.5), st.integers(1, 4))
def test_simulator_invariants(seed, policy, n, lam, buffer):
    cfg = SimConfig(n, lam, 0.7, 0.4, policy=policy, buffer=buffer, horizon=15, sample_interval=0.5, seed=seed,
                    check_invariants=True)
    res = run_simulation(cfg)
    for s in res.samples:
        assert validate_fluid_state(s.fluid) == []
        assert s.green + s.red <= 2 * s.arrivals + 2 * n
        assert s.departures <= s.arrivals - s.drops
    if policy == "jiq":
        assert all(s.fluid.delta0 == 0 == s.fluid.delta1 for s in res.samples)
    sim = make_simulation(cfg)
    for _ in range(200):
        sim.step()
        counts = [sum(m == mode for m in sim.mode) for mode in Mode]
        assert sum(counts) == n and counts[Mode.BUSY] == sum(q >= 1 for q in sim.qlen)


@SLOW
@given(st.integers(0, 2**32))
def test_same_seed_same_trace(seed):
    cfg = SimConfig(30, 0.5, 0.3, 0.3, horizon=10, seed=seed)
    a, b = run_simulation(cfg), run_simulation(cfg)
    assert [(s.fluid, s.arrivals, s.green) for s in a.samples] == [(s.fluid, s.arrivals, s.green) for s in b.samples]
