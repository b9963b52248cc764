import numpy as np
import pytest

from tabsim.core import Constant, FluidState, Mode, PhaseTypeService, Sinusoid
from tabsim.simulate import (
    ARRIVAL,
    CentralizedSimulation,
    SimConfig,
    SimulationError,
    TokenSimulation,
    make_simulation,
    run_delayedoff,
    run_simulation,
    sample_phase_path,
    sample_service,
)

QUIET = Constant(1e-12)  # effectively no arrivals


def fractions(n, busy=0, off=0, setup=0, B=10):
    q = np.zeros(B)
    q[0] = busy / n
    return FluidState(q, off / n, setup / n)


class TestTokenHandlers:
    def test_single_arrival_goes_green(self):
        sim = make_simulation(SimConfig(2, Constant(1e-6), mu=1e-9, nu=1.0, horizon=10))
        t, kind, _ = sim.step()
        assert kind == ARRIVAL
        f = sim.fluid_state()
        assert f.q1 == 0.5 and f.u == 0.5
        assert len(sim.members[Mode.BUSY]) == 1

    def test_standby_expiry_path(self):
        res = run_simulation(SimConfig(1, QUIET, mu=1e6, nu=1.0, horizon=1.0, check_invariants=True))
        last = res.samples[-1]
        assert last.fluid.delta0 == 1.0
        assert (last.green, last.red) == (1, 1)

    def test_busy_fallback_starts_one_setup(self):
        # 2 busy, 1 off, nobody idle-on
        cfg = SimConfig(3, QUIET, mu=1e-9, nu=1e-9, horizon=1.0, initial=fractions(3, busy=2, off=1))
        sim = TokenSimulation(cfg)
        red = list(sim.members[Mode.IDLE_OFF])
        sim.tabs_on_arrival(0.0)
        assert sorted(sim.qlen) == [0, 1, 2]
        assert sim.mode[red[0]] == Mode.SETUP
        assert sim.n_setups == 1

    def test_setups_never_aborted(self):
        cfg = SimConfig(2, QUIET, mu=1e-9, nu=1e-9, horizon=1.0, initial=fractions(2, busy=1, setup=1))
        sim = TokenSimulation(cfg)
        orange = sim.members[Mode.SETUP][0]
        sim.tabs_on_arrival(0.0)
        assert sim.mode[orange] == Mode.SETUP and sim.n_setups == 0
        assert max(sim.qlen) == 2

    def test_full_buffer_drops_but_triggers_setup(self):
        cfg = SimConfig(2, QUIET, mu=1e-9, nu=1e-9, horizon=1.0, buffer=1, initial=fractions(2, busy=1, off=1, B=1))
        sim = TokenSimulation(cfg)
        sim.tabs_on_arrival(0.0)
        assert sim.n_drops == 1 and sim.n_setups == 1

    def test_no_busy_no_green_drops(self):
        cfg = SimConfig(2, QUIET, mu=1e-9, nu=1e-9, horizon=1.0, initial="idle_off")
        sim = TokenSimulation(cfg)
        sim.tabs_on_arrival(0.0)
        assert sim.n_drops == 1 and sim.degenerate_drops == 1 and sim.n_setups == 1

    def test_stale_standby_ignored(self):
        sim = TokenSimulation(SimConfig(1, QUIET, mu=1.0, nu=1.0, horizon=1.0))
        old = sim.epoch[0]
        sim.tabs_on_arrival(0.0)        # re-busies the server
        sim.tabs_on_standby_expiry(0, old)
        assert sim.mode[0] == Mode.BUSY

    def test_setup_complete_needs_setup(self):
        sim = TokenSimulation(SimConfig(1, QUIET, mu=1.0, nu=1.0, horizon=1.0))
        with pytest.raises(SimulationError):
            sim.tabs_on_setup_complete(0, 0.0)

    def test_departure_from_idle_is_error(self):
        sim = TokenSimulation(SimConfig(1, QUIET, mu=1.0, nu=1.0, horizon=1.0))
        with pytest.raises(SimulationError):
            sim.tabs_on_departure(0, 0.0)

    def test_setup_complete_goes_green(self):
        cfg = SimConfig(1, QUIET, mu=1e-9, nu=1.0, horizon=1.0, initial=fractions(1, setup=1))
        sim = TokenSimulation(cfg)
        g = sim.n_green
        sim.tabs_on_setup_complete(0, 0.5)
        assert sim.mode[0] == Mode.IDLE_ON and sim.n_green == g + 1


class TestJiq:
    def test_never_off(self):
        res = run_simulation(SimConfig(100, 0.7, 0.0, 1.0, policy="jiq", horizon=50))
        assert all(s.fluid.delta0 == 0 and s.fluid.delta1 == 0 for s in res.samples)

    def test_rejects_off_start(self):
        with pytest.raises(ValueError):
            SimConfig(10, 0.3, 0.0, 1.0, policy="jiq", initial="idle_off")


class TestDelayedOff:
    def test_completion_cancels_setup(self):
        cfg = SimConfig(2, QUIET, mu=1e-9, nu=1e-9, policy="delayedoff", horizon=1.0,
                        initial=fractions(2, busy=1, off=1))
        sim = CentralizedSimulation(cfg)
        sim.on_arrival(0.1)
        off = sim.members[Mode.SETUP][0]
        busy = sim.members[Mode.BUSY][0]
        sim.on_completion(busy, 0.2)
        assert sim.mode[off] == Mode.IDLE_OFF
        assert sim.mode[busy] == Mode.BUSY and not sim.waiting

    def test_setup_kept_for_second_task(self):
        cfg = SimConfig(2, QUIET, mu=1e-9, nu=1e-9, policy="delayedoff", horizon=1.0,
                        initial=fractions(2, busy=1, off=1))
        sim = CentralizedSimulation(cfg)
        sim.on_arrival(0.1)
        sim.on_arrival(0.15)
        x = sim.members[Mode.SETUP][0]
        sim.on_completion(sim.members[Mode.BUSY][0], 0.2)
        assert sim.mode[x] == Mode.SETUP
        assert len(sim.waiting) == 1 and sim.owner_of[x] == sim.waiting[0][0]

    def test_light_load_plain_queue(self):
        res = run_delayedoff(SimConfig(50, 0.01, 0.1, 0.1, policy="delayedoff", horizon=100))
        assert res.samples[-1].drops == 0
        assert all(s.waiting >= 0 for s in res.samples)

    def test_work_conserving(self):
        cfg = SimConfig(30, 0.8, 0.5, 0.3, policy="delayedoff", horizon=30, seed=2)
        sim = make_simulation(cfg)
        for _ in range(3000):
            sim.step()
            assert not (sim.waiting and sim.members[Mode.IDLE_ON])

    def test_needs_exponential(self):
        with pytest.raises(ValueError):
            SimConfig(10, 0.3, 0.1, 0.1, policy="delayedoff",
                      service=PhaseTypeService.hyperexponential([0.5, 0.5], [1, 1]))


class TestService:
    def test_unit_exponential_mean(self):
        rng = np.random.default_rng(5)
        x = np.array([sample_service(None, rng) for _ in range(10**6)])
        assert abs(x.mean() - 1) <= 0.01
        assert np.all(x > 0)

    def test_hyperexponential_moments(self):
        d = PhaseTypeService.hyperexponential([0.75, 0.25], [2.0, 0.4])
        rng = np.random.default_rng(11)
        x = np.array([sample_service(d, rng) for _ in range(200_000)])
        assert abs(x.mean() - 1) <= 0.01
        assert x.var() == pytest.approx(2.5, rel=0.05)

    def test_erlang_path(self):
        d = PhaseTypeService.erlang(2, 2.0)
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert [j for j, _ in sample_phase_path(d, rng)] == [0, 1]


class TestRuns:
    def test_deterministic(self):
        cfg = SimConfig(200, Sinusoid(0.3, 0.2, 10.0), 0.1, 0.1, horizon=40, seed=9)
        a, b = run_simulation(cfg), run_simulation(cfg)
        assert [s.fluid for s in a.samples] == [s.fluid for s in b.samples]
        np.testing.assert_array_equal(a.tasks.start, b.tasks.start)

    def test_seed_changes_path(self):
        a = run_simulation(SimConfig(200, 0.3, 0.1, 0.1, horizon=20, seed=1))
        b = run_simulation(SimConfig(200, 0.3, 0.1, 0.1, horizon=20, seed=2))
        assert a.samples[-1].arrivals != b.samples[-1].arrivals

    def test_thinning_rate(self):
        res = run_simulation(SimConfig(500, Sinusoid(0.3, 0.2, 10.0), 0.5, 0.5, horizon=20 * np.pi * 4,
                                       record_tasks=False))
        last = res.samples[-1]
        assert last.arrivals / (500 * last.t) == pytest.approx(0.3, rel=0.02)

    def test_sample_grid_and_records(self):
        samples, tasks = run_simulation(SimConfig(100, 0.3, 0.1, 0.1, horizon=10, sample_interval=0.5))
        assert [s.t for s in samples] == pytest.approx(np.arange(0, 10.01, 0.5).tolist())
        for r in tasks:
            if not r.dropped:
                assert r.arrival_time <= r.service_start_time
                if r.departure_time is not None:
                    assert r.service_start_time <= r.departure_time

    def test_fraction_start(self):
        init = fractions(100, busy=30, off=60, setup=5)
        res = run_simulation(SimConfig(100, QUIET, 1e-9, 1e-9, horizon=1e-6, initial=init))
        f = res.samples[0].fluid
        assert (f.q1, f.delta0, f.delta1) == (0.3, 0.6, 0.05)

    def test_invalid_config(self):
        with pytest.raises(ValueError, match="standby rate must be positive"):
            SimConfig(10, 0.3, 0.0, 0.1)
        with pytest.raises(ValueError):
            SimConfig(10, 0.3, 0.1, 0.1, initial=fractions(10, busy=6, off=6))
