import numpy as np
import pytest

from tabsim.core import (
    Constant,
    DispatcherLedger,
    DivergenceError,
    EnergyParams,
    FluidState,
    InvalidPhaseType,
    Mode,
    PhaseTypeService,
    ServerState,
    Sinusoid,
    Table,
    embedded_stationary,
    phase_type_mean,
    project_to_E,
    validate_fluid_state,
)


def q10(*head):
    q = np.zeros(10)
    q[:len(head)] = head
    return q


class TestValidate:
    def test_fixed_point_is_valid(self):
        assert validate_fluid_state(FluidState(q10(0.3), 0.7, 0.0)) == []

    def test_monotonicity(self):
        assert "q_2 > q_1" in validate_fluid_state(FluidState(q10(0.2, 0.5), 0.0, 0.0))

    def test_mass(self):
        assert "mass 1.2 > 1" in validate_fluid_state(FluidState(q10(0.6), 0.5, 0.1))

    def test_range(self):
        assert validate_fluid_state(FluidState(q10(0.2), -0.1, 0.0))


class TestServerState:
    def test_busy_needs_tasks(self):
        with pytest.raises(ValueError):
            ServerState(Mode.BUSY, 0)
        with pytest.raises(ValueError):
            ServerState(Mode.IDLE_OFF, 2)
        assert ServerState(Mode.BUSY, 3).queue_len == 3

    def test_ledger_partition(self):
        led = DispatcherLedger(frozenset({0}), frozenset({1}), frozenset({2}), frozenset())
        assert led.partition_errors(3) == []
        assert led.matches([ServerState(Mode.IDLE_ON), ServerState(Mode.BUSY, 1), ServerState(Mode.IDLE_OFF)])
        bad = DispatcherLedger(frozenset({0, 1}), frozenset({1}), frozenset({2}), frozenset())
        assert bad.partition_errors(3)


class TestPhaseType:
    def test_hyperexponential_eta(self):
        d = PhaseTypeService([0.75, 0.25], np.zeros((2, 2)), [2.0, 0.4])
        np.testing.assert_allclose(embedded_stationary(d), [0.5, 0.375, 0.125], atol=1e-12)
        assert phase_type_mean(d) == pytest.approx(1.0, abs=1e-9)

    def test_single_phase(self):
        np.testing.assert_allclose(embedded_stationary(PhaseTypeService.exponential(1.0)), [0.5, 0.5])
        assert phase_type_mean(PhaseTypeService.exponential(1.0)) == pytest.approx(1.0)
        # the formula's value, the reciprocal of the Exp(2) mean
        assert phase_type_mean(PhaseTypeService.exponential(2.0)) == pytest.approx(2.0)
        assert PhaseTypeService.exponential(2.0).true_mean() == pytest.approx(0.5)

    def test_erlang_eta(self):
        np.testing.assert_allclose(embedded_stationary(PhaseTypeService.erlang(2, 2.0)), [1 / 3] * 3, atol=1e-12)

    def test_embedded_equations(self):
        d = PhaseTypeService([0.2, 0.5, 0.3], [[0, 0.5, 0.1], [0.2, 0, 0.3], [0, 0.4, 0]], [1.0, 3.0, 0.5])
        eta = embedded_stationary(d)
        resid = eta[0] * d.r + d.R.T @ eta[1:] - eta[1:]
        assert np.max(np.abs(resid)) <= 1e-12
        assert eta.sum() == pytest.approx(1.0, abs=1e-12)

    def test_normalization(self):
        d = PhaseTypeService.build([0.2, 0.8], [[0, 0.5], [0.1, 0]], [4.0, 0.3])
        assert phase_type_mean(d) == pytest.approx(1.0, abs=1e-9)
        assert d.true_mean() == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("r, R, gamma", [
        ([0.5, 0.4], np.zeros((2, 2)), [1, 1]),          # r does not sum to 1
        ([1.0, 0.0], [[0, 1], [1, 0]], [1, 1]),          # never exits
        ([1.0, 0.0], [[0.5, 0], [0, 0]], [1, 1]),        # self-transition
        ([1.0], [[0.0]], [0.0]),                         # zero rate
    ])
    def test_invalid(self, r, R, gamma):
        with pytest.raises(InvalidPhaseType):
            PhaseTypeService(r, R, gamma)


class TestProjection:
    def test_identity_on_E(self):
        s = FluidState(q10(0.4, 0.1), 0.3, 0.1)
        assert project_to_E(s) == s

    def test_monotone_repair(self):
        s = project_to_E(FluidState(q10(0.3, 0.3 + 1e-9), 0.5, 0.0))
        assert s.q[1] == s.q[0]

    def test_clamp(self):
        assert project_to_E(FluidState(q10(0.3), -1e-9, 0.0)).delta0 == 0.0

    def test_far_state_raises(self):
        with pytest.raises(DivergenceError):
            project_to_E(FluidState(q10(0.3, 0.5), 0.0, 0.0))


class TestProfiles:
    def test_rates(self):
        assert Constant(0.3)(5.0) == 0.3
        s = Sinusoid(0.3, 0.2, 10.0)
        assert s(0.0) == pytest.approx(0.3)
        assert s.max_rate == pytest.approx(0.5)
        t = Table([0.0, 10.0], [0.2, 0.4])
        assert t(5.0) == 0.2 and t(10.0) == 0.4 and t.max_rate == 0.4

    def test_invalid(self):
        with pytest.raises(ValueError):
            Constant(0.0)
        with pytest.raises(ValueError):
            Sinusoid(0.2, 0.3, 10.0)


def test_energy_params():
    assert EnergyParams(200, 140).f == pytest.approx(0.7)
    with pytest.raises(ValueError):
        EnergyParams(100, 140)
