"""Unit tests for meanfield."""

import math
from types import SimpleNamespace
from typing import Any

import numpy as np
import pytest

from metapop.chain import chain_rates, stationary_distribution
from metapop.exceptions import (
    ComparisonViolated,
    IntegrationDiverged,
    InvalidArgument,
    InvalidModel,
    NumericalError,
)
from metapop.meanfield import (
    IntegrationControls,
    TruncatedState,
    comparison_bound_check,
    comparison_envelope,
    convergence_diagnose,
    extinction_target,
    integrate,
    mean_ode_check,
    rhs,
    sample_rows,
    scalar_comparison,
    two_truncation_distance,
)
from metapop.model import RateModel
from metapop.threshold import solve_fixed_point

from .common import N_SMALL, N_TEST


class TestTruncatedState:
    """Test initial laws."""

    def test_point_mass(self) -> None:
        """Test delta_j."""
        state = TruncatedState.point_mass(5, 2)
        assert state.n == 5
        assert state.mean == 2.0
        with pytest.raises(InvalidArgument):
            TruncatedState.point_mass(5, 6)

    def test_uniform(self) -> None:
        """Test the uniform law on 0..K."""
        state = TruncatedState.uniform(10, 4)
        assert state.mean == pytest.approx(2.0)
        assert state.p.sum() == pytest.approx(1.0)

    def test_from_distribution(self) -> None:
        """Test cutting and renormalizing."""
        state = TruncatedState.from_distribution(np.array([0.5, 0.25, 0.25]), 1)
        assert state.p == pytest.approx([2.0 / 3.0, 1.0 / 3.0])


class TestRightSide:
    """Test the truncated vector field."""

    def test_extinction_is_stationary(self, logistic: RateModel) -> None:
        """Test e0 is an equilibrium."""
        assert np.all(rhs(logistic, TruncatedState.point_mass(10, 0)) == 0.0)

    def test_conserves_mass(self, logistic: RateModel) -> None:
        """Test the derivative sums to zero."""
        dp = rhs(logistic, TruncatedState.uniform(20, 10))
        assert abs(dp.sum()) < 1e-12

    def test_catastrophes(self, logistic: RateModel) -> None:
        """Test mass flows from delta_1 to 0 at rate d_1 + gamma + nu."""
        dp = rhs(logistic, TruncatedState.point_mass(10, 1))
        assert dp[0] == pytest.approx(1.0 + 1.0 + 0.5)


class TestIntegrate:
    """Test integration of the truncated system."""

    def test_extinct_start(self, logistic: RateModel) -> None:
        """Test e0 stays put."""
        trajectory = integrate(logistic, TruncatedState.point_mass(N_SMALL, 0), 5.0)
        assert np.all(trajectory.s == 0.0)
        assert trajectory.final_state().p[0] == 1.0

    def test_mass(self, logistic: RateModel) -> None:
        """Test mass is conserved and raw solver entries stay nonnegative."""
        trajectory = integrate(
            logistic,
            TruncatedState.point_mass(N_SMALL, 1),
            20.0,
            IntegrationControls(sample_dt=0.5),
        )
        assert trajectory.t[-1] == pytest.approx(20.0)
        assert trajectory.t.size == 41
        assert float(trajectory.mass_defect.max()) < 1e-9
        assert trajectory.min_entry >= -1e-10
        assert trajectory.clamped_mass < 1e-8
        assert len(trajectory.samples) == 41

    def test_undershoot(self, logistic: RateModel, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test a solver output dipping below zero is a numerical failure."""

        def fake_solve_ivp(*_args: Any, **kwargs: Any) -> SimpleNamespace:
            times = kwargs["t_eval"]
            y = np.zeros((N_SMALL + 1, times.size))
            y[0] = 1.0 + 1e-6
            y[1] = -1e-6
            return SimpleNamespace(status=0, t=times, y=y, nfev=1, message="")

        monkeypatch.setattr("metapop.meanfield.solve_ivp", fake_solve_ivp)
        with pytest.raises(NumericalError):
            integrate(logistic, TruncatedState.point_mass(N_SMALL, 1), 1.0)

    def test_mean_equation(self, logistic: RateModel) -> None:
        """Test ds/dt = sum j b_j p_j - sum j d_j p_j - nu s."""
        trajectory = integrate(
            logistic,
            TruncatedState.point_mass(N_TEST, 1),
            2.0,
            IntegrationControls(sample_dt=1e-3),
        )
        assert mean_ode_check(logistic, trajectory) < 1e-5

    def test_mean_equation_extinct(self, logistic: RateModel) -> None:
        """Test the defect vanishes on e0."""
        trajectory = integrate(logistic, TruncatedState.point_mass(N_SMALL, 0), 1.0)
        assert mean_ode_check(logistic, trajectory) == 0.0

    def test_renormalize(self, logistic: RateModel) -> None:
        """Test renormalized samples sum to one."""
        trajectory = integrate(
            logistic,
            TruncatedState.point_mass(N_SMALL, 1),
            5.0,
            IntegrationControls(renormalize=True),
        )
        assert np.allclose(trajectory.p.sum(axis=1), 1.0, atol=1e-14)

    def test_hypotheses(self, ricker: RateModel, h2_violating: RateModel) -> None:
        """Test (H1) and (H2) are required."""
        for model in (ricker, h2_violating):
            with pytest.raises(InvalidModel):
                integrate(model, TruncatedState.point_mass(N_SMALL, 1), 1.0)

    def test_invalid(self, logistic: RateModel) -> None:
        """Test horizon and initial law are validated."""
        with pytest.raises(InvalidArgument):
            integrate(logistic, TruncatedState.point_mass(N_SMALL, 1), 0.0)
        with pytest.raises(InvalidArgument):
            integrate(logistic, TruncatedState(np.array([0.5, 0.4])), 1.0)

    def test_under_truncated(self, logistic: RateModel) -> None:
        """Test mass piling up at the cap is reported."""
        with pytest.raises(IntegrationDiverged):
            integrate(logistic, TruncatedState.point_mass(3, 1), 10.0)

    def test_two_truncations(self, logistic: RateModel) -> None:
        """Test doubling N does not change the trajectory."""
        distance = two_truncation_distance(
            logistic,
            TruncatedState.point_mass(N_SMALL, 1),
            20.0,
            IntegrationControls(sample_dt=0.5),
        )
        assert distance < 1e-6

    def test_sample_rows(self, logistic: RateModel) -> None:
        """Test rows t, s, mass defect, p_0..p_K."""
        trajectory = integrate(logistic, TruncatedState.point_mass(N_SMALL, 1), 1.0)
        rows = sample_rows(trajectory, 10)
        assert len(rows) == trajectory.t.size
        assert len(rows[0]) == 3 + 11
        assert rows[0][3:5] == [0.0, 1.0]


class TestConvergence:
    """Test convergence to the equilibrium picked by R0."""

    @pytest.mark.parametrize(
        "start",
        [
            TruncatedState.point_mass(N_SMALL, 1),
            TruncatedState.point_mass(N_SMALL, 5),
            TruncatedState.uniform(N_SMALL, 10),
        ],
    )
    def test_persistent(self, logistic: RateModel, start: TruncatedState) -> None:
        """Test p(t) tends to the stationary law at s*."""
        s_star = solve_fixed_point(logistic).s_star
        target = stationary_distribution(chain_rates(logistic, s_star))
        trajectory = integrate(logistic, start, 300.0, IntegrationControls(sample_dt=5.0))
        report = convergence_diagnose(trajectory, target)
        assert report.final_distance < 1e-3
        assert report.mean_error < 1e-3
        assert report.burn_in_time == pytest.approx(60.0)

    def test_extinct(self, subcritical: RateModel) -> None:
        """Test p(t) tends to e0 when R0 < 1."""
        trajectory = integrate(subcritical, TruncatedState.point_mass(N_SMALL, 5), 100.0)
        report = convergence_diagnose(trajectory, extinction_target())
        assert report.final_distance < 1e-4


class TestComparison:
    """Test the scalar comparison bounds."""

    def test_envelope_closed_form(self, constant_linear: RateModel) -> None:
        """Test y(t) = y0 exp(-nu t) when b = d."""
        times = np.linspace(0.0, 4.0, 9)
        envelope = comparison_envelope(constant_linear, 2.0, times)
        assert envelope == pytest.approx(2.0 * np.exp(-0.5 * times), rel=1e-8)
        assert np.all(comparison_envelope(constant_linear, 0.0, times) == 0.0)

    def test_scalar_comparison(self, constant_linear: RateModel) -> None:
        """Test x(t) tends to s / (gamma + nu) for constant rates."""
        solution = scalar_comparison(constant_linear, 1.5, 0.0, 30.0)
        assert solution.at(30.0) == pytest.approx(1.0, rel=1e-6)
        assert solution.at(0.0) == pytest.approx(0.0, abs=1e-15)

    def test_bound_holds(self, logistic: RateModel) -> None:
        """Test trajectories stay below the envelope and s_tilde."""
        for start in (1, 5):
            trajectory = integrate(
                logistic,
                TruncatedState.point_mass(N_SMALL, start),
                30.0,
                IntegrationControls(sample_dt=0.5),
            )
            assert comparison_bound_check(logistic, trajectory)

    def test_bound_violated(self, logistic: RateModel, subcritical: RateModel) -> None:
        """Test a persistent trajectory escapes a subcritical envelope."""
        trajectory = integrate(
            logistic,
            TruncatedState.point_mass(N_SMALL, 5),
            30.0,
            IntegrationControls(sample_dt=0.5),
        )
        with pytest.raises(ComparisonViolated) as excinfo:
            comparison_bound_check(subcritical, trajectory)
        assert excinfo.value.value > excinfo.value.bound
        assert not math.isnan(excinfo.value.time)
