"""Unit tests for chain."""

import math
from typing import Callable

import numpy as np
import pytest

from metapop.chain import (
    TruncationPolicy,
    alpha_heuristic,
    backward_resolvent,
    chain_rates,
    characteristic_function,
    detailed_balance_distribution,
    dominant_eigenvalue_check,
    dominant_profile,
    forward_resolvent,
    g_derivative,
    lambda0,
    linearization_matrix,
    m1_distance,
    mean_G,
    r0,
    r0_upper_bound,
    renewal_identity_oracle,
    resolvent_lower_bound_check,
    spectral_abscissa,
    spectral_report,
    spectral_truncation,
    stationary_distribution,
    transient_mean,
    truncated_generator,
)
from metapop.exceptions import InvalidArgument, InvalidModel
from metapop.model import RateModel

from .common import CLOSED_FORM_LEVELS, R0_CONSTANT_LINEAR


def test_truncation_levels() -> None:
    """Test geometric growth up to the cap."""
    assert list(TruncationPolicy(64, 300).levels()) == [64, 128, 256, 300]
    assert list(TruncationPolicy(64, 64).levels()) == [64]


def test_m1_distance() -> None:
    """Test the occupancy weighted distance."""
    assert m1_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(2.0)
    assert m1_distance(np.array([1.0]), np.array([0.5, 0.0, 0.5])) == pytest.approx(1.5)


class TestChainSpec:
    """Test transition rates of the single patch chain."""

    def test_rates(self, logistic: RateModel) -> None:
        """Test up and down rates."""
        spec = chain_rates(logistic, 1.0)
        assert float(spec.up(0)) == pytest.approx(1.0)
        assert float(spec.up(2)) == pytest.approx(7.0)
        assert float(spec.down(0)) == 0.0
        assert float(spec.down(2)) == pytest.approx(7.0)
        assert spec.kill == 0.5

    def test_truncated(self, logistic: RateModel) -> None:
        """Test nothing leaves the cap state upwards."""
        up, down = chain_rates(logistic, 1.0).truncated_rates(5)
        assert up.size == down.size == 6
        assert up[5] == 0.0
        assert down[5] > 0.0

    def test_invalid(
        self, logistic: RateModel, make_model: Callable[..., RateModel]
    ) -> None:
        """Test negative levels and unnormalized models are refused."""
        with pytest.raises(InvalidArgument):
            chain_rates(logistic, -1.0)
        with pytest.raises(InvalidArgument):
            chain_rates(logistic, math.inf)
        with pytest.raises(InvalidModel):
            chain_rates(make_model("logistic", rho=0.5), 1.0)

    def test_generator_conservative(self, logistic: RateModel) -> None:
        """Test rows of the truncated generator sum to zero."""
        generator = truncated_generator(chain_rates(logistic, 1.0), 30)
        assert np.max(np.abs(np.asarray(generator.sum(axis=1)))) < 1e-12
        assert generator[3, 0] == pytest.approx(0.5)


class TestStationary:
    """Test the stationary law and G."""

    @pytest.mark.parametrize("s", CLOSED_FORM_LEVELS)
    def test_closed_form_mean(self, subcritical: RateModel, s: float) -> None:
        """Test G(s) = s / 2 for b = 1, d = 2, gamma = 1, nu = 0."""
        solution = stationary_distribution(chain_rates(subcritical, s), tol=1e-12)
        assert solution.mean == pytest.approx(s / 2.0, abs=1e-8)
        assert solution.tail_mass < 1e-12
        assert solution.pi.sum() == pytest.approx(1.0)

    def test_closed_form_law(self, subcritical: RateModel) -> None:
        """Test the negative binomial law, pi_0 = (2/3)^s."""
        solution = stationary_distribution(chain_rates(subcritical, 3.0))
        assert solution.pi[0] == pytest.approx((2.0 / 3.0) ** 3, abs=1e-10)

    def test_zero_level(self, logistic: RateModel) -> None:
        """Test without immigration all mass sits at 0."""
        solution = stationary_distribution(chain_rates(logistic, 0.0))
        assert np.array_equal(solution.pi, [1.0])
        assert mean_G(logistic, 0.0) == 0.0

    def test_detailed_balance(self, subcritical: RateModel) -> None:
        """Test the product form agrees with the linear solve."""
        spec = chain_rates(subcritical, 1.0)
        solution = stationary_distribution(spec)
        product = detailed_balance_distribution(spec, solution.n)
        assert np.max(np.abs(product - solution.pi)) < 1e-10

    def test_detailed_balance_needs_no_catastrophes(self, logistic: RateModel) -> None:
        """Test detailed balance is refused with catastrophes."""
        with pytest.raises(InvalidArgument):
            detailed_balance_distribution(chain_rates(logistic, 1.0), 10)

    @pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
    def test_renewal_identity(self, logistic: RateModel, s: float) -> None:
        """Test the regeneration formula agrees with the linear solve."""
        direct = stationary_distribution(chain_rates(logistic, s), tol=1e-13)
        renewal = renewal_identity_oracle(logistic, s, tol=1e-13)
        assert m1_distance(direct.pi, renewal.pi) < 1e-9

    def test_renewal_needs_catastrophes(self, subcritical: RateModel) -> None:
        """Test the regeneration formula needs nu > 0."""
        with pytest.raises(InvalidArgument):
            renewal_identity_oracle(subcritical, 1.0)

    def test_invalid_tolerance(self, logistic: RateModel) -> None:
        """Test tolerances must be positive."""
        with pytest.raises(InvalidArgument):
            stationary_distribution(chain_rates(logistic, 1.0), tol=0.0)

    def test_monotone(self, logistic: RateModel) -> None:
        """Test G is increasing."""
        values = [mean_G(logistic, s) for s in (0.25, 0.5, 1.0, 2.0)]
        assert all(np.diff(values) > 0)

    @pytest.mark.parametrize("name", ["logistic", "table_concave"])
    def test_strictly_concave(self, name: str, request: pytest.FixtureRequest) -> None:
        """Test second differences of G on a uniform grid are negative."""
        model = request.getfixturevalue(name)
        grid = np.linspace(0.0, 4.0, 17)
        values = np.array([mean_G(model, s, tol=1e-12) for s in grid])
        assert np.all(np.diff(values, n=2) < 0.0)

    def test_moment(self, subcritical: RateModel) -> None:
        """Test the first moment is the mean."""
        solution = stationary_distribution(chain_rates(subcritical, 1.0))
        assert solution.moment(1.0) == pytest.approx(solution.mean)


class TestReproduction:
    """Test R0 and the characteristic equation."""

    def test_closed_form_r0(self, constant_linear: RateModel) -> None:
        """Test R0 = 2/3 for b = d = 1, gamma = 1, nu = 0.5."""
        assert r0(constant_linear) == pytest.approx(R0_CONSTANT_LINEAR, abs=1e-8)
        assert r0_upper_bound(constant_linear) == pytest.approx(R0_CONSTANT_LINEAR)

    def test_upper_bound(self, logistic: RateModel, table_concave: RateModel) -> None:
        """Test the constant rate comparison bounds R0."""
        for model in (logistic, table_concave):
            assert r0(model) <= r0_upper_bound(model)

    def test_derivative_at_zero(self, logistic: RateModel) -> None:
        """Test R0 = G'(0)."""
        assert g_derivative(logistic, 0.0, 1e-4) == pytest.approx(r0(logistic), rel=1e-3)
        with pytest.raises(InvalidArgument):
            g_derivative(logistic, 0.0, 0.0)

    def test_chi_at_zero(self, logistic: RateModel) -> None:
        """Test chi(0) = R0."""
        assert characteristic_function(logistic, 0.0) == pytest.approx(
            r0(logistic), abs=1e-8
        )

    def test_chi_decreasing(self, logistic: RateModel) -> None:
        """Test chi decreases right of the spectrum."""
        n = spectral_truncation(logistic)
        values = [characteristic_function(logistic, lam, n=n) for lam in (0.0, 0.5, 1.0)]
        assert values[0] > values[1] > values[2]

    def test_lambda0_closed_form(self, constant_linear: RateModel) -> None:
        """Test chi(lambda) = 1 / (lambda + 1.5), root -0.5."""
        root = lambda0(constant_linear)
        assert root is not None
        assert root == pytest.approx(-0.5, abs=1e-6)

    def test_lambda0_sign(self, logistic: RateModel, constant_linear: RateModel) -> None:
        """Test lambda0 > 0 exactly when R0 > 1."""
        persistent = lambda0(logistic)
        assert r0(logistic) > 1.0
        assert persistent is not None and persistent > 0.0
        extinct = lambda0(constant_linear)
        assert extinct is not None and extinct < 0.0

    def test_dominant_eigenvalue(self, logistic: RateModel) -> None:
        """Test the root agrees with the truncated linearization."""
        root = lambda0(logistic)
        assert root is not None
        assert dominant_eigenvalue_check(logistic, 400) == pytest.approx(root, abs=1e-5)

    def test_abscissa(self, logistic: RateModel) -> None:
        """Test the root lies right of the spectrum of the killed generator."""
        root = lambda0(logistic)
        assert root is not None
        assert spectral_abscissa(logistic, spectral_truncation(logistic)) < root

    def test_alpha_heuristic(self, constant_linear: RateModel) -> None:
        """Test min(nu, d_1 + gamma - b_1) / 2."""
        assert alpha_heuristic(constant_linear) == pytest.approx(0.25)

    def test_resolvent_duality(self, logistic: RateModel) -> None:
        """Test e1 . (lambda - A)^-1 e equals e . (lambda - A^T)^-1 e1."""
        backward = backward_resolvent(logistic, 0.3, 80)
        forward = forward_resolvent(logistic, 0.3, 80)
        assert backward[0] == pytest.approx(np.arange(1, 81) @ forward, rel=1e-10)

    def test_linearization(self, constant_linear: RateModel) -> None:
        """Test immigration enters the first row with weight gamma j."""
        generator, perturbation = linearization_matrix(constant_linear, 10)
        assert perturbation[0, :3] == pytest.approx([1.0, 2.0, 3.0])
        assert not perturbation[1:].any()
        off_diagonal = generator - np.diag(np.diag(generator))
        assert np.all(off_diagonal >= 0.0)
        assert np.all(np.diag(generator) < 0.0)

    def test_profile(self, logistic: RateModel) -> None:
        """Test the dominant eigenvector is a distribution."""
        profile = dominant_profile(logistic)
        assert profile.sum() == pytest.approx(1.0)
        assert np.all(profile >= 0.0)

    def test_resolvent_bound(self, logistic: RateModel) -> None:
        """Test the resolvent dominates its linear lower bound."""
        values, bounds, holds = resolvent_lower_bound_check(logistic)
        assert holds
        assert values.shape == bounds.shape == (20,)

    def test_report(self, logistic: RateModel) -> None:
        """Test the report gathers R0, lambda0 and chi."""
        report = spectral_report(logistic)
        assert report.r0 == pytest.approx(r0(logistic))
        assert report.lambda0 == pytest.approx(lambda0(logistic))
        assert report.chi[0] == (0.0, pytest.approx(report.r0, abs=1e-8))
        assert report.alpha_est > 0.0


class TestTransient:
    """Test transient means by the matrix exponential."""

    def test_exponential_decay(self, constant_linear: RateModel) -> None:
        """Test E^(m) Z_t = m exp(-1.5 t) without immigration."""
        times = [0.0, 0.5, 1.0, 2.0]
        means = transient_mean(constant_linear, 0.0, 3, times)
        assert means == pytest.approx([3.0 * math.exp(-1.5 * t) for t in times], rel=1e-8)

    def test_second_difference_negative(self, logistic: RateModel) -> None:
        """Test E^(m) Z_t is strictly concave in m."""
        means = np.array(
            [transient_mean(logistic, 1.0, m, [1.0])[0] for m in range(4)]
        )
        assert np.all(np.diff(means, n=2) < 0.0)
