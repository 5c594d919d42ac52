"""
Unit tests for parameter handling, the optimal gain and the BEC mapping.
"""
import math

import pytest

from oscfb.data.schemas import ModelParams, PhysicalScenario
from oscfb.physics.analytic import steady_covariance
from oscfb.physics.core import (
    bec_measurement_strength,
    build_params,
    feedback_phase_lag_deg,
    k_opt,
    scenario_params,
    validate,
    with_gain,
    xi_filter,
    xi_minus_one,
    xi_system,
)
from oscfb.utils.exceptions import ParameterError


class TestXi:
    """Tests for the dimensionless xi factors."""

    def test_xi_minus_one_matches_direct_formula(self):
        """Test the cancellation-free form against sqrt(1 + s) - 1."""
        for s in (0.0, 1e-3, 0.5, 3.0, 400.0):
            assert xi_minus_one(s) == pytest.approx(math.sqrt(1.0 + s) - 1.0, rel=1e-12, abs=1e-15)

    def test_xi_minus_one_small_argument(self):
        """Test that tiny arguments keep full relative precision."""
        assert xi_minus_one(1e-12) == pytest.approx(5e-13, rel=1e-9)

    def test_filter_xi_includes_noise_and_mismatch(self):
        """Test that nu and d_omega_f enter the filter's xi only."""
        params = build_params({"alpha": 1.0, "eta": 1.0, "nu": 3.0, "d_omega_f": 1.0})
        expected = math.sqrt(1.0 + 4.0 * 1.0 * 1.0 * 4.0 / 16.0)
        assert xi_filter(params) == pytest.approx(expected)
        assert xi_system(params) == pytest.approx(math.sqrt(5.0))


class TestKOpt:
    """Tests for the identical-case optimal gain."""

    def test_equals_inverse_position_variance(self):
        """Test k_opt = 1 / (sqrt(2 eta) V_xx) without classical noise."""
        for alpha, eta in ((0.1, 0.16), (1.0, 1.0), (3.0, 0.2)):
            v = steady_covariance(1.0, alpha, eta)
            assert k_opt(alpha, eta) == pytest.approx(1.0 / (math.sqrt(2.0 * eta) * v.v_xx), rel=1e-12)

    def test_weak_measurement_limit(self):
        """Test that k_opt tends to sqrt(2) as alpha -> 0."""
        assert k_opt(1e-4, 0.5) == pytest.approx(math.sqrt(2.0), rel=1e-6)

    def test_matched_default_value(self):
        """Test the default matched point."""
        assert k_opt(0.1, 0.16) == pytest.approx(1.41534, rel=1e-4)

    @pytest.mark.parametrize("alpha_f, eta_f, d_omega_f", [(0.0, 0.5, 0.0), (1.0, 0.0, 0.0), (1.0, 1.5, 0.0), (1.0, 0.5, -1.0)])
    def test_rejects_invalid_inputs(self, alpha_f, eta_f, d_omega_f):
        """Test that invalid filter parameters raise ParameterError."""
        with pytest.raises(ParameterError):
            k_opt(alpha_f, eta_f, d_omega_f)


class TestValidate:
    """Tests for parameter validation."""

    @pytest.mark.parametrize("overrides, message", [
        ({"eta_s": 1.5}, "eta_s: efficiency out of range"),
        ({"eta_f": 0.0}, "eta_f: efficiency out of range"),
        ({"alpha_s": 0.0}, "alpha_s: measurement strength nonpositive"),
        ({"d_omega_f": -1.0}, "d_omega_f: trap frequency nonpositive"),
        ({"nu": -0.1}, "nu: classical noise negative"),
        ({"tau": -0.5}, "tau: delay negative"),
        ({"alpha_f": float("nan")}, "alpha_f: not finite"),
    ])
    def test_build_params_names_violation(self, overrides, message):
        """Test that the first violated invariant is named."""
        with pytest.raises(ParameterError, match=message):
            build_params(overrides)

    def test_first_violation_wins(self):
        """Test that violations are reported in field order."""
        with pytest.raises(ParameterError, match="eta_s"):
            build_params({"eta_s": 2.0, "nu": -1.0})

    def test_injected_gain_is_caught_by_validate(self, matched_params):
        """Test that validate re-checks a gain injected past the model validator."""
        params = with_gain(matched_params, -1.0)
        assert params.k == -1.0
        with pytest.raises(ParameterError, match="k: feedback strength nonpositive"):
            validate(params)

    def test_validate_returns_params(self, matched_params):
        """Test that valid parameters pass through unchanged."""
        assert validate(matched_params) is matched_params

    def test_model_rejects_unknown_fields(self):
        """Test that ModelParams forbids unknown fields."""
        with pytest.raises(ValueError):
            ModelParams(alpha_s=1, eta_s=1, alpha_f=1, eta_f=1, k=1, gamma=2)


class TestBuildParams:
    """Tests for parameter assembly."""

    def test_defaults_are_matched(self):
        """Test that no overrides give the default matched point."""
        params = build_params()
        assert params.is_matched
        assert params.k == pytest.approx(k_opt(0.1, 0.16))

    def test_slice_names_set_both_sides(self):
        """Test that alpha and eta set system and filter together."""
        params = build_params({"alpha": 0.7, "eta": 0.3})
        assert params.alpha_s == params.alpha_f == 0.7
        assert params.eta_s == params.eta_f == 0.3

    def test_per_side_value_overrides_slice(self):
        """Test that an explicit per-side value wins over the slice value."""
        params = build_params({"alpha": 0.7, "alpha_f": 0.2})
        assert params.alpha_s == 0.7
        assert params.alpha_f == 0.2

    def test_gain_follows_filter(self):
        """Test that the default gain is built from the filter's parameters."""
        params = build_params({"alpha_f": 0.3, "eta_f": 0.5, "d_omega_f": 0.5})
        assert params.k == pytest.approx(k_opt(0.3, 0.5, 0.5))

    def test_explicit_gain_may_be_nonpositive(self):
        """Test that an explicit gain bypasses the positivity invariant."""
        assert build_params({"alpha": 1.0}, k=-2.0).k == -2.0
        assert build_params({"alpha": 1.0, "k": 0.0}).k == 0.0

    def test_scenario_presets(self):
        """Test the separated and identical scenario presets."""
        separated = scenario_params()
        identical = scenario_params(identical=True)
        assert separated.alpha_f == 0.05 and separated.nu == 10.0 and separated.tau == 0.1
        assert identical.is_matched
        assert identical.alpha_s == separated.alpha_s
        assert separated.k == pytest.approx(k_opt(0.05, 0.08, 1.0))

    def test_scenario_alpha_override(self):
        """Test overriding the system measurement strength."""
        assert scenario_params(alpha_s=0.5).alpha_s == 0.5


class TestPhysicalScenario:
    """Tests for the cavity-probed BEC mapping."""

    def test_default_strength_order_of_magnitude(self):
        """Test that the default condensate gives alpha_S within a decade of 0.1."""
        alpha_s, x_ho = bec_measurement_strength(PhysicalScenario())
        assert 0.01 < alpha_s < 1.0
        assert alpha_s == pytest.approx(0.53, rel=0.03)
        assert x_ho == pytest.approx(3.29e-8, rel=0.01)

    def test_strength_scales_with_photon_number(self):
        """Test that alpha_S is linear in the photon number and vanishes without light."""
        base, _ = bec_measurement_strength(PhysicalScenario())
        double, _ = bec_measurement_strength(PhysicalScenario(nbar=1.6))
        dark, _ = bec_measurement_strength(PhysicalScenario(nbar=0.0))
        assert double == pytest.approx(2.0 * base)
        assert dark == 0.0

    def test_rejects_negative_photon_number(self):
        """Test that a negative photon number is invalid."""
        with pytest.raises(ValueError):
            PhysicalScenario(nbar=-1.0)


def test_phase_lag():
    """Test that the control lag is tau in degrees of oscillator phase."""
    assert feedback_phase_lag_deg(0.6) == pytest.approx(34.377, rel=1e-4)
    assert feedback_phase_lag_deg(0.0) == 0.0
