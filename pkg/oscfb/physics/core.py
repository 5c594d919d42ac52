"""
Parameter handling, the dimensionless xi factors, the identical-case optimal
gain and the mapping of a cavity-probed BEC onto a measurement strength.
"""
import math
import logging
from typing import Mapping, Optional, Tuple

from pydantic import ValidationError

from oscfb.data.constants import DEFAULT_MATCHED, SCENARIO_SEPARATED, SLICE_NAMES
from oscfb.data.schemas import ModelParams, PhysicalScenario
from oscfb.utils.exceptions import ParameterError


logger = logging.getLogger(__name__)


def xi_minus_one(s: float) -> float:
    """
    sqrt(1 + s) - 1 without cancellation for small s.
    """
    return s / (math.sqrt(1.0 + s) + 1.0)


def filter_xi_argument(alpha_f: float, eta_f: float, nu: float = 0.0, d_omega_f: float = 0.0) -> float:
    return 4.0 * alpha_f * alpha_f * eta_f * (1.0 + nu) / (1.0 + d_omega_f) ** 4


def xi_filter(params: ModelParams) -> float:
    return 1.0 + xi_minus_one(filter_xi_argument(params.alpha_f, params.eta_f, params.nu, params.d_omega_f))


def xi_system(params: ModelParams) -> float:
    return 1.0 + xi_minus_one(4.0 * params.alpha_s * params.alpha_s * params.eta_s)


def validate(params: ModelParams) -> ModelParams:
    """
    Re-check every invariant of params (including ones bypassed by model_copy).

    Returns:
        params, unchanged

    Raises:
        ParameterError: naming the first violated invariant
    """
    problems = params.violations()
    if problems:
        logger.debug(f"Parameter validation failed: {problems}")
        raise ParameterError(problems[0])
    return params


def k_opt(alpha_f: float, eta_f: float, d_omega_f: float = 0.0) -> float:
    """
    Gain minimising the identical-case steady-state energy, built from the
    filter's parameters with no classical noise.

    Equivalent to 1 / (sqrt(2 eta_f) V_xx^pi(inf; nu=0)).
    """
    if not (alpha_f > 0 and 0 < eta_f <= 1 and 1.0 + d_omega_f > 0):
        raise ParameterError("k_opt needs alpha_f > 0, eta_f in (0, 1] and d_omega_f > -1")
    w = 1.0 + d_omega_f
    xm1 = xi_minus_one(filter_xi_argument(alpha_f, eta_f, 0.0, d_omega_f))
    return 2.0 * alpha_f * math.sqrt(eta_f) / (w * math.sqrt(xm1))


def build_params(overrides: Optional[Mapping[str, float]] = None, k: Optional[float] = None) -> ModelParams:
    """
    Build validated ModelParams from the matched defaults plus overrides.

    When no gain is given (neither in overrides nor as k) the gain is
    k_opt of the filter's parameters. An explicit gain is injected after the
    other fields are validated, so nonpositive gains can be studied.

    Raises:
        ParameterError: first violated invariant of the non-gain fields
    """
    given = {name: float(v) for name, v in (overrides or {}).items() if v is not None}
    values = dict(DEFAULT_MATCHED)
    for short, names in SLICE_NAMES.items():
        if short in given:
            value = given.pop(short)
            values.update({name: value for name in names})
    values.update(given)
    gain = values.pop("k", None)
    if k is not None:
        gain = float(k)

    try:
        gain_opt = k_opt(values["alpha_f"], values["eta_f"], values["d_omega_f"])
    except ParameterError:
        gain_opt = 1.0  # validation below reports the offending field

    try:
        params = ModelParams(**values, k=gain_opt)
    except ValidationError as e:
        message = e.errors()[0]["msg"].removeprefix("Value error, ")
        raise ParameterError(message) from e

    if gain is not None:
        params = with_gain(params, gain)
    return params


def with_gain(params: ModelParams, k: float) -> ModelParams:
    """
    Return params with the feedback strength replaced, skipping validation.
    """
    return params.model_copy(update={"k": float(k)})


def scenario_params(identical: bool = False, alpha_s: Optional[float] = None) -> ModelParams:
    """
    Parameters of the BEC cooling scenario.

    Args:
        identical: Replace the filter by a perfect copy of the system (no noise, delay or mismatch)
        alpha_s: Override the system measurement strength

    Returns:
        ModelParams with k = k_opt of the filter
    """
    values = dict(SCENARIO_SEPARATED)
    if alpha_s is not None:
        values["alpha_s"] = alpha_s
    if identical:
        values.update(
            alpha_f=values["alpha_s"], eta_f=values["eta_s"], d_omega_f=0.0, nu=0.0, tau=0.0,
        )
    return build_params(values)


def harmonic_length(s: PhysicalScenario) -> float:
    """Oscillator length sqrt(hbar / (m omega_S)) in metres."""
    return math.sqrt(s.hbar / (s.mass * s.omega_s))


def bec_measurement_strength(s: PhysicalScenario) -> Tuple[float, float]:
    """
    Dimensionless measurement strength of a cavity-probed condensate:
    alpha_S = 4 k0^2 N_a g0^4 nbar x_HO^2 / (omega_S kappa Delta^2).

    Returns:
        (alpha_s, x_ho) with x_ho in metres
    """
    k0 = 2.0 * math.pi / s.wavelength
    x_ho = harmonic_length(s)
    alpha_s = 4.0 * k0**2 * s.n_atoms * s.g0**4 * s.nbar * x_ho**2 / (s.omega_s * s.kappa * s.detuning**2)
    logger.debug(f"BEC measurement strength alpha_s={alpha_s:.6g}, x_HO={x_ho:.6g} m")
    return alpha_s, x_ho


def feedback_phase_lag_deg(tau: float) -> float:
    """
    Phase by which a control delayed by tau lags the oscillator, in degrees.
    """
    return math.degrees(tau)
