"""
Closed-form results of the Gaussian moment reduction.

State order for the conditional means is (x_pi, p_pi, x_rho, p_rho); the ten
ensemble second moments follow MOMENT_PAIRS. The oscillator drift is
[[0, 1], [-w^2, 0]] (x' = p, p' = -w^2 x), with w = 1 + d_omega_f for the
filter and w = 1 for the system.
"""
import cmath
import math
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from oscfb.data.constants import MOMENT_INDEX, MOMENT_PAIRS
from oscfb.data.schemas import (
    Baseline,
    CovMatrix,
    DelayModel,
    ModelParams,
    Side,
    StabilityReport,
    StabilityStatus,
    SteadyVariances,
    ZeroMeanConditions,
)
from oscfb.physics.core import k_opt, xi_minus_one
from oscfb.physics.linalg import ComplexSpectrum, eigenvalues, solve
from oscfb.utils.config import settings
from oscfb.utils.exceptions import ParameterError, SingularMatrixError


logger = logging.getLogger(__name__)

# Maps the measurement vector L to the diffusion of the measured quadrature
SIGMA = np.array([[0.0, 1.0], [-1.0, 0.0]])

# Chebyshev nodes on [-tau, 0] for the exact-delay spectrum
DELAY_NODES = 32


def oscillator_drift(w: float) -> np.ndarray:
    return np.array([[0.0, 1.0], [-w * w, 0.0]])


def _side_terms(params: ModelParams, side: Side) -> Tuple[float, float, float, float]:
    """(w, alpha, eta, 1 + nu_eff) of one Riccati equation."""
    if Side(side) is Side.FILTER:
        return params.filter_frequency, params.alpha_f, params.eta_f, 1.0 + params.nu
    return 1.0, params.alpha_s, params.eta_s, 1.0


def steady_covariance(w: float, alpha: float, eta: float, noise: float = 1.0) -> CovMatrix:
    """
    Stationary solution of one Riccati equation.

    Args:
        w: Trap frequency of the model (units of omega_S)
        alpha: Measurement strength
        eta: Detector efficiency
        noise: 1 + nu (classical noise inflation of the measurement noise)
    """
    xm1 = xi_minus_one(4.0 * alpha * alpha * eta * noise / w**4)
    root = math.sqrt(xm1)
    denom = alpha * eta * noise
    v_xx = w * root / (2.0 * math.sqrt(2.0) * denom)
    v_xp = w * w * xm1 / (4.0 * denom)
    v_pp = w * w * (1.0 + xm1) * v_xx
    return CovMatrix(v_xx=v_xx, v_xp=v_xp, v_pp=v_pp)


def steady_variances(params: ModelParams) -> SteadyVariances:
    """
    Long-time filter and system covariances.
    """
    return SteadyVariances(
        filter=steady_covariance(*_side_terms(params, Side.FILTER)),
        system=steady_covariance(*_side_terms(params, Side.SYSTEM)),
    )


def riccati_coefficients(params: ModelParams, side: Side) -> Tuple[float, float, float]:
    """(w^2, alpha, gain) with gain = 4 eta (1 + nu_eff) alpha."""
    w, alpha, eta, noise = _side_terms(params, side)
    return w * w, alpha, 4.0 * eta * noise * alpha


def riccati_components(v_xx: float, v_xp: float, v_pp: float, w2: float, alpha: float, gain: float):
    """
    Scalar form of the Riccati right-hand side, returned as (dV_xx, dV_xp, dV_pp).
    """
    return (
        2.0 * v_xp - gain * v_xx * v_xx,
        v_pp - w2 * v_xx - gain * v_xx * v_xp,
        alpha - 2.0 * w2 * v_xp - gain * v_xp * v_xp,
    )


def riccati_rhs(v: Union[CovMatrix, np.ndarray], side: Side, params: ModelParams) -> np.ndarray:
    """
    A V + V A^T + D - 4 eta (1 + nu_eff) V L L^T V, with D = Sigma L L^T Sigma^T.

    Returns:
        Symmetric 2x2 derivative (not a covariance, so returned as an array)
    """
    w, alpha, eta, noise = _side_terms(params, side)
    m = v.as_array() if isinstance(v, CovMatrix) else np.asarray(v, dtype=float)
    a = oscillator_drift(w)
    l = np.array([[math.sqrt(alpha)], [0.0]])
    sl = SIGMA @ l
    return a @ m + m @ a.T + sl @ sl.T - 4.0 * eta * noise * (m @ l) @ (l.T @ m)


@dataclass(frozen=True)
class MeanDynamics:
    """
    Coefficients of the conditional-mean SDEs

        dx_pi  = (filter_self x_pi + filter_cross x_rho) dt + filter_noise dW + filter_noise_cl dW_cl
        dx_rho = (system_from_filter x_pi + system_self x_rho) dt + system_noise dW + system_noise_cl dW_cl

    with the control delay expanded to first order.
    """
    filter_self: np.ndarray
    filter_cross: np.ndarray
    filter_noise: np.ndarray
    filter_noise_cl: np.ndarray
    system_from_filter: np.ndarray
    system_self: np.ndarray
    system_noise: np.ndarray
    system_noise_cl: np.ndarray

    @property
    def drift(self) -> np.ndarray:
        return np.block([
            [self.filter_self, self.filter_cross],
            [self.system_from_filter, self.system_self],
        ])

    @property
    def diffusion(self) -> np.ndarray:
        """4x2 matrix; columns are the dW and dW_cl increments."""
        return np.column_stack([
            np.concatenate([self.filter_noise, self.system_noise]),
            np.concatenate([self.filter_noise_cl, self.system_noise_cl]),
        ])


def mean_dynamics(params: ModelParams, v_pi: np.ndarray, v_rho: np.ndarray, tau: float) -> MeanDynamics:
    """
    Mean-equation coefficients at arbitrary (not necessarily steady) covariances.
    """
    w = params.filter_frequency
    a_pi = oscillator_drift(w)
    a_rho = oscillator_drift(1.0)
    gain = np.array([[0.0, 0.0], [0.0, -params.k]])
    eye = np.eye(2)
    l_pi = np.array([[math.sqrt(params.alpha_f)], [0.0]])
    l_rho = np.array([[math.sqrt(params.alpha_s)], [0.0]])
    eta_f, eta_s, nu = params.eta_f, params.eta_s, params.nu
    cross = math.sqrt(eta_f * eta_s)

    filter_self = a_pi + gain - 4.0 * eta_f * v_pi @ l_pi @ l_pi.T
    filter_cross = 4.0 * cross * v_pi @ l_pi @ l_rho.T
    filter_noise = (2.0 * math.sqrt(eta_f) * v_pi @ l_pi).ravel()

    system_from_filter = gain @ ((eye - tau * gain) - tau * a_pi + 4.0 * eta_f * tau * v_pi @ l_pi @ l_pi.T)
    system_self = a_rho - 4.0 * cross * tau * gain @ v_pi @ l_pi @ l_rho.T
    system_noise = (2.0 * (math.sqrt(eta_s) * v_rho @ l_rho - math.sqrt(eta_f) * tau * gain @ v_pi @ l_pi)).ravel()
    system_noise_cl = (-2.0 * math.sqrt(eta_f * nu) * tau * gain @ v_pi @ l_pi).ravel()

    return MeanDynamics(
        filter_self=filter_self,
        filter_cross=filter_cross,
        filter_noise=filter_noise,
        filter_noise_cl=math.sqrt(nu) * filter_noise,
        system_from_filter=system_from_filter,
        system_self=system_self,
        system_noise=system_noise,
        system_noise_cl=system_noise_cl,
    )


def delay_approx_means_matrices(params: ModelParams, sv: SteadyVariances) -> MeanDynamics:
    """
    Mean-equation coefficients at the steady covariances, delay to first order.
    At tau = 0 these are exactly the undelayed equations.
    """
    return mean_dynamics(params, sv.filter.as_array(), sv.system.as_array(), params.tau)


@dataclass(frozen=True)
class MomentSystem:
    """
    dv/dt = M v + b for the ten second moments; v_inf = -M^-1 b when stable.
    """
    m_inf: np.ndarray
    b_inf: np.ndarray
    v_inf: Optional[np.ndarray] = None


def _moment_column(i: int, j: int) -> int:
    return MOMENT_INDEX[(min(i, j), max(i, j))]


def moment_matrices(drift: np.ndarray, diffusion: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Project dS/dt = F S + S F^T + G G^T onto the ten upper-triangle moments.
    """
    q = diffusion @ diffusion.T
    m = np.zeros((len(MOMENT_PAIRS), len(MOMENT_PAIRS)))
    b = np.zeros(len(MOMENT_PAIRS))
    for row, (i, j) in enumerate(MOMENT_PAIRS):
        for n in range(4):
            m[row, _moment_column(n, j)] += drift[i, n]
            m[row, _moment_column(i, n)] += drift[j, n]
        b[row] = q[i, j]
    return m, b


def build_moment_system(params: ModelParams, sv: SteadyVariances) -> MomentSystem:
    """
    M_inf and b_inf of the first-order-delay mean system (v_inf left unset).
    """
    dyn = delay_approx_means_matrices(params, sv)
    m, b = moment_matrices(dyn.drift, dyn.diffusion)
    return MomentSystem(m_inf=m, b_inf=b)


def solve_moment_system(system: MomentSystem) -> MomentSystem:
    """
    Fill v_inf = -M^-1 b.

    Raises:
        SingularMatrixError: M_inf singular (stability boundary)
    """
    v_inf = solve(system.m_inf, -system.b_inf)
    return MomentSystem(m_inf=system.m_inf, b_inf=system.b_inf, v_inf=v_inf)


def second_moment_matrix(v: np.ndarray) -> np.ndarray:
    """
    Symmetric 4x4 matrix E[X_i X_j] from the ten-moment vector.
    """
    s = np.zeros((4, 4))
    for n, (i, j) in enumerate(MOMENT_PAIRS):
        s[i, j] = s[j, i] = v[n]
    return s


def moment_spectrum(params: ModelParams) -> ComplexSpectrum:
    return eigenvalues(build_moment_system(params, steady_variances(params)).m_inf)


def chebyshev_differentiation(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Chebyshev points x_j = cos(pi j / n) on [-1, 1], x_0 = 1, and the matrix
    differentiating a polynomial given by its values there.
    """
    x = np.cos(np.pi * np.arange(n + 1) / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n + 1)
    d = np.outer(c, 1.0 / c) / (x[:, None] - x[None, :] + np.eye(n + 1))
    d -= np.diag(d.sum(axis=1))
    return x, d


def delay_drift(params: ModelParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    (F_now, F_lag) of the exact-delay mean equations at the steady covariances,
    x'(t) = F_now x(t) + F_lag x(t - tau). Only the system's control p_rho <- p_pi
    is delayed; the filter models its own control as instantaneous.
    """
    sv = steady_variances(params)
    now = mean_dynamics(params, sv.filter.as_array(), sv.system.as_array(), 0.0).drift
    lag = np.zeros_like(now)
    lag[3, 1] = now[3, 1]
    now[3, 1] = 0.0
    return now, lag


def delay_spectrum(params: ModelParams, n_nodes: int = DELAY_NODES) -> ComplexSpectrum:
    """
    Characteristic roots of the exact-delay mean equations.

    The solution segment on [-tau, 0] is collocated at Chebyshev points and
    the generator d/dtheta, with the equation itself as the condition at
    theta = 0, becomes a 4(n_nodes + 1) square matrix. Its rightmost
    eigenvalues converge spectrally to the rightmost roots; the far-left ones
    are discretisation artefacts. At tau = 0 this is the spectrum of the
    undelayed 4x4 drift.
    """
    now, lag = delay_drift(params)
    if params.tau == 0:
        return eigenvalues(now + lag)
    _, d = chebyshev_differentiation(n_nodes)
    dim = now.shape[0]
    gen = np.kron(d * (2.0 / params.tau), np.eye(dim))
    gen[:dim, :] = 0.0
    gen[:dim, :dim] = now
    gen[:dim, -dim:] += lag
    return eigenvalues(gen, sizes=None)


def classify_delay(
    params: ModelParams,
    baseline: Optional[Baseline] = None,
    n_nodes: int = DELAY_NODES,
) -> StabilityReport:
    """
    Stability and convergence rate with the control delay kept exact.

    The second moments decay at twice the slowest mean rate, so max_re_lambda
    is reported as 2 max Re(root) to be comparable with classify. The
    steady-state energy is not available on this route.
    """
    baseline = Baseline(baseline or settings.BASELINE)
    max_re = 2.0 * delay_spectrum(params, n_nodes).max_real
    e0, r0 = baseline_energy_and_rate(params, baseline)
    common = dict(
        max_re_lambda=max_re,
        e_inf_0=e0,
        r0=r0,
        baseline=baseline,
        delay_model=DelayModel.FULL if params.tau > 0 else DelayModel.NONE,
    )
    tol = settings.MARGINAL_TOLERANCE
    if max_re > tol:
        return StabilityReport(status=StabilityStatus.UNSTABLE, stable=False, **common)
    if max_re >= -tol:
        logger.warning(f"Marginal point under the exact delay (max Re = {max_re:.3e}): {params}")
        return StabilityReport(status=StabilityStatus.MARGINAL, stable=False, **common)
    return StabilityReport(
        status=StabilityStatus.STABLE, stable=True, rate_r=-max_re, rate_ratio=r0 / -max_re, **common,
    )


def steady_energy(params: ModelParams, sv: SteadyVariances, v_inf: np.ndarray) -> float:
    """
    E_inf^rho = 1/2 E[<x>_rho^2 + <p>_rho^2] + 1/2 (V_xx^rho + V_pp^rho).
    """
    means = 0.5 * (v_inf[MOMENT_INDEX[(2, 2)]] + v_inf[MOMENT_INDEX[(3, 3)]])
    return float(means + 0.5 * (sv.system.v_xx + sv.system.v_pp))


def e_inf_identical(alpha_f: float, eta_f: float, k: float) -> float:
    """
    Steady-state energy when system and filter are identical (no noise,
    mismatch or delay), as a function of the gain.
    """
    if not k > 0:
        raise ParameterError("k: feedback strength nonpositive")
    v = steady_covariance(1.0, alpha_f, eta_f)
    means = alpha_f * eta_f * (2.0 * v.v_xx * v.v_xp + k * v.v_xx**2 + 1.0 / (2.0 * k * eta_f))
    return means + 0.5 * (v.v_xx + v.v_pp)


def rate_r0(k: float) -> float:
    """
    Identical-case long-time convergence rate.
    """
    if not k > 0:
        raise ParameterError("k: feedback strength nonpositive")
    if k <= 2.0:
        return k
    return k + math.sqrt(k * k - 4.0)


def baseline_energy_and_rate(params: ModelParams, baseline: Baseline = Baseline.SYSTEM) -> Tuple[float, float]:
    """
    (E_inf^0, r_0) of the identical case at the baseline side's (alpha, eta),
    using that side's own optimal gain.
    """
    if Baseline(baseline) is Baseline.FILTER:
        alpha, eta = params.alpha_f, params.eta_f
    else:
        alpha, eta = params.alpha_s, params.eta_s
    gain = k_opt(alpha, eta)
    return e_inf_identical(alpha, eta, gain), rate_r0(gain)


def convergence_time(rate: float) -> float:
    """Characteristic convergence time 1/r; infinite for a nonpositive rate."""
    return 1.0 / rate if rate > 0 else math.inf


def rate_vars(params: ModelParams, side: Side) -> float:
    """
    Decay rate of covariance transients: -2 Re(lambda_+) of
    A - 4 eta (1 + nu_eff) V_inf L L^T. Equals sqrt(2) w sqrt(xi - 1).
    """
    w, alpha, eta, noise = _side_terms(params, side)
    v = steady_covariance(w, alpha, eta, noise).as_array()
    l = np.array([[math.sqrt(alpha)], [0.0]])
    a_tilde = oscillator_drift(w) - 4.0 * eta * noise * v @ l @ l.T
    return -2.0 * eigenvalues(a_tilde).max_real


def zero_mean_conditions(params: ModelParams, sv: SteadyVariances) -> ZeroMeanConditions:
    """
    det(M1) and det(M4) of the stationary mean equations; both nonzero
    guarantees E[x_inf^pi] = E[x_inf^rho] = 0.
    """
    dyn = delay_approx_means_matrices(params, sv)
    det_m1 = _det2(dyn.filter_self)
    det_m4 = _det2(dyn.system_self)

    k_excluded = None
    degenerate = False
    if params.tau > 0:
        beta_fs = 4.0 * math.sqrt(params.alpha_f * params.alpha_s * params.eta_f * params.eta_s)
        k_excluded = 1.0 / (params.tau * beta_fs * sv.filter.v_xp)
        degenerate = abs(params.k - k_excluded) <= 1e-9 * abs(k_excluded)
    return ZeroMeanConditions(det_m1=det_m1, det_m4=det_m4, k_excluded=k_excluded, degenerate_k=degenerate)


def _det2(a: np.ndarray) -> float:
    return float(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])


def classify(params: ModelParams, baseline: Optional[Baseline] = None) -> StabilityReport:
    """
    Stability, steady-state energy and convergence rate from the spectrum of M_inf.

    Points with |max Re(lambda)| below MARGINAL_TOLERANCE, or with a singular
    M_inf, are reported as marginal.
    """
    baseline = Baseline(baseline or settings.BASELINE)
    sv = steady_variances(params)
    system = build_moment_system(params, sv)
    max_re = eigenvalues(system.m_inf).max_real
    e0, r0 = baseline_energy_and_rate(params, baseline)
    common = dict(
        max_re_lambda=max_re,
        e_inf_0=e0,
        r0=r0,
        baseline=baseline,
        delay_model=DelayModel.FIRST_ORDER if params.tau > 0 else DelayModel.NONE,
    )

    tol = settings.MARGINAL_TOLERANCE
    if max_re > tol:
        logger.debug(f"Unstable point (max Re lambda = {max_re:.6g}): {params}")
        return StabilityReport(status=StabilityStatus.UNSTABLE, stable=False, **common)
    if max_re >= -tol:
        logger.warning(f"Marginal point (max Re lambda = {max_re:.3e}): {params}")
        return StabilityReport(status=StabilityStatus.MARGINAL, stable=False, **common)

    try:
        system = solve_moment_system(system)
    except SingularMatrixError as e:
        logger.warning(f"M_inf singular at {params}: {e}")
        return StabilityReport(status=StabilityStatus.MARGINAL, stable=False, **common)

    e_rho = steady_energy(params, sv, system.v_inf)
    rate = -max_re
    return StabilityReport(
        status=StabilityStatus.STABLE,
        stable=True,
        rate_r=rate,
        e_inf_rho=e_rho,
        energy_ratio=e_rho / e0,
        rate_ratio=r0 / rate,
        **common,
    )


def steady_state(params: ModelParams) -> Tuple[SteadyVariances, MomentSystem]:
    """
    Steady covariances and the solved moment system of a stable point.
    """
    sv = steady_variances(params)
    return sv, solve_moment_system(build_moment_system(params, sv))


def closed_form_spectrum(alpha: float, eta: float, nu: float, k: float) -> np.ndarray:
    """
    Closed-form spectrum of M_inf for a matched, undelayed filter with
    classical noise nu. The ten eigenvalues are the pairwise sums of the
    eigenvalues of the estimation-error block and of the controlled system.
    """
    v = steady_covariance(1.0, alpha, eta, 1.0 + nu)
    beta = 4.0 * alpha * eta
    bv = beta * v.v_xx
    q = beta * v.v_xp + 1.0
    root_s = cmath.sqrt(k * k - 4.0)
    root_e = cmath.sqrt(bv * bv - 4.0 * q)
    zeta_mean = (k + bv) ** 2 - 8.0 * (1.0 + alpha * eta * (k * v.v_xx + 2.0 * v.v_xp))
    zeta_split = 4.0 * cmath.sqrt((4.0 - k * k) * (1.0 + 4.0 * alpha * eta * (v.v_xp - alpha * eta * v.v_xx**2)))
    lam = [
        -k,
        -k + root_s,
        -k - root_s,
        -bv,
        -bv + root_e,
        -bv - root_e,
    ]
    for zeta in (zeta_mean + zeta_split, zeta_mean - zeta_split):
        root = cmath.sqrt(zeta)
        lam.extend([-0.5 * (k + bv) + 0.5 * root, -0.5 * (k + bv) - 0.5 * root])
    return np.array(lam, dtype=complex)
