"""
Ensemble simulation of the conditional-mean SDEs of the filter and the system,
with the exact (sample-aligned) control delay, plus fixed-step RK4
integration of the covariance Riccati equations.

Paths are processed in fixed-size blocks. Block b draws its increments from a
Philox stream keyed by (seed, b) and blocks are reduced in index order, so a
run is bit-identical for any number of worker threads.
"""
import math
import os
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from oscfb.data.constants import MOMENT_INDEX, MOMENT_PAIRS
from oscfb.data.schemas import (
    Baseline,
    CovMatrix,
    MeanPair,
    ModelParams,
    NumericClassification,
    Scheme,
    Side,
    SimConfig,
    SteadyVariances,
    TrajectoryStats,
    VarianceMode,
)
from oscfb.physics.analytic import (
    baseline_energy_and_rate,
    mean_dynamics,
    riccati_coefficients,
    riccati_components,
    steady_variances,
)
from oscfb.utils.config import settings
from oscfb.utils.exceptions import DelayGridError, ParameterError, PositivityLostError


logger = logging.getLogger(__name__)

DELAY_GRID_TOLERANCE = 1e-9
SCHEDULE_SETTLE_TOLERANCE = 1e-13


@dataclass(frozen=True)
class CovarianceSeries:
    """
    Covariance trajectory sampled at every integration step.
    """
    times: np.ndarray
    v_xx: np.ndarray
    v_xp: np.ndarray
    v_pp: np.ndarray

    @property
    def final(self) -> CovMatrix:
        return CovMatrix(v_xx=float(self.v_xx[-1]), v_xp=float(self.v_xp[-1]), v_pp=float(self.v_pp[-1]))

    def as_arrays(self) -> np.ndarray:
        """(n, 2, 2) stack of covariance matrices."""
        out = np.empty((len(self.times), 2, 2))
        out[:, 0, 0] = self.v_xx
        out[:, 0, 1] = out[:, 1, 0] = self.v_xp
        out[:, 1, 1] = self.v_pp
        return out


def _n_steps(span: float, dt: float) -> int:
    return max(1, int(round(span / dt)))


def integrate_riccati(v0: CovMatrix, side: Side, params: ModelParams, dt: float, t_final: float) -> CovarianceSeries:
    """
    Fixed-step RK4 integration of one Riccati equation.

    Raises:
        PositivityLostError: when V_xx or det(V) is no longer positive
    """
    w2, alpha, gain = riccati_coefficients(params, side)
    n = _n_steps(t_final, dt)
    out = np.empty((n + 1, 3))
    v = np.array([v0.v_xx, v0.v_xp, v0.v_pp])
    out[0] = v

    def rhs(u):
        return np.array(riccati_components(u[0], u[1], u[2], w2, alpha, gain))

    for step in range(1, n + 1):
        k1 = rhs(v)
        k2 = rhs(v + 0.5 * dt * k1)
        k3 = rhs(v + 0.5 * dt * k2)
        k4 = rhs(v + dt * k3)
        v = v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        det = v[0] * v[2] - v[1] * v[1]
        if not (v[0] > 0 and det > 0):
            logger.warning(f"Riccati integration ({Side(side).value}) lost positivity at step {step}")
            raise PositivityLostError(step * dt, float(det))
        out[step] = v

    return CovarianceSeries(times=np.arange(n + 1) * dt, v_xx=out[:, 0], v_xp=out[:, 1], v_pp=out[:, 2])


def delay_steps(tau: float, dt: float) -> int:
    """
    Number of steps spanned by the control delay.

    Raises:
        DelayGridError: tau is not a multiple of dt within 1e-9
    """
    if tau == 0:
        return 0
    ratio = tau / dt
    steps = int(round(ratio))
    if abs(ratio - steps) > DELAY_GRID_TOLERANCE:
        raise DelayGridError(f"tau={tau} is not a multiple of dt={dt}")
    return steps


class _CoefficientSchedule:
    """
    Drift and diffusion of the undelayed mean equations at each step, plus
    the variance part of the system energy.

    The instantaneous control coupling p_rho <- p_pi is removed from the
    drift when the control is delayed; the integrator applies it from the
    delay buffer instead.
    """

    def __init__(
        self,
        params: ModelParams,
        sim: SimConfig,
        sv: SteadyVariances,
        n_steps: int,
        delayed: bool,
        v0_system: Optional[CovMatrix] = None,
        v0_filter: Optional[CovMatrix] = None,
    ):
        self.params = params
        self.delayed = delayed
        self._steady = self._coefficients(sv.filter.as_array(), sv.system.as_array())
        self._steady_energy = 0.5 * (sv.system.v_xx + sv.system.v_pp)
        self._drifts = None
        self._noises = None
        self._energies = None

        if sim.variance_mode == VarianceMode.INTEGRATE:
            v0_system = v0_system or sv.system
            v0_filter = v0_filter or v0_system
            t_span = n_steps * sim.dt
            filt = integrate_riccati(v0_filter, Side.FILTER, params, sim.dt, t_span).as_arrays()
            syst = integrate_riccati(v0_system, Side.SYSTEM, params, sim.dt, t_span).as_arrays()
            settled = self._settled_index(filt, sv.filter.as_array(), syst, sv.system.as_array())
            logger.debug(f"Covariances settle after {settled} of {n_steps} steps")
            if settled:
                drifts, noises = zip(*(self._coefficients(filt[n], syst[n]) for n in range(settled)))
                self._drifts = np.array(drifts)
                self._noises = np.array(noises)
            self._energies = 0.5 * (syst[:, 0, 0] + syst[:, 1, 1])

    @staticmethod
    def _settled_index(filt, filt_inf, syst, syst_inf) -> int:
        dev = np.maximum(
            np.max(np.abs(filt - filt_inf), axis=(1, 2)) / np.max(np.abs(filt_inf)),
            np.max(np.abs(syst - syst_inf), axis=(1, 2)) / np.max(np.abs(syst_inf)),
        )
        late = np.nonzero(dev > SCHEDULE_SETTLE_TOLERANCE)[0]
        return int(late[-1]) + 1 if len(late) else 0

    def _coefficients(self, v_pi: np.ndarray, v_rho: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        dyn = mean_dynamics(self.params, v_pi, v_rho, 0.0)
        drift = dyn.drift
        if self.delayed:
            drift[3, 1] = 0.0
        return drift, dyn.diffusion

    def at(self, step: int) -> Tuple[np.ndarray, np.ndarray]:
        if self._drifts is not None and step < len(self._drifts):
            return self._drifts[step], self._noises[step]
        return self._steady

    def variance_energy(self, step: int) -> float:
        if self._energies is not None:
            return float(self._energies[step])
        return self._steady_energy


@dataclass
class _BlockSums:
    n: int
    energy: np.ndarray
    energy_sq: np.ndarray
    moments: np.ndarray
    means: np.ndarray
    n_diverged: int
    tracking: float


def _record_indices(n_steps: int, stride: int) -> np.ndarray:
    idx = np.arange(0, n_steps + 1, stride)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


def _run_block(
    block: int,
    n: int,
    params: ModelParams,
    sim: SimConfig,
    x0: np.ndarray,
    schedule: _CoefficientSchedule,
    n_steps: int,
    lag: int,
    records: np.ndarray,
    energy_cap: float,
) -> _BlockSums:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(sim.seed, spawn_key=(block,))))
    dt = sim.dt
    sqrt_dt = math.sqrt(dt)
    k = params.k
    rk4 = sim.scheme == Scheme.RK4

    x = np.repeat(x0[:, None], n, axis=1)
    # p_pi history; slots not yet written hold p_pi(0), the pre-delay control
    history = np.repeat(x[1][None, :], lag + 1, axis=0) if lag else None

    n_rec = len(records)
    energy = np.zeros(n_rec)
    energy_sq = np.zeros(n_rec)
    moments = np.zeros((n_rec, len(MOMENT_PAIRS)))
    means = np.zeros((n_rec, 4))
    tracking = 0.0
    dead = np.zeros(n, dtype=bool)
    frozen = None
    rec = 0

    def drift(f, state, u):
        out = f @ state
        if u is not None:
            out[3] -= k * u
        return out

    for step in range(n_steps + 1):
        if rec < n_rec and records[rec] == step:
            e_path = 0.5 * (x[2] ** 2 + x[3] ** 2)
            bad = ~dead & ~(np.isfinite(e_path) & (e_path + schedule.variance_energy(step) <= energy_cap))
            if bad.any():
                if frozen is None:
                    frozen = x.copy()
                frozen[:, bad] = x[:, bad]
                dead |= bad
                logger.warning(f"Block {block}: {int(bad.sum())} path(s) diverged at t={step * dt:.6g}")
            energy[rec] = e_path.sum()
            energy_sq[rec] = (e_path * e_path).sum()
            for col, (i, j) in enumerate(MOMENT_PAIRS):
                moments[rec, col] = (x[i] * x[j]).sum()
            means[rec] = x.sum(axis=1)
            if not dead.any():
                tracking = max(tracking, float(np.max(np.abs(x[0] - x[2]))), float(np.max(np.abs(x[1] - x[3]))))
            rec += 1
        if step == n_steps:
            break

        f, g = schedule.at(step)
        if lag:
            history[step % (lag + 1)] = x[1]
            u0 = history[(step - lag) % (lag + 1)]
            u1 = history[(step - lag + 1) % (lag + 1)]
        else:
            u0 = u1 = None

        dw = rng.standard_normal((2, n)) * sqrt_dt
        if rk4:
            um = None if u0 is None else 0.5 * (u0 + u1)
            k1 = drift(f, x, u0)
            k2 = drift(f, x + 0.5 * dt * k1, um)
            k3 = drift(f, x + 0.5 * dt * k2, um)
            k4 = drift(f, x + dt * k3, u1)
            x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4) + g @ dw
        else:
            x = x + dt * drift(f, x, u0) + g @ dw

        if frozen is not None:
            x[:, dead] = frozen[:, dead]

    return _BlockSums(
        n=n,
        energy=energy,
        energy_sq=energy_sq,
        moments=moments,
        means=means,
        n_diverged=int(dead.sum()),
        tracking=tracking,
    )


def _worker_count(sim: SimConfig) -> int:
    return sim.n_workers or settings.OSC_THREADS or os.cpu_count() or 1


def simulate_means(
    params: ModelParams,
    sim: SimConfig,
    x0: Optional[MeanPair] = None,
    v0: Optional[CovMatrix] = None,
    v0_filter: Optional[CovMatrix] = None,
) -> TrajectoryStats:
    """
    Simulate an ensemble of conditional-mean trajectories.

    The filter is driven by its innovations dW + sqrt(nu) dW_cl; the system
    by the same dW and by the control -k <p>_pi(t - tau), which before
    t = tau uses <p>_pi(0).

    Args:
        params: Model parameters (the gain may have been injected)
        sim: Simulation settings
        x0: Initial means, identical on every path (default zero)
        v0: Initial system covariance for integrate mode (default steady)
        v0_filter: Initial filter covariance for integrate mode (default v0)

    Raises:
        DelayGridError: tau not aligned with dt
        ParameterError: t_final shorter than tau
    """
    if sim.t_final < params.tau:
        raise ParameterError("t_final: shorter than the control delay")
    lag = delay_steps(params.tau, sim.dt)
    n_steps = _n_steps(sim.t_final, sim.dt)
    sv = steady_variances(params)
    schedule = _CoefficientSchedule(params, sim, sv, n_steps, delayed=lag > 0, v0_system=v0, v0_filter=v0_filter)
    records = _record_indices(n_steps, sim.record_stride)
    start = (x0 or MeanPair()).as_array()

    e0, _ = baseline_energy_and_rate(params, Baseline(settings.BASELINE))
    energy_cap = settings.DIVERGENCE_RATIO * e0

    block_size = sim.block_size or settings.SIM_BLOCK_SIZE
    sizes = [min(block_size, sim.n_paths - start_idx) for start_idx in range(0, sim.n_paths, block_size)]
    workers = min(_worker_count(sim), len(sizes))
    logger.info(
        f"Simulating {sim.n_paths} paths in {len(sizes)} block(s) on {workers} thread(s): "
        f"dt={sim.dt}, t_final={sim.t_final}, lag={lag} steps, scheme={sim.scheme.value}"
    )

    def run(item):
        block, n = item
        return _run_block(block, n, params, sim, start, schedule, n_steps, lag, records, energy_cap)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, enumerate(sizes)))

    stats = _reduce(parts, records * sim.dt, np.array([schedule.variance_energy(int(s)) for s in records]))
    if stats.diverged:
        logger.warning(f"{stats.n_diverged} of {stats.n_paths} paths diverged")
    logger.info(f"Final mean energy {stats.final_energy:.6g} (+/- {stats.std_error[-1]:.2g})")
    return stats


def _reduce(parts, times: np.ndarray, variance_energy: np.ndarray) -> TrajectoryStats:
    """
    Combine block sums in block order.
    """
    n = sum(p.n for p in parts)
    energy = _sum_in_order(p.energy for p in parts)
    energy_sq = _sum_in_order(p.energy_sq for p in parts)
    moments = _sum_in_order(p.moments for p in parts)
    sums = _sum_in_order(p.means for p in parts)

    mean_e = energy / n
    mean_x = sums / n
    if n > 1:
        var_e = np.maximum(energy_sq - n * mean_e**2, 0.0) / (n - 1)
        diag = np.array([MOMENT_INDEX[(i, i)] for i in range(4)])
        var_x = np.maximum(moments[:, diag] - n * mean_x**2, 0.0) / (n - 1)
        se_e = np.sqrt(var_e / n)
        se_x = np.sqrt(var_x / n)
    else:
        se_e = np.zeros_like(mean_e)
        se_x = np.zeros_like(mean_x)

    return TrajectoryStats(
        times=times,
        mean_energy=mean_e + variance_energy,
        std_error=se_e,
        second_moments=moments / n,
        mean_state=mean_x,
        mean_state_se=se_x,
        variance_energy=variance_energy,
        n_paths=n,
        n_diverged=sum(p.n_diverged for p in parts),
        max_tracking_error=max(p.tracking for p in parts),
    )


def _sum_in_order(arrays):
    total = None
    for a in arrays:
        total = a.copy() if total is None else total + a
    return total


def classify_numeric(params: ModelParams, sim: SimConfig) -> NumericClassification:
    """
    Simulate from zero means with steady covariances. The point is unstable
    when the final energy exceeds INSTABILITY_RATIO times E_inf^0, when a path
    diverges, or when the log-energy still rises by more than
    TAIL_GROWTH_LIMIT over the second half of the run.
    """
    run = sim.model_copy(update={"variance_mode": VarianceMode.STEADY})
    e0, _ = baseline_energy_and_rate(params, Baseline(settings.BASELINE))
    stats = simulate_means(params, run, MeanPair())
    ratio = stats.final_energy / e0
    growth = tail_growth(stats)
    span = 0.5 * float(stats.times[-1] - stats.times[0])
    stable = bool(
        np.isfinite(ratio)
        and ratio <= settings.INSTABILITY_RATIO
        and not stats.diverged
        and growth * span <= settings.TAIL_GROWTH_LIMIT
    )
    logger.debug(f"Numeric classification: ratio={ratio:.6g}, tail growth={growth:.3g}, stable={stable}")
    return NumericClassification(
        stable=stable, final_ratio=float(ratio), diverged=stats.diverged, e_inf_0=e0, tail_growth=growth,
    )


def tail_growth(stats: TrajectoryStats, fraction: float = 0.5) -> float:
    """
    Least-squares slope of log E(t) over the final fraction of samples;
    +inf when a sample there is not finite and positive.
    """
    start = max(0, min(int(len(stats.times) * (1.0 - fraction)), len(stats.times) - 2))
    energy = stats.mean_energy[start:]
    if len(energy) < 2:
        return 0.0
    if not np.all(np.isfinite(energy) & (energy > 0)):
        return math.inf
    slope, _ = np.polyfit(stats.times[start:], np.log(energy), 1)
    return float(slope)


def plateau_energy(stats: TrajectoryStats, fraction: float = 0.25) -> Tuple[float, float]:
    """
    Time average of the mean energy over the final fraction of samples and
    the mean of the per-sample standard errors there.
    """
    start = int(len(stats.times) * (1.0 - fraction))
    start = min(start, len(stats.times) - 1)
    return float(np.mean(stats.mean_energy[start:])), float(np.mean(stats.std_error[start:]))


def estimate_decay_rate(stats: TrajectoryStats, e_inf: float, upper: float = 1e-1, lower: float = 1e-3) -> float:
    """
    Fit exp(-r t) to |E(t) - E_inf| over the window where the deviation lies
    between lower and upper times its maximum.

    Raises:
        ValueError: fewer than three samples in the window
    """
    dev = np.abs(stats.mean_energy - e_inf)
    peak = int(np.argmax(dev))
    d0 = dev[peak]
    window = np.zeros(len(dev), dtype=bool)
    window[peak:] = (dev[peak:] <= upper * d0) & (dev[peak:] >= lower * d0)
    if window.sum() < 3:
        raise ValueError("not enough samples in the decay window")
    slope, _ = np.polyfit(stats.times[window], np.log(dev[window]), 1)
    return float(-slope)
