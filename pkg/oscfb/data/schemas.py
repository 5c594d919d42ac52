import math
from enum import Enum
from datetime import datetime
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from oscfb.data.constants import (
    HBAR,
    RB85_MASS,
    TWO_PI,
    PARAM_NAMES,
    SLICE_NAMES,
)


# Enumerations

class Side(str, Enum):
    """
    Which conditional state a Riccati equation belongs to.
    """
    FILTER = "filter"
    SYSTEM = "system"


class StabilityStatus(str, Enum):
    """
    Classification of the long-time behaviour of the mean second moments.
    """
    STABLE = "stable"
    MARGINAL = "marginal"
    UNSTABLE = "unstable"


class Baseline(str, Enum):
    """
    Whose parameters define the identical-case reference E0 and r0.
    """
    SYSTEM = "system"
    FILTER = "filter"


class DelayModel(str, Enum):
    """
    How the control delay entered a result.
    """
    NONE = "none"
    FIRST_ORDER = "first_order"
    FULL = "full_delay"


class VarianceMode(str, Enum):
    STEADY = "analytic-steady"
    INTEGRATE = "integrate"


class Scheme(str, Enum):
    RK4 = "rk4"
    EULER = "euler"


class SweepMethod(str, Enum):
    ANALYTIC = "analytic"
    NUMERIC = "numeric"
    DELAY = "delay"


class Spacing(str, Enum):
    LINEAR = "linear"
    LOG = "log"


# Model types

class ModelParams(BaseModel):
    """
    Scalar parameters of the measured system, the experimenter's filter and
    the imperfections separating them. Harmonic-oscillator units throughout.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha_s: float = Field(..., description="System measurement strength")
    eta_s: float = Field(..., description="System detector efficiency in (0, 1]")
    alpha_f: float = Field(..., description="Filter measurement strength")
    eta_f: float = Field(..., description="Filter detector efficiency in (0, 1]")
    d_omega_f: float = Field(0.0, description="Fractional trap-frequency mismatch of the filter (> -1)")
    nu: float = Field(0.0, description="Classical noise strength on the filter's signal (>= 0)")
    tau: float = Field(0.0, description="Control delay in units of 1/omega_S (>= 0)")
    k: float = Field(..., description="Feedback strength (> 0)")

    def violations(self) -> List[str]:
        """
        List every violated invariant, in field order, as "<field>: <reason>".
        """
        problems = []
        for name in PARAM_NAMES:
            if not math.isfinite(getattr(self, name)):
                problems.append(f"{name}: not finite")
                continue
            value = getattr(self, name)
            if name in ("alpha_s", "alpha_f") and not value > 0:
                problems.append(f"{name}: measurement strength nonpositive")
            elif name in ("eta_s", "eta_f") and not 0 < value <= 1:
                problems.append(f"{name}: efficiency out of range")
            elif name == "d_omega_f" and not 1.0 + value > 0:
                problems.append(f"{name}: trap frequency nonpositive")
            elif name == "nu" and not value >= 0:
                problems.append(f"{name}: classical noise negative")
            elif name == "tau" and not value >= 0:
                problems.append(f"{name}: delay negative")
            elif name == "k" and not value > 0:
                problems.append(f"{name}: feedback strength nonpositive")
        return problems

    @model_validator(mode="after")
    def _check_invariants(self) -> "ModelParams":
        problems = self.violations()
        if problems:
            raise ValueError(problems[0])
        return self

    @property
    def filter_frequency(self) -> float:
        """Filter trap frequency in units of omega_S."""
        return 1.0 + self.d_omega_f

    @property
    def is_matched(self) -> bool:
        """True when filter and system agree and the signal is clean and undelayed."""
        return (
            self.alpha_f == self.alpha_s
            and self.eta_f == self.eta_s
            and self.d_omega_f == 0.0
            and self.nu == 0.0
            and self.tau == 0.0
        )


class CovMatrix(BaseModel):
    """
    Symmetric positive-definite 2x2 covariance of (x, p).
    """
    model_config = ConfigDict(frozen=True)

    v_xx: float = Field(..., description="Position variance")
    v_xp: float = Field(..., description="Symmetrised position-momentum covariance")
    v_pp: float = Field(..., description="Momentum variance")

    @model_validator(mode="after")
    def _check_positive_definite(self) -> "CovMatrix":
        if not (self.v_xx > 0 and self.v_pp > 0 and self.det > 0):
            raise ValueError("covariance not positive definite")
        return self

    @property
    def det(self) -> float:
        return self.v_xx * self.v_pp - self.v_xp * self.v_xp

    def as_array(self) -> np.ndarray:
        return np.array([[self.v_xx, self.v_xp], [self.v_xp, self.v_pp]])

    @classmethod
    def from_array(cls, a: np.ndarray) -> "CovMatrix":
        return cls(v_xx=float(a[0, 0]), v_xp=float(0.5 * (a[0, 1] + a[1, 0])), v_pp=float(a[1, 1]))


class MeanPair(BaseModel):
    """
    Conditional means of the filter (pi) and the system (rho).
    """
    model_config = ConfigDict(frozen=True)

    x_pi: float = 0.0
    p_pi: float = 0.0
    x_rho: float = 0.0
    p_rho: float = 0.0

    @model_validator(mode="after")
    def _check_finite(self) -> "MeanPair":
        if not all(math.isfinite(v) for v in self.as_array()):
            raise ValueError("means not finite")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.x_pi, self.p_pi, self.x_rho, self.p_rho])

    @classmethod
    def from_array(cls, a) -> "MeanPair":
        return cls(x_pi=float(a[0]), p_pi=float(a[1]), x_rho=float(a[2]), p_rho=float(a[3]))


class PhysicalScenario(BaseModel):
    """
    Cavity-probed BEC parameters in SI units. Defaults are a 85Rb condensate
    of 10^4 atoms in a 110 kHz trap probed far off resonance at 780 nm.
    """
    model_config = ConfigDict(frozen=True)

    n_atoms: float = Field(1.0e4, gt=0, description="Atom number N_a")
    wavelength: float = Field(780e-9, gt=0, description="Probe wavelength (m)")
    omega_s: float = Field(TWO_PI * 110e3, gt=0, description="Trap angular frequency (rad/s)")
    g0: float = Field(TWO_PI * 12e6, gt=0, description="Cavity QED coupling (rad/s)")
    kappa: float = Field(TWO_PI * 2e6, gt=0, description="Cavity linewidth (rad/s)")
    detuning: float = Field(TWO_PI * 20e9, gt=0, description="Probe detuning from the atomic transition (rad/s)")
    nbar: float = Field(0.8, ge=0, description="Steady-state intracavity photon number")
    mass: float = Field(RB85_MASS, gt=0, description="Atomic mass (kg)")
    hbar: float = Field(HBAR, gt=0, description="Reduced Planck constant (J s)")


class SteadyVariances(BaseModel):
    """
    Closed-form t -> infinity covariances of the filter and of the system.
    """
    model_config = ConfigDict(frozen=True)

    filter: CovMatrix
    system: CovMatrix


class StabilityReport(BaseModel):
    """
    Analytic verdict at one parameter point.
    """
    status: StabilityStatus
    stable: bool
    max_re_lambda: float = Field(..., description="Largest real part of the spectrum of M_inf")
    rate_r: Optional[float] = Field(None, description="Convergence rate -max Re(lambda), when stable")
    e_inf_rho: Optional[float] = Field(None, description="Steady-state system energy, when stable")
    e_inf_0: float = Field(..., description="Identical-case steady-state energy of the baseline")
    r0: float = Field(..., description="Identical-case convergence rate of the baseline")
    energy_ratio: Optional[float] = None
    rate_ratio: Optional[float] = None
    baseline: Baseline = Baseline.SYSTEM
    delay_model: DelayModel = DelayModel.NONE

    @model_validator(mode="after")
    def _check_consistency(self) -> "StabilityReport":
        if self.stable != (self.status == StabilityStatus.STABLE):
            raise ValueError("stable flag disagrees with status")
        if not self.stable and any(
            v is not None for v in (self.rate_r, self.e_inf_rho, self.energy_ratio, self.rate_ratio)
        ):
            raise ValueError("energy and rate fields are only defined for stable points")
        return self


class ZeroMeanConditions(BaseModel):
    """
    Determinants guaranteeing a unique zero-mean steady state.
    """
    det_m1: float
    det_m4: float
    k_excluded: Optional[float] = Field(None, description="Gain for which det(M4) vanishes (tau > 0 only)")
    degenerate_k: bool


# Simulation types

class SimConfig(BaseModel):
    """
    Fixed-step ensemble simulation settings.
    """
    model_config = ConfigDict(frozen=True)

    dt: float = Field(1e-3, gt=0, description="Time step (1/omega_S)")
    t_final: float = Field(50.0, gt=0, description="Integration horizon (1/omega_S)")
    n_paths: int = Field(1000, ge=1, description="Ensemble size")
    seed: int = Field(0, ge=0, description="Master seed")
    record_stride: int = Field(100, ge=1, description="Steps between recorded samples")
    variance_mode: VarianceMode = VarianceMode.STEADY
    scheme: Scheme = Scheme.RK4
    block_size: Optional[int] = Field(None, ge=1, description="Paths per random-stream block")
    n_workers: Optional[int] = Field(None, ge=1, description="Worker threads (None -> OSC_THREADS)")


class NumericClassification(BaseModel):
    stable: bool
    final_ratio: float
    diverged: bool
    e_inf_0: float
    tail_growth: Optional[float] = Field(None, description="Log-energy slope over the second half of the run")


class TrajectoryStats(BaseModel):
    """
    Ensemble statistics at the recorded sample times. Arrays are indexed by
    sample; second_moments has one column per MOMENT_PAIRS entry.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: np.ndarray
    mean_energy: np.ndarray
    std_error: np.ndarray
    second_moments: np.ndarray
    mean_state: np.ndarray
    mean_state_se: np.ndarray
    variance_energy: np.ndarray
    n_paths: int = Field(..., ge=1)
    n_diverged: int = Field(0, ge=0)
    max_tracking_error: float = 0.0

    @model_validator(mode="after")
    def _check_lengths(self) -> "TrajectoryStats":
        n = len(self.times)
        for name in ("mean_energy", "std_error", "second_moments", "mean_state", "mean_state_se", "variance_energy"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name}: expected {n} samples")
        return self

    @field_serializer(
        "times", "mean_energy", "std_error", "second_moments", "mean_state", "mean_state_se", "variance_energy",
    )
    def _array_to_list(self, value: np.ndarray) -> list:
        return np.asarray(value).tolist()

    @property
    def diverged(self) -> bool:
        return self.n_diverged > 0

    @property
    def final_energy(self) -> float:
        return float(self.mean_energy[-1])

    def summary(self) -> Dict[str, Any]:
        """Scalar digest for manifests and logs."""
        return {
            "final_energy": self.final_energy,
            "final_std_error": float(self.std_error[-1]),
            "n_paths": self.n_paths,
            "n_diverged": self.n_diverged,
            "max_tracking_error": self.max_tracking_error,
        }


# Sweep types

AxisName = Literal[
    "alpha_s", "eta_s", "alpha_f", "eta_f", "d_omega_f", "nu", "tau", "k", "alpha", "eta",
]


def _expand(name: str) -> tuple:
    return SLICE_NAMES.get(name, (name,))


class SweepAxis(BaseModel):
    """
    One named parameter range. A single point is allowed when min == max.
    """
    name: AxisName
    min: float
    max: float
    n_points: int = Field(..., ge=1)
    spacing: Spacing = Spacing.LINEAR

    @model_validator(mode="after")
    def _check_range(self) -> "SweepAxis":
        if self.n_points == 1 and self.min != self.max:
            raise ValueError(f"axis {self.name}: n_points must be >= 2 for a nonempty range")
        if self.spacing == Spacing.LOG and not (self.min > 0 and self.max > 0):
            raise ValueError(f"axis {self.name}: log spacing needs positive bounds")
        return self

    def values(self) -> List[float]:
        if self.n_points == 1:
            return [float(self.min)]
        if self.spacing == Spacing.LOG:
            return [float(v) for v in np.geomspace(self.min, self.max, self.n_points)]
        return [float(v) for v in np.linspace(self.min, self.max, self.n_points)]


class SweepSpec(BaseModel):
    """
    A 1-D or 2-D slice of parameter space and how to evaluate it.
    """
    axes: List[SweepAxis] = Field(..., min_length=1, max_length=2)
    fixed: Dict[str, float] = Field(default_factory=dict, description="Values for non-swept parameters")
    method: SweepMethod = SweepMethod.ANALYTIC
    sim: Optional[SimConfig] = None
    k_rule: Union[Literal["k_opt"], float] = "k_opt"
    seed: int = Field(0, ge=0)
    baseline: Optional[Baseline] = None

    @field_validator("fixed")
    @classmethod
    def _check_fixed_names(cls, fixed: Dict[str, float]) -> Dict[str, float]:
        unknown = sorted(set(fixed) - set(PARAM_NAMES) - set(SLICE_NAMES))
        if unknown:
            raise ValueError(f"unknown parameter(s) in fixed: {', '.join(unknown)}")
        return fixed

    @model_validator(mode="after")
    def _check_axes(self) -> "SweepSpec":
        covered: List[str] = []
        for axis in self.axes:
            for name in _expand(axis.name):
                if name in covered:
                    raise ValueError(f"axis {axis.name} overlaps another axis")
                covered.append(name)
        if "k" in covered and self.k_rule != "k_opt":
            raise ValueError("k cannot be both an axis and an explicit k_rule")
        return self

    @property
    def axis_names(self) -> List[str]:
        return [axis.name for axis in self.axes]


class SweepPoint(BaseModel):
    index: int
    coords: List[float]
    method: SweepMethod
    stable: Optional[bool] = None
    status: Optional[StabilityStatus] = None
    energy_ratio: Optional[float] = None
    rate_ratio: Optional[float] = None
    max_re_lambda: Optional[float] = None
    final_ratio: Optional[float] = None
    delay_model: Optional[DelayModel] = None
    error: Optional[str] = None


class SweepResult(BaseModel):
    axes: List[str]
    spec: SweepSpec
    points: List[SweepPoint]
    version: str
    started_at: datetime
    finished_at: datetime


class Boundary(BaseModel):
    """
    Bracketing interval of a stability transition along one axis.
    """
    axis: str
    lower: float
    upper: float
    lower_stable: bool
    evaluations: int

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


# Run bookkeeping

class RunManifest(BaseModel):
    """
    Provenance record written next to every output file.
    """
    version: str
    command: str
    config: Dict[str, Any] = Field(..., description="Fully resolved configuration")
    seed: Optional[int] = None
    method: Optional[str] = None
    started_at: datetime
    finished_at: Optional[datetime] = None
    outputs: List[str] = Field(default_factory=list)
    metadata: Dict[str, Any] = Field(default_factory=dict)
