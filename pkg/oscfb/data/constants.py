"""
Physical constants and fixed index conventions.

All model quantities are in harmonic-oscillator units of the system trap:
energy in hbar*omega_S, length in sqrt(hbar/(m*omega_S)), time in 1/omega_S.
SI values are only needed to map a physical BEC scenario onto alpha_S.
"""
import math

# CODATA 2018
HBAR = 1.054571817e-34          # J s
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg
RB85_MASS = 85 * ATOMIC_MASS_UNIT

TWO_PI = 2.0 * math.pi

# Ten ensemble second moments E[X_i X_j] in moment-vector order
MOMENT_PAIRS = (
    (0, 0), (0, 1), (0, 2), (0, 3),
    (1, 1), (1, 2), (1, 3),
    (2, 2), (2, 3),
    (3, 3),
)
MOMENT_INDEX = {pair: n for n, pair in enumerate(MOMENT_PAIRS)}

# Scalar model parameters, in ModelParams field order
PARAM_NAMES = ("alpha_s", "eta_s", "alpha_f", "eta_f", "d_omega_f", "nu", "tau", "k")

# Matched slices: one axis value drives both the filter and the system
SLICE_NAMES = {
    "alpha": ("alpha_s", "alpha_f"),
    "eta": ("eta_s", "eta_f"),
}

# Cavity-cooled BEC scenario, separated case
SCENARIO_SEPARATED = {
    "alpha_f": 0.05,
    "alpha_s": 0.1,
    "eta_f": 0.08,
    "eta_s": 0.16,
    "d_omega_f": 1.0,
    "nu": 10.0,
    "tau": 0.1,
}

# Default matched point used when nothing else is given
DEFAULT_MATCHED = {
    "alpha_s": 0.1,
    "eta_s": 0.16,
    "alpha_f": 0.1,
    "eta_f": 0.16,
    "d_omega_f": 0.0,
    "nu": 0.0,
    "tau": 0.0,
}
