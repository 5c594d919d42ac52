from oscfb.physics.analytic import classify, steady_variances, build_moment_system
from oscfb.physics.core import build_params, k_opt, validate

__all__ = [
    "build_params",
    "build_moment_system",
    "classify",
    "k_opt",
    "steady_variances",
    "validate",
]
