from oscfb.simulation.sde import classify_numeric, integrate_riccati, simulate_means
from oscfb.simulation.sweep import SweepRunner, detect_instability_boundary, run_sweep

__all__ = [
    "SweepRunner",
    "classify_numeric",
    "detect_instability_boundary",
    "integrate_riccati",
    "run_sweep",
    "simulate_means",
]
