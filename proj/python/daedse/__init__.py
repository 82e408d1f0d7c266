"""Observer-based dynamic state estimation for power-network DAEs."""

from ._core import (
    ConfigError,
    DaedseError,
    InfeasibleError,
    NumericalError,
    StructuralError,
    check,
    load_model,
    rmse,
    run_scenario,
    solve_lav,
    synthesize,
)

__all__ = [
    "ConfigError",
    "DaedseError",
    "InfeasibleError",
    "NumericalError",
    "StructuralError",
    "check",
    "load_model",
    "rmse",
    "run_scenario",
    "solve_lav",
    "synthesize",
]
