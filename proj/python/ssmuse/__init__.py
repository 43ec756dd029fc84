"""Subspace MR reconstruction with a learned energy prior."""

from ._ssmuse import (
    ConfigError,
    DomainError,
    EnergyModel,
    IoError,
    SolverError,
    default_config,
    log_t1_grid,
    parse_config,
    read_array,
    run_experiment,
    simulate_ir_signal,
    temporal_basis,
    write_array,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "EnergyModel",
    "IoError",
    "SolverError",
    "default_config",
    "log_t1_grid",
    "parse_config",
    "read_array",
    "run_experiment",
    "simulate_ir_signal",
    "temporal_basis",
    "write_array",
]
