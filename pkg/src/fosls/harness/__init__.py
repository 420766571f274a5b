"""Experiment runner: configuration, experiments, output files and the CLI."""
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (
    run_adaptive,
    run_coercivity_probe,
    run_convergence,
    run_decomposition_check,
    run_identities,
)
from .io import export_csv, export_vtk, read_csv, write_manifest

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "run_adaptive",
    "run_coercivity_probe",
    "run_convergence",
    "run_decomposition_check",
    "run_identities",
    "export_csv",
    "export_vtk",
    "read_csv",
    "write_manifest",
]
