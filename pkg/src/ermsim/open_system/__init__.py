"""Lindblad dynamics: quantum trajectories, dense oracle and sideband diagnostics."""
from .diagnostics import (RabiSignal, VacuumFit, blue_sideband_drive, default_components,
                          extract_vacuum_population, unitary_rabi_signal)
from .lindblad import DensityTrajectory, lindblad_dense_evolve
from .mcwf import (BlueSidebandProtocol, McwfResult, SeriesSummary, TrajectoryEnsemble,
                   mcwf_evolve, mcwf_expectation, mcwf_ramp, named_observable)
from .noise import DissipatorSpec, NoiseModel, build_dissipators, scaled_dissipators

__all__ = [
    "RabiSignal", "VacuumFit", "blue_sideband_drive", "default_components",
    "extract_vacuum_population", "unitary_rabi_signal", "DensityTrajectory",
    "lindblad_dense_evolve", "BlueSidebandProtocol", "McwfResult", "SeriesSummary",
    "TrajectoryEnsemble", "mcwf_evolve", "mcwf_expectation", "mcwf_ramp", "named_observable",
    "DissipatorSpec", "NoiseModel", "build_dissipators", "scaled_dissipators",
]
