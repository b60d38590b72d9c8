"""Extended Rabi model simulator for trapped-ion sideband experiments."""
from .core import (HilbertSpace, ModelParams, QuantumState, Spectrum, TrapParams, build_hamiltonian,
                   build_parity, check_feasibility, diagonalize, lab_time_from_tau, level_dynamics,
                   map_model_to_trap, map_trap_to_model, solve_spectrum, tau_from_lab_time)
from .dynamics import (RampProtocol, down_project, propagate_schrodinger, ramp_outcome, ramp_scan,
                       witness_series)
from .errors import ErmError
from .observables import (classify_emergent, count_emergent_states, entanglement_entropy,
                          peres_lattice, reduced_motional, strength_function, wigner)
from .semiclassics import (classical_energy, classify_phase, critical_set, jc_spectrum_analytic,
                           phase_space_volumes, predict_emergent_counts, smoothed_dos)

__version__ = "0.1.0"

__all__ = [
    "HilbertSpace", "ModelParams", "QuantumState", "Spectrum", "TrapParams", "build_hamiltonian",
    "build_parity", "check_feasibility", "diagonalize", "lab_time_from_tau", "level_dynamics",
    "map_model_to_trap", "map_trap_to_model", "solve_spectrum", "tau_from_lab_time",
    "RampProtocol", "down_project", "propagate_schrodinger", "ramp_outcome", "ramp_scan",
    "witness_series", "ErmError", "classify_emergent", "count_emergent_states",
    "entanglement_entropy", "peres_lattice", "reduced_motional", "strength_function", "wigner",
    "classical_energy", "classify_phase", "critical_set", "jc_spectrum_analytic",
    "phase_space_volumes", "predict_emergent_counts", "smoothed_dos", "__version__",
]
