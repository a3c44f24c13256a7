"""Phase reduction of quantum limit-cycle oscillators under continuous measurement."""

from .errors import QPhaseError
from .hilbert import OscillatorModel, make_annihilation, make_qvdp
from .limit_cycle import CycleOptions, LimitCycle, asymptotic_phase, find_limit_cycle
from .phase_response import PRCTable, backaction_coeffs, homodyne_difference_prcs, prc_along, prc_table
from .phase_sde import PhaseModel, simulate_phase_ito, simulate_phase_pair_common, simulate_phase_stratonovich
from .sse_sim import NoiseSpec, lindblad_evolve, run_ensemble, simulate_heterodyne, simulate_homodyne
from .sun_basis import build_generators

__version__ = "0.1.0"

__all__ = [
    "CycleOptions",
    "LimitCycle",
    "NoiseSpec",
    "OscillatorModel",
    "PRCTable",
    "PhaseModel",
    "QPhaseError",
    "asymptotic_phase",
    "backaction_coeffs",
    "build_generators",
    "find_limit_cycle",
    "homodyne_difference_prcs",
    "lindblad_evolve",
    "make_annihilation",
    "make_qvdp",
    "prc_along",
    "prc_table",
    "run_ensemble",
    "simulate_heterodyne",
    "simulate_homodyne",
    "simulate_phase_ito",
    "simulate_phase_pair_common",
    "simulate_phase_stratonovich",
]
