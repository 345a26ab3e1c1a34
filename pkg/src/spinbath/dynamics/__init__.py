"""Time evolution engines and observables."""
from .bath import (
    ResetModel,
    StochasticTrajectory,
    ancilla_factor,
    evolve_factorized,
    evolve_reset_mc,
    molecule_factorized,
    molecule_reset_mc,
    system_couplings,
)
from .engines import LindbladTerm, evolve_lindblad, evolve_unitary, lindblad_generator
from .observables import (
    LightconeTable,
    OTOCResult,
    Spectrum,
    coupling_graph,
    detect_revivals,
    fid,
    first_revival_amplitude,
    lightcone,
    otoc,
    spectrum,
)
from .records import FIDRecord, TimeGrid, Trajectory

__all__ = [
    "FIDRecord",
    "LightconeTable",
    "LindbladTerm",
    "OTOCResult",
    "ResetModel",
    "Spectrum",
    "StochasticTrajectory",
    "TimeGrid",
    "Trajectory",
    "ancilla_factor",
    "coupling_graph",
    "detect_revivals",
    "evolve_factorized",
    "evolve_lindblad",
    "evolve_reset_mc",
    "evolve_unitary",
    "fid",
    "first_revival_amplitude",
    "lightcone",
    "lindblad_generator",
    "molecule_factorized",
    "molecule_reset_mc",
    "otoc",
    "spectrum",
    "system_couplings",
]
