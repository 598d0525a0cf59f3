"""Ehrenfest electron-vibrational dynamics of SSH polyacetylene chains."""

from .model import HBAR, NuclearPhase, SshParams, build_h_e, h_e_gradient, lattice_energy_and_force

__version__ = "0.1.0"

__all__ = [
    "HBAR",
    "NuclearPhase",
    "SshParams",
    "build_h_e",
    "h_e_gradient",
    "lattice_energy_and_force",
    "__version__",
]
