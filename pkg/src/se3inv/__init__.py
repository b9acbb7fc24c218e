"""Degree-4 SE(3)-invariant surface descriptors, genericity audits and fiber-selection reconstruction."""
from .invariants import InvariantDescriptor, compute_descriptor, descriptor_distance
from .moments import compute_rho_moments, convolve_translational
from .surface import load_mesh, make_shape, sample_measure

__version__ = "0.1.0"

__all__ = [
    "InvariantDescriptor",
    "compute_descriptor",
    "compute_rho_moments",
    "convolve_translational",
    "descriptor_distance",
    "load_mesh",
    "make_shape",
    "sample_measure",
]
