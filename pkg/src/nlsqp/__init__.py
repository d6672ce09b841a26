"""Quasi-periodic solutions of the NLS equation on the torus.

Construction and verification of small-amplitude time quasi-periodic
solutions of i u_t = -Lap(u) + |u|^{2p} u on T^d: sparse lattice Fourier
algebra, bi-characteristic resonance geometry, admissibility checks,
certified block inversion of the linearized operator, and the
amplitude-frequency-modulating Newton iteration.
"""

from .lattice import (
    Box,
    FrequencyVector,
    ProblemSpec,
    SiteIndex,
    SparseSeries,
    conjugate_flip,
    conv_power,
    convolve,
    default_box,
    linear_solution,
    make_spec,
    site,
)

__all__ = [
    "Box",
    "FrequencyVector",
    "ProblemSpec",
    "SiteIndex",
    "SparseSeries",
    "conjugate_flip",
    "conv_power",
    "convolve",
    "default_box",
    "linear_solution",
    "make_spec",
    "site",
]

__version__ = "0.1.0"
