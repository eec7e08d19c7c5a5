"""Simulation and reconstruction toolkit for accelerated 3D multi-parametric
quantitative MRI.

The package covers the full retrospective pipeline: digital phantom and coil
map generation, Bloch signal simulation for VFA-mEGRE and T2IR-GRE sequences,
undersampled multi-coil k-space synthesis, low-rank subspace extraction,
classical baseline reconstructions (zero-filled subspace, ADMM-TV, voxelwise
NLLS fitting), and a dual-prior neural-field reconstruction method, plus
metrics and experiment orchestration.
"""

from mpqmri.phantom import GroundTruth, CoilMaps, make_phantom, make_coil_maps
from mpqmri.signal_models import (
    SequenceProtocol,
    WeightedImages,
    signal_vfa_megre,
    signal_t2ir_gre,
    build_dictionary,
)
from mpqmri.acquisition import (
    SamplingMask,
    KSpaceData,
    forward,
    adjoint,
    make_mask,
    acceleration_factor,
    add_noise,
)
from mpqmri.subspace import (
    TemporalBasis,
    SpatialBases,
    temporal_basis,
    compose_weighted,
    project_to_subspace,
)

__all__ = [
    "GroundTruth",
    "CoilMaps",
    "make_phantom",
    "make_coil_maps",
    "SequenceProtocol",
    "WeightedImages",
    "signal_vfa_megre",
    "signal_t2ir_gre",
    "build_dictionary",
    "SamplingMask",
    "KSpaceData",
    "forward",
    "adjoint",
    "make_mask",
    "acceleration_factor",
    "add_noise",
    "TemporalBasis",
    "SpatialBases",
    "temporal_basis",
    "compose_weighted",
    "project_to_subspace",
]

__version__ = "0.1.0"
