"""Rest-frame relativistic N-body mechanics and micro-canonical statistical mechanics."""
from __future__ import annotations

__version__ = "0.1.0"

from ._base import (
    BandwidthError,
    ModelDomainError,
    NotFittedError,
    NumericError,
    RestFrameError,
    ValidationError,
)
from .canonical import (
    InternalGenerators,
    RelativeState,
    SeparationMatrix,
    WignerPhaseState,
    build_separation_matrix,
    from_relative,
    internal_generators,
    rest_frame_state,
    to_relative,
)
from .dynamics import Trajectory, galilei_limit_scan, hamilton_rhs, integrate
from .ensembles import EnsembleSpec, PartitionEstimate, mc_partition, sample_shell
from .frames import BoostTetrad, JacobiData, build_boost_tetrad, wigner_from_worldlines, worldlines_from_wigner
from .kinetic import JuttnerFit, OneParticleDistribution, RelativeCoordinates
from .models import ModelSpec, free_model, quadratic_model
from .noninertial import GalileiFrame, RelNonInertialFrame, noninertial_partition

__all__ = [
    "BandwidthError", "ModelDomainError", "NotFittedError", "NumericError", "RestFrameError", "ValidationError",
    "InternalGenerators", "RelativeState", "SeparationMatrix", "WignerPhaseState", "build_separation_matrix",
    "from_relative", "internal_generators", "rest_frame_state", "to_relative",
    "Trajectory", "galilei_limit_scan", "hamilton_rhs", "integrate",
    "EnsembleSpec", "PartitionEstimate", "mc_partition", "sample_shell",
    "BoostTetrad", "JacobiData", "build_boost_tetrad", "wigner_from_worldlines", "worldlines_from_wigner",
    "JuttnerFit", "OneParticleDistribution", "RelativeCoordinates",
    "ModelSpec", "free_model", "quadratic_model",
    "GalileiFrame", "RelNonInertialFrame", "noninertial_partition",
]
