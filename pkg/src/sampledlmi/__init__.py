"""Robust state-feedback synthesis for nonlinear systems known through samples."""

from .model import (BoxRegion, Certificate, EllipsoidBallRegion, LftSystem, region_membership,
                    validate_system)
from .sampling import (InferredStructure, NormBounds, SampleSet, compute_gamma, infer_structure,
                       sample_grid)

__version__ = "0.1.0"
