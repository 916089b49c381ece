"""Blind source separation with one reverse-diffusion generator and one
adaptive Gaussian-process prior per source."""

from .datagen import ExperimentSpec, generate, make_mixture, make_sources
from .errors import (CheckpointError, DegenerateMixing, GenerationFailure, NotPositiveDefinite,
                     NumericalFault, ShapeError, StradiffError)
from .estimate import MatchResult, SourceEstimate, match_sources, mc_estimate, plug_in_reconstruction
from .objective import LossBreakdown, ModelState, TrainConfig, fit, init_state, train_step

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "DegenerateMixing", "ExperimentSpec", "GenerationFailure", "LossBreakdown",
    "MatchResult", "ModelState", "NotPositiveDefinite", "NumericalFault", "ShapeError",
    "SourceEstimate", "StradiffError", "TrainConfig", "fit", "generate", "init_state",
    "make_mixture", "make_sources", "match_sources", "mc_estimate", "plug_in_reconstruction",
    "train_step",
]
