"""Rank-1 crowd-rating aggregation with residual-stability reweighting.

Library layout:

* :mod:`notefactor.model` - domain types, prediction, centering, thresholds
* :mod:`notefactor.factorization` - the regularized rank-1 solver and filters
* :mod:`notefactor.twostage` - inverse-variance reweighted refitting
* :mod:`notefactor.simulation` - strategic-conformity data generator
* :mod:`notefactor.theory` - closed-form predictions and their Monte Carlo checks
* :mod:`notefactor.evaluation` - weekly rolling out-of-sample evaluation
* :mod:`notefactor.stats` - panel/permutation statistics
* :mod:`notefactor.cli` - the ``notefactor`` command-line entry point
"""

from .factorization import (
    FitConfig,
    FitResult,
    WeightVector,
    filter_observations,
    fit,
    fix_factor_signs,
)
from .model import (
    LatentParams,
    NoteStatus,
    ObservationSet,
    RatingEvent,
    canonical_center,
    classify_all,
    classify_note,
    decenter_note_intercept,
    discretize_report,
    predict,
)
from .simulation import SimConfig, SimTruth, generate_dataset, sample_population
from .twostage import TwoStageResult, two_stage_fit

__all__ = [
    "FitConfig",
    "FitResult",
    "LatentParams",
    "NoteStatus",
    "ObservationSet",
    "RatingEvent",
    "SimConfig",
    "SimTruth",
    "TwoStageResult",
    "WeightVector",
    "canonical_center",
    "classify_all",
    "classify_note",
    "decenter_note_intercept",
    "discretize_report",
    "filter_observations",
    "fit",
    "fix_factor_signs",
    "generate_dataset",
    "predict",
    "sample_population",
    "two_stage_fit",
]

__version__ = "0.1.0"
