"""Reliability-based design optimization with adaptive kriging surrogates
and subset simulation."""

from .augmented import AugmentedSpace, build_space, sphere_indicator, weight_indicator
from .kriging import CorrelationModel, DesignOfExperiments, KrigingModel, correlation, fit
from .optimizer import Performance, RbdoConfig, RbdoProblem, run_rbdo
from .prob import Marginal, RandomVector, StandardNormalMap
from .refine import (
    BoxWeight,
    EvalBudget,
    MarginBracket,
    MarginSpec,
    RefineConfig,
    SphereWeight,
    accuracy_bracket,
    margin_probability,
    reduce_kmeans,
    refine_until_accurate,
    refinement_density,
    sample_candidates,
)
from .reliability import (
    LimitState,
    ReliabilityResult,
    SubsetConfig,
    crude_mc,
    generalized_beta,
    subset_simulation,
    surrogate_cascade,
)

__version__ = "0.1.0"
