"""Finite-mixture hidden Markov models for intermittently observed multistate processes."""

from .ctmc import IntensityMatrix, TransitionProbabilityMatrix, build_intensity, transition_probability
from .estimate import (
    BayesOptions,
    FitOptions,
    FitResult,
    NormalPrior,
    PosteriorSummary,
    PriorSpec,
    Uniform01Prior,
    diagnostics,
    fit_bayes,
    fit_mle,
    standard_errors,
)
from .epi import cumulative_incidence, derived_quantities, prevalence_curve, prevalence_type
from .identify import (
    equal_likelihood_transform,
    flatness_scan,
    invariance_check,
    replication_study,
    scenario_harness,
)
from .likelihood import (
    LogLikelihood,
    SubjectRecord,
    dataset_loglik,
    death_matrix,
    restricted_path_closed_form,
    sampling_probability,
    subject_loglik,
    visit_matrix,
)
from .model import (
    ComponentSpec,
    ConstraintSet,
    EmissionMatrix,
    FixRatio,
    FixValue,
    FreeParameterization,
    MixtureModelSpec,
    ParameterSet,
    nun_study_model,
    pack,
    unpack,
)
from .simulate import LatentPath, SimulationDesign, panel_observe, simulate_dataset, simulate_path

__version__ = "0.1.0"
