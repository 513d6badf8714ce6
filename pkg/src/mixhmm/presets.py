"""Bundled configurations: the dementia model, its reference parameter sets,
and the simulation-study design used throughout the tests and the CLI.
"""

from __future__ import annotations

import numpy as np

from .model import MixtureModelSpec, ParameterSet, nun_study_model
from .simulate import SimulationDesign

__all__ = [
    "sim_study_truth",
    "sim_study_design",
    "S1_PI_RATIO",
    "nun_reference_estimates",
]

# Initial-probability ratio pi2.2/pi2.1 tied under constraint scenario S1.
S1_PI_RATIO = 0.75


def sim_study_truth() -> ParameterSet:
    """Generating values of the bundled simulation study.

    Intensities follow the fixed ratios (2, 1.5) within type 1 and
    (2.2, 1.8, 2.5) within type 2, scaled so that roughly 20% of subjects
    remain alive at the end of the one-year follow-up window.
    """
    return ParameterSet(
        psi=np.array([0.5, 0.5]),
        pi=(
            np.array([0.7, 0.3, 0.0, 0.0]),
            np.array([0.4, 0.3, 0.3, 0.0, 0.0, 0.0]),
        ),
        rates=(
            {(1, 2): 2.383, (1, 3): 1.191, (2, 4): 1.787},
            {(1, 2): 1.802, (1, 4): 0.819, (2, 3): 2.457, (2, 5): 1.474, (3, 6): 2.047},
        ),
    )


def sim_study_design(seed: int = 0) -> SimulationDesign:
    """Five equally spaced visits on [0, 1]; disease type disclosed for 80% of deaths."""
    return SimulationDesign(
        visit_grid=(0.0, 0.25, 0.5, 0.75, 1.0),
        admin_end=1.0,
        entry_time=0.0,
        disclosure="component",
        p_disc=0.8,
        seed=seed,
    )


def nun_reference_estimates() -> ParameterSet:
    """Reference point estimates for the dementia model (age-75 origin, years).

    Used by the prediction presets and tests; obtained under the constraint
    pi2.2 = 0 (no prevalent pre-dementia pathology at the origin).
    """
    return ParameterSet(
        psi=np.array([1.0 - 0.738, 0.738]),
        pi=(
            np.array([0.977, 1.0 - 0.977, 0.0, 0.0]),
            np.array([0.974, 0.0, 1.0 - 0.974, 0.0, 0.0, 0.0]),
        ),
        rates=(
            {(1, 2): 0.055, (1, 3): 0.088, (2, 4): 0.377},
            {(1, 2): 0.153, (1, 4): 0.033, (2, 3): 0.122, (2, 5): 0.088, (3, 6): 0.254},
        ),
    )


def preset_model() -> MixtureModelSpec:
    return nun_study_model()
