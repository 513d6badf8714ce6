"""Prevalence, cumulative incidence, and interpretive summaries.

All quantities are computed on the model's internal time axis (t = 0 at the
study origin); display offsets such as an age origin are a reporting concern
handled by the CLI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ctmc import transition_probability
from .model import MixtureModelSpec, ParameterSet, is_nun_structure

__all__ = [
    "PrevalenceCurve",
    "prevalence_type",
    "prevalence_curve",
    "cumulative_incidence",
    "derived_quantities",
    "DerivedQuantities",
]


@dataclass(frozen=True)
class PrevalenceCurve:
    """All-cause and per-type prevalence over a time grid."""

    ages: np.ndarray
    all_cause: np.ndarray
    by_type: tuple[np.ndarray, ...]


def _occupancy(model: MixtureModelSpec, params: ParameterSet, m: int, t: float) -> np.ndarray:
    """Latent state distribution of component m at time t (row vector)."""
    p = transition_probability(params.intensity(model, m), t).probs
    return params.pi[m - 1] @ p


def prevalence_type(
    model: MixtureModelSpec,
    params: ParameterSet,
    t: float,
    m: int,
    disease_obs_state: int,
) -> float:
    """P(type m and observed in ``disease_obs_state`` | alive) at time t."""
    if disease_obs_state in model.obs_absorbing:
        raise ValueError("disease_obs_state must be a non-absorbing observed state")
    if t < 0:
        raise ValueError("t must be >= 0")
    params.validate(model)
    denom = 0.0
    for mm in range(1, model.M + 1):
        occ = _occupancy(model, params, mm, t)
        denom += params.psi[mm - 1] * float(occ @ model.alive_vector(mm))
    if denom <= 0.0:
        raise ValueError(f"entire population is absorbed at t = {t:g}; prevalence undefined")
    occ = _occupancy(model, params, m, t)
    mask = model.components[m - 1].emission.mask(disease_obs_state)
    num = params.psi[m - 1] * float(occ @ mask)
    return num / denom


def prevalence_curve(
    model: MixtureModelSpec,
    params: ParameterSet,
    age_grid,
    disease_obs_state: int = 2,
) -> PrevalenceCurve:
    """Per-type and all-cause prevalence evaluated on an increasing grid."""
    grid = np.asarray(age_grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("age grid must be nonempty and strictly increasing")
    by_type = [np.empty(grid.size) for _ in range(model.M)]
    for k, t in enumerate(grid):
        for m in range(1, model.M + 1):
            by_type[m - 1][k] = prevalence_type(model, params, float(t), m, disease_obs_state)
    all_cause = np.sum(by_type, axis=0)
    return PrevalenceCurve(ages=grid, all_cause=all_cause, by_type=tuple(by_type))


def cumulative_incidence(
    model: MixtureModelSpec,
    params: ParameterSet,
    t: float,
    m: int,
    target_latent_states,
    start_state: int | None = None,
) -> float:
    """Probability that component m's path has entered ``target_latent_states`` by t.

    Requires the target set to be closed under the transition structure, so
    that (by progressivity) having-ever-entered equals currently-occupying.
    """
    comp = model.components[m - 1]
    targets = set(int(s) for s in target_latent_states)
    if not targets <= set(range(1, comp.n_states + 1)):
        raise ValueError("target states outside the component state space")
    for s in targets:
        for j in comp.successors(s):
            if j not in targets:
                raise ValueError(
                    f"target set is not downstream-closed: state {s} can move to {j}; "
                    "occupancy at t would undercount ever-entry"
                )
    if start_state is None:
        start_state = comp.transient_states[0]
    p = transition_probability(params.intensity(model, m), t).probs
    return float(p[start_state - 1, [s - 1 for s in sorted(targets)]].sum())


@dataclass(frozen=True)
class DerivedQuantities:
    """Interpretive summaries of the two-component dementia model.

    ``sojourn_years`` holds mean sojourn times 1/(total exit rate) per
    transient latent state; ``progression_years`` the mean waiting times of
    the individual progression clocks; ``mortality_rate_ratio`` the death rate
    with disease over the death rate without, per component.
    """

    sojourn_years: dict[str, float]
    progression_years: dict[str, float]
    mortality_rate_ratio: dict[str, float]
    ad_fraction: float
    infinite_sojourn: tuple[str, ...] = ()


def derived_quantities(params: ParameterSet, model: MixtureModelSpec | None = None) -> DerivedQuantities:
    from .model import nun_study_model

    model = model if model is not None else nun_study_model()
    if not is_nun_structure(model):
        raise ValueError("derived_quantities requires the two-component dementia model structure")
    params.validate(model)
    r1, r2 = params.rates[0], params.rates[1]

    sojourn: dict[str, float] = {}
    infinite: list[str] = []
    for m, comp in enumerate(model.components, start=1):
        for s in comp.transient_states:
            total = sum(params.rates[m - 1][(s, j)] for j in comp.successors(s))
            key = f"type{m}_state{s}"
            if total > 0:
                sojourn[key] = 1.0 / total
            else:
                sojourn[key] = math.inf
                infinite.append(key)

    progression = {
        "type1_dementia_onset": 1.0 / r1[(1, 2)],
        "type2_pathology_onset": 1.0 / r2[(1, 2)],
        "type2_dementia_after_pathology": 1.0 / r2[(2, 3)],
    }
    mortality = {
        "type1": r1[(2, 4)] / r1[(1, 3)],
        "type2": r2[(3, 6)] / r2[(1, 4)],
    }
    return DerivedQuantities(
        sojourn_years=sojourn,
        progression_years=progression,
        mortality_rate_ratio=mortality,
        ad_fraction=float(params.psi[1]),
        infinite_sojourn=tuple(infinite),
    )
