"""Identifiability and estimability probes.

The two-component dementia model admits an exact equal-likelihood family on
"restricted path" data (followed from time 0, a disease-free run, a dementia
run, an exactly observed death, no auxiliary information): rescaling the
initial mass of the first latent state against its onward rate leaves every
such likelihood unchanged.  This module exposes that transform, a generic
numeric invariance checker, likelihood flatness scans, and the constraint
scenario harness used to compare estimability under S0-S4.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .likelihood import DatasetEvaluator, SubjectRecord, dataset_loglik
from .model import (
    ConstraintSet,
    FixRatio,
    FreeParameterization,
    MixtureModelSpec,
    ParameterSet,
    nun_study_model,
)
from .rng import DOMAIN_REPLICATION, DOMAIN_SCENARIO, derive_seed, substream
from .simulate import SimulationDesign, simulate_dataset

__all__ = [
    "TransformReport",
    "equal_likelihood_transform",
    "invariance_check",
    "synthetic_restricted_path_records",
    "is_restricted_path",
    "flatness_scan",
    "FlatnessScan",
    "scenario_constraints",
    "replication_study",
    "scenario_harness",
    "ReplicationStudy",
    "SCENARIOS",
]

SCENARIOS = ("S0", "S1", "S2", "S3", "S4")
BOUNDARY_RATE = 1e-6


# ---------------------------------------------------------------------------
# Equal-likelihood transform and invariance checking
# ---------------------------------------------------------------------------


def equal_likelihood_transform(params: ParameterSet, rho1: float, rho2: float) -> ParameterSet:
    """Rescaled parameter set with identical restricted-path likelihood.

    ``rho1`` trades component 1's initial disease-free mass against its
    dementia onset rate; ``rho2`` does the same for component 2's pathology
    state.  Admissible values keep all probabilities and rates positive;
    ``rho1 = rho2 = 1`` is the identity.
    """
    model = nun_study_model()
    params.validate(model)
    r1, r2 = dict(params.rates[0]), dict(params.rates[1])
    pi11 = float(params.pi[0][0])
    pi12 = float(params.pi[0][1])
    pi21, pi22 = float(params.pi[1][0]), float(params.pi[1][1])

    hi1 = 1.0 / pi11 if pi11 > 0 else math.inf
    stated = 1.0 / (pi12 + pi22) if pi12 + pi22 > 0 else math.inf
    valid = 1.0 / (pi21 + pi22) if pi21 + pi22 > 0 else math.inf
    hi2 = min(stated, valid)
    if not 0 < rho1 < hi1:
        raise ValueError(f"rho1 must lie in (0, {hi1:.6g}), got {rho1:g}")
    if not 0 < rho2 < hi2:
        raise ValueError(f"rho2 must lie in (0, {hi2:.6g}), got {rho2:g}")

    new_l113 = (1.0 - 1.0 / rho1) * r1[(1, 2)] + r1[(1, 3)]
    if new_l113 <= 0:
        raise ValueError(f"transformed rate lambda1.1.3 = {new_l113:.6g} is not positive")
    new_l225 = (1.0 - 1.0 / rho2) * r2[(2, 3)] + r2[(2, 5)]
    if new_l225 <= 0:
        raise ValueError(f"transformed rate lambda2.2.5 = {new_l225:.6g} is not positive")

    r1_star = {(1, 2): r1[(1, 2)] / rho1, (1, 3): new_l113, (2, 4): r1[(2, 4)]}
    r2_star = {
        (1, 2): r2[(1, 2)],
        (1, 4): r2[(1, 4)],
        (2, 3): r2[(2, 3)] / rho2,
        (2, 5): new_l225,
        (3, 6): r2[(3, 6)],
    }
    pi1_star = np.array([rho1 * pi11, 1.0 - rho1 * pi11, 0.0, 0.0])
    pi2_star = np.array([rho2 * pi21, rho2 * pi22, 1.0 - rho2 * (pi21 + pi22), 0.0, 0.0, 0.0])
    star = ParameterSet(psi=params.psi, pi=(pi1_star, pi2_star), rates=(r1_star, r2_star))
    star.validate(model)
    return star


def is_restricted_path(model: MixtureModelSpec, record: SubjectRecord) -> bool:
    """Followed from 0, a 1-run then a 2-run of visits, exact death, no auxiliary info."""
    if record.entry_time != 0.0 or record.delta != 1 or record.aux is not None:
        return False
    states = record.visit_states
    n_free = sum(1 for s in states if s == 1)
    return (
        n_free >= 1
        and n_free < len(states)
        and states == (1,) * n_free + (2,) * (len(states) - n_free)
    )


@dataclass(frozen=True)
class TransformReport:
    theta: ParameterSet
    theta_star: ParameterSet
    max_abs_loglik_gap: float
    tolerance: float
    verdict: str  # "invariant" | "distinguishable"


def invariance_check(
    model: MixtureModelSpec,
    records: list[SubjectRecord],
    theta: ParameterSet,
    theta_star: ParameterSet,
    tol: float = 1e-8,
) -> TransformReport:
    """Largest per-subject log-likelihood gap between two parameter sets.

    The data must match the restricted path pattern; the transform's equality
    is exact only there.
    """
    theta.validate(model)
    theta_star.validate(model)
    for i, r in enumerate(records):
        if not is_restricted_path(model, r):
            raise ValueError(f"record {i} does not match the restricted path pattern")
    a = dataset_loglik(model, theta, records).per_subject
    b = dataset_loglik(model, theta_star, records).per_subject
    gap = float(np.max(np.abs(a - b))) if len(records) else 0.0
    verdict = "invariant" if gap <= tol else "distinguishable"
    return TransformReport(
        theta=theta, theta_star=theta_star, max_abs_loglik_gap=gap, tolerance=tol, verdict=verdict
    )


def synthetic_restricted_path_records(
    n: int,
    rng: np.random.Generator,
    max_visits: int = 6,
    gap_range: tuple[float, float] = (0.1, 0.6),
) -> list[SubjectRecord]:
    """Restricted-path records with varied visit layouts.

    The invariance above is an algebraic identity in the likelihood, so the
    records need not be drawn from any particular parameter value.
    """
    records = []
    for _ in range(n):
        k = int(rng.integers(2, max_visits + 1))
        n_free = int(rng.integers(1, k))
        gaps = rng.uniform(*gap_range, size=k)
        times = np.concatenate([[0.0], np.cumsum(gaps)[:-1]])
        death = float(times[-1] + rng.uniform(*gap_range))
        records.append(
            SubjectRecord(
                entry_time=0.0,
                visit_times=tuple(times),
                visit_states=(1,) * n_free + (2,) * (k - n_free),
                death_time=death,
                death_state=3,
            )
        )
    return records


# ---------------------------------------------------------------------------
# Flatness scans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlatnessScan:
    offsets: np.ndarray
    loglik: np.ndarray
    center_loglik: float
    drop_minus: float
    drop_plus: float


def flatness_scan(
    model: MixtureModelSpec,
    records: list[SubjectRecord],
    free_vector_hat: np.ndarray,
    direction: np.ndarray,
    half_width: float,
    n_points: int,
    constraints: ConstraintSet | None = None,
) -> FlatnessScan:
    """Log likelihood along a ray through ``free_vector_hat``.

    Non-finite evaluations are recorded as NaN points, not raised.  The
    reported drops are ``loglik(0) - loglik(+-half_width)``.
    """
    x_hat = np.asarray(free_vector_hat, dtype=float)
    direction = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(direction)
    if norm == 0 or not np.all(np.isfinite(direction)):
        raise ValueError("direction must be a nonzero finite vector")
    direction = direction / norm
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    layout = FreeParameterization(model, constraints)
    evaluator = DatasetEvaluator(model, list(records))

    def loglik_at(offset: float) -> float:
        try:
            params = layout.unpack(x_hat + offset * direction)
            return evaluator.loglik(params).value
        except (ValueError, FloatingPointError, np.linalg.LinAlgError):
            return math.nan

    offsets = np.array([0.0]) if n_points == 1 else np.linspace(-half_width, half_width, n_points)
    values = np.array([loglik_at(o) for o in offsets])
    center = loglik_at(0.0)
    drop_minus = center - loglik_at(-half_width)
    drop_plus = center - loglik_at(half_width)
    return FlatnessScan(
        offsets=offsets,
        loglik=values,
        center_loglik=center,
        drop_minus=drop_minus,
        drop_plus=drop_plus,
    )


# ---------------------------------------------------------------------------
# Constraint scenarios and the replication harness
# ---------------------------------------------------------------------------


def scenario_constraints(scenario: str, truth: ParameterSet) -> ConstraintSet:
    """Constraint set S0-S4 with the tied ratios evaluated at the true values."""
    r1, r2 = truth.rates[0], truth.rates[1]
    pi2 = truth.pi[1]
    options = {
        "S0": (),
        "S1": (FixRatio("pi2.2", "pi2.1", float(pi2[1] / pi2[0])),),
        "S2": (FixRatio("lambda2.1.4", "lambda1.1.3", r2[(1, 4)] / r1[(1, 3)]),),
        "S3": (
            FixRatio("pi2.2", "pi2.1", float(pi2[1] / pi2[0])),
            FixRatio("lambda2.1.4", "lambda1.1.3", r2[(1, 4)] / r1[(1, 3)]),
        ),
        "S4": (FixRatio("lambda2.3.6", "lambda2.1.4", r2[(3, 6)] / r2[(1, 4)]),),
    }
    if scenario not in options:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    return ConstraintSet(options[scenario])


@dataclass
class ReplicationStudy:
    """Aggregated estimates across simulate-and-fit replications."""

    param_names: list[str]
    true_values: dict[str, float]
    estimates: np.ndarray  # (n_ok, n_params)
    mean: dict[str, float]
    empirical_se: dict[str, float]
    boundary_fraction: dict[str, float]
    coverage: dict[str, float] | None
    n_ok: int
    failures: list[tuple[int, str]]


def _one_replication(args) -> tuple[int, dict | None, str | None]:
    from .estimate import FitOptions, fit_mle, standard_errors

    (model, truth, constraints, design, n, rep, seed, fit_options, compute_ci) = args
    sim_seed = derive_seed(seed, DOMAIN_REPLICATION, 2 * rep)
    fit_seed = derive_seed(seed, DOMAIN_REPLICATION, 2 * rep + 1)
    data = simulate_dataset(model, truth, n, replace(design, seed=sim_seed))
    options = fit_options if fit_options is not None else FitOptions()
    options = replace(options, seed=fit_seed)
    try:
        fit = fit_mle(model, data, constraints, options)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        return rep, None, f"fit failed: {exc}"
    layout = FreeParameterization(model, constraints)
    names = layout.natural_names()
    values = layout.natural_values(fit.params_hat)
    out = {
        "estimates": dict(zip(names, values.tolist())),
        "loglik": fit.loglik,
        "converged": fit.converged,
    }
    if compute_ci:
        try:
            se = standard_errors(model, data, constraints, fit.free_vector_hat)
            out["ci"] = se.ci
        except (ValueError, np.linalg.LinAlgError) as exc:
            out["ci"] = {}
            out["se_error"] = str(exc)
    return rep, out, None


def replication_study(
    model: MixtureModelSpec,
    truth: ParameterSet,
    constraints: ConstraintSet | None,
    design: SimulationDesign,
    n: int,
    replications: int,
    seed: int,
    fit_options=None,
    compute_ci: bool = False,
    workers: int | None = 1,
) -> ReplicationStudy:
    """Simulate-and-fit ``replications`` cohorts of size n at ``truth``.

    Replications use independent substreams of ``seed`` and reduce in index
    order, so results are identical for any worker count.
    """
    layout = FreeParameterization(model, constraints)
    names = layout.natural_names()
    truth_values = dict(zip(names, layout.natural_values(truth).tolist()))
    rate_names = [nm for nm in names if nm.startswith("lambda")]

    jobs = [
        (model, truth, constraints, design, n, rep, seed, fit_options, compute_ci)
        for rep in range(replications)
    ]
    if workers is not None and workers <= 1:
        results = [_one_replication(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_replication, jobs, chunksize=1))
    results.sort(key=lambda r: r[0])

    failures = [(rep, msg) for rep, _, msg in results if msg is not None]
    ok = [out for _, out, msg in results if msg is None]
    est_matrix = np.array([[out["estimates"][nm] for nm in names] for out in ok])

    mean = {}
    emp_se = {}
    boundary = {}
    for k, nm in enumerate(names):
        col = est_matrix[:, k] if len(ok) else np.array([])
        mean[nm] = float(col.mean()) if col.size else math.nan
        emp_se[nm] = float(col.std(ddof=1)) if col.size > 1 else math.nan
        if nm in rate_names:
            boundary[nm] = float(np.mean(col < BOUNDARY_RATE)) if col.size else math.nan

    coverage = None
    if compute_ci:
        coverage = {}
        for nm in names:
            hits = []
            for out in ok:
                ci = out.get("ci", {}).get(nm)
                if ci is not None and np.isfinite(ci[0]) and np.isfinite(ci[1]):
                    hits.append(ci[0] <= truth_values[nm] <= ci[1])
            coverage[nm] = float(np.mean(hits)) if hits else math.nan

    return ReplicationStudy(
        param_names=names,
        true_values=truth_values,
        estimates=est_matrix,
        mean=mean,
        empirical_se=emp_se,
        boundary_fraction=boundary,
        coverage=coverage,
        n_ok=len(ok),
        failures=failures,
    )


def scenario_harness(
    model: MixtureModelSpec,
    truth: ParameterSet,
    scenarios,
    n: int,
    replications: int,
    seed: int,
    design: SimulationDesign,
    fit_options=None,
    workers: int | None = 1,
) -> dict[str, ReplicationStudy]:
    """Run the replication study under each requested constraint scenario."""
    results = {}
    for k, scenario in enumerate(scenarios):
        constraints = scenario_constraints(scenario, truth)
        results[scenario] = replication_study(
            model,
            truth,
            constraints,
            design,
            n,
            replications,
            derive_seed(seed, DOMAIN_SCENARIO, k),
            fit_options=fit_options,
            compute_ci=False,
            workers=workers,
        )
    return results
