"""Mixture hidden Markov likelihood for panel data with exact death times.

Each subject contributes, per latent component, a chain of factors: the
left-truncation (sampling) probability, one transition-times-emission factor
per scheduled visit, an intensity-weighted factor at an exactly observed death
time, and a terminal 0/1 vector encoding auxiliary end-state information.
The forward vector is renormalized after every factor and the scale is
accumulated in log space, so long follow-up cannot underflow.

``dataset_loglik`` evaluates records in a canonical content-sorted order and
sums per-subject values after sorting, making the total invariant (bit for
bit) under permutation of the input records.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctmc import transition_probability, transition_probability_stack
from .model import MixtureModelSpec, ParameterSet

__all__ = [
    "SubjectRecord",
    "LogLikelihood",
    "DegenerateConditioningError",
    "validate_record",
    "sampling_probability",
    "visit_matrix",
    "death_matrix",
    "subject_loglik",
    "dataset_loglik",
    "restricted_path_closed_form",
]


class DegenerateConditioningError(ValueError):
    """Every mixture component with positive weight has sampling probability 0."""


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's observation history.

    ``visit_times`` starts at the study entry time; visit states are observed
    non-absorbing states.  An exactly observed death is recorded through
    ``death_time``/``death_state``; ``aux`` optionally restricts, per latent
    component, the set of states the path may end in (``None`` entries mean
    "no information", i.e. the full state set).
    """

    entry_time: float
    visit_times: tuple[float, ...]
    visit_states: tuple[int, ...]
    death_time: float | None = None
    death_state: int | None = None
    aux: tuple[tuple[int, ...] | None, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "visit_times", tuple(float(t) for t in self.visit_times))
        object.__setattr__(self, "visit_states", tuple(int(s) for s in self.visit_states))
        if self.aux is not None:
            canon = tuple(None if a is None else tuple(sorted(set(a))) for a in self.aux)
            object.__setattr__(self, "aux", canon)

    @property
    def delta(self) -> int:
        """1 when the subject's death time was observed exactly."""
        return 1 if self.death_time is not None else 0

    @property
    def n_visits(self) -> int:
        return len(self.visit_times)


def _canonical_aux(record: SubjectRecord, model: MixtureModelSpec) -> tuple[tuple[int, ...], ...]:
    full = tuple(tuple(range(1, comp.n_states + 1)) for comp in model.components)
    if record.aux is None:
        return full
    return tuple(full[m] if a is None else a for m, a in enumerate(record.aux))


def _sort_key(record: SubjectRecord, aux: tuple[tuple[int, ...], ...]) -> tuple:
    return (
        record.entry_time,
        record.visit_times,
        record.visit_states,
        record.death_time if record.death_time is not None else float("inf"),
        record.death_state or 0,
        aux,
    )


def validate_record(model: MixtureModelSpec, record: SubjectRecord) -> None:
    """Raise ValueError when ``record`` is inconsistent with ``model``."""
    t = np.asarray(record.visit_times)
    if t.size == 0:
        raise ValueError("record needs at least one visit")
    if not np.all(np.isfinite(t)) or record.entry_time < 0:
        raise ValueError("visit times and entry time must be finite and non-negative")
    if record.visit_times[0] != record.entry_time:
        raise ValueError("first visit must be at the entry time")
    if np.any(np.diff(t) <= 0):
        raise ValueError("visit times must be strictly increasing")
    if len(record.visit_states) != len(record.visit_times):
        raise ValueError("visit_states and visit_times must have equal length")
    dy = set(model.obs_absorbing)
    for s in record.visit_states:
        if not 1 <= s <= model.obs_states:
            raise ValueError(f"visit state {s} outside the observed state space")
        if s in dy:
            raise ValueError(f"visit state {s} is absorbing; deaths are recorded via death_time")
    if (record.death_time is None) != (record.death_state is None):
        raise ValueError("death_time and death_state must be given together")
    if record.death_time is not None:
        if not np.isfinite(record.death_time) or record.death_time <= record.visit_times[-1]:
            raise ValueError("death_time must exceed the last visit time")
        if record.death_state not in dy:
            raise ValueError(f"death_state {record.death_state} not in the observed absorbing set")
    if record.aux is not None:
        if len(record.aux) != model.M:
            raise ValueError("aux must have one entry per component")
        any_nonempty = False
        for m, a in enumerate(record.aux, start=1):
            if a is None:
                any_nonempty = True
                continue
            states = set(a)
            if not states <= set(range(1, model.components[m - 1].n_states + 1)):
                raise ValueError(f"aux set for component {m} contains unknown states")
            if states:
                any_nonempty = True
        if not any_nonempty:
            raise ValueError("at least one auxiliary end-state set must be nonempty")


@dataclass(frozen=True)
class LogLikelihood:
    value: float
    per_subject: np.ndarray | None = None


def sampling_probability(model: MixtureModelSpec, params: ParameterSet, m: int, t1: float) -> float:
    """Probability that a component-m subject is alive (observable) at entry time ``t1``."""
    if t1 < 0:
        raise ValueError("t1 must be >= 0")
    lam = params.intensity(model, m)
    p = transition_probability(lam, t1).probs
    g = float(params.pi[m - 1] @ p @ model.alive_vector(m))
    return min(max(g, 0.0), 1.0)


def visit_matrix(
    model: MixtureModelSpec, params: ParameterSet, m: int, t_prev: float, t_k: float, y_k: int
) -> np.ndarray:
    """Transition-probability factor for a visit observed in state ``y_k``."""
    if t_k < t_prev:
        raise ValueError("t_k must be >= t_prev")
    comp = model.components[m - 1]
    mask = comp.emission.mask(y_k)
    p = transition_probability(params.intensity(model, m), t_k - t_prev).probs
    return p * mask[None, :]


def death_matrix(
    model: MixtureModelSpec, params: ParameterSet, m: int, t_last: float, t_death: float, death_state: int
) -> np.ndarray:
    """Intensity-weighted factor for a death observed exactly at ``t_death``."""
    if t_death <= t_last:
        raise ValueError("t_death must exceed the last visit time")
    if death_state not in model.obs_absorbing:
        raise ValueError(f"death_state {death_state} not in the observed absorbing set")
    comp = model.components[m - 1]
    mask = comp.emission.mask(death_state)
    lam = params.intensity(model, m)
    p = transition_probability(lam, t_death - t_last).probs
    return (p @ lam.rates) * mask[None, :]


class _ComponentCache:
    """Parameter-independent evaluation layout of one component over a dataset."""

    __slots__ = ("dts", "groups", "jdim")

    def __init__(self, model, m, records, aux):
        comp = model.components[m - 1]
        self.jdim = comp.n_states
        dt_values: set[float] = set()
        for r in records:
            dt_values.add(r.entry_time)
            dt_values.update(float(d) for d in np.diff(r.visit_times))
            if r.death_time is not None:
                dt_values.add(r.death_time - r.visit_times[-1])
        dts = sorted(dt_values)
        self.dts = np.array(dts)
        dt_index = {dt: i for i, dt in enumerate(dts)}

        by_shape: dict[tuple[int, int], list[int]] = {}
        for i, r in enumerate(records):
            by_shape.setdefault((r.n_visits, r.delta), []).append(i)

        self.groups = []
        for (k, delta), idx_list in sorted(by_shape.items()):
            idx = np.array(idx_list)
            state_arr = np.array([records[i].visit_states for i in idx])
            step_idx = np.empty((idx.size, k), dtype=np.intp)
            for row, i in enumerate(idx):
                r = records[i]
                step_idx[row, 0] = dt_index[r.entry_time]
                for kk in range(1, k):
                    step_idx[row, kk] = dt_index[r.visit_times[kk] - r.visit_times[kk - 1]]
            if delta:
                death_idx = np.array(
                    [dt_index[records[i].death_time - records[i].visit_times[-1]] for i in idx],
                    dtype=np.intp,
                )
                death_states = np.array([records[i].death_state for i in idx])
            else:
                death_idx = death_states = None
            rvec = np.zeros((idx.size, self.jdim))
            for row, i in enumerate(idx):
                for s_end in aux[i][m - 1]:
                    rvec[row, s_end - 1] = 1.0
            self.groups.append(
                {
                    "idx": idx,
                    "k": k,
                    "t1_idx": step_idx[:, 0].copy(),
                    "step_idx": step_idx,
                    "states": state_arr,
                    "death_idx": death_idx,
                    "death_states": death_states,
                    "rvec": rvec,
                }
            )


class DatasetEvaluator:
    """Reusable likelihood evaluator for a fixed dataset.

    Prepares the canonical record order, visit layouts, and horizon index
    tables once; each ``loglik(params)`` call then reduces to batched matrix
    exponentials and vectorized forward recursions.
    """

    _MEMO_SIZE = 8  # finite-difference sweeps revisit unchanged components

    def __init__(self, model: MixtureModelSpec, records: list[SubjectRecord], *, validate: bool = True):
        self.model = model
        self.n = len(records)
        if validate:
            for i, r in enumerate(records):
                try:
                    validate_record(model, r)
                except ValueError as exc:
                    raise ValueError(f"record {i}: {exc}") from exc
        aux_all = [_canonical_aux(r, model) for r in records]
        self.order = sorted(range(self.n), key=lambda i: _sort_key(records[i], aux_all[i]))
        recs = [records[i] for i in self.order]
        aux = [aux_all[i] for i in self.order]
        self.components = [
            _ComponentCache(model, m, recs, aux) for m in range(1, model.M + 1)
        ]
        self._emissions = [comp.emission.e.astype(float) for comp in model.components]
        self._alive = [model.alive_vector(m) for m in range(1, model.M + 1)]
        self._memo: list[dict] = [{} for _ in model.components]

    def _component_pass(self, params: ParameterSet, m: int) -> tuple[np.ndarray, np.ndarray]:
        cache = self.components[m - 1]
        lam = params.intensity(self.model, m)
        emission = self._emissions[m - 1]
        alive = self._alive[m - 1]
        pi = params.pi[m - 1]
        stack = transition_probability_stack(lam, cache.dts)
        stack_alive = stack @ alive  # (n_dts, J): row i = P(dt) @ d

        logval = np.empty(self.n)
        gvals = np.empty(self.n)
        for group in cache.groups:
            idx = group["idx"]
            ng = idx.size
            v = np.broadcast_to(pi, (ng, cache.jdim)).copy()
            logscale = np.zeros(ng)
            for kk in range(group["k"]):
                v = np.matmul(v[:, None, :], stack[group["step_idx"][:, kk]])[:, 0, :]
                v *= emission[:, group["states"][:, kk] - 1].T
                s = v.sum(axis=1)
                live = s > 0
                v[live] /= s[live, None]
                v[~live] = 0.0
                with np.errstate(divide="ignore"):
                    logscale += np.where(live, np.log(np.where(live, s, 1.0)), -np.inf)

            if group["death_idx"] is not None:
                v = np.matmul(v[:, None, :], stack[group["death_idx"]])[:, 0, :]
                v = v @ lam.rates
                v *= emission[:, group["death_states"] - 1].T
                s = v.sum(axis=1)
                live = s > 0
                v[live] /= s[live, None]
                v[~live] = 0.0
                with np.errstate(divide="ignore"):
                    logscale += np.where(live, np.log(np.where(live, s, 1.0)), -np.inf)

            end = (v * group["rvec"]).sum(axis=1)
            with np.errstate(divide="ignore"):
                logval[idx] = np.where(end > 0, np.log(np.where(end > 0, end, 1.0)), -np.inf) + logscale
            gvals[idx] = stack_alive[group["t1_idx"]] @ pi

        return logval, np.clip(gvals, 0.0, 1.0)

    def loglik(self, params: ParameterSet) -> LogLikelihood:
        params.validate(self.model)
        n = self.n
        if n == 0:
            return LogLikelihood(value=0.0, per_subject=np.zeros(0))
        mdim = self.model.M
        comp_log = np.empty((n, mdim))
        g_all = np.empty((n, mdim))
        for m in range(1, mdim + 1):
            memo = self._memo[m - 1]
            key = (params.pi[m - 1].tobytes(), tuple(sorted(params.rates[m - 1].items())))
            if key in memo:
                lv, g = memo[key]
            else:
                lv, g = self._component_pass(params, m)
                if len(memo) >= self._MEMO_SIZE:
                    memo.pop(next(iter(memo)))
                memo[key] = (lv, g)
            with np.errstate(divide="ignore"):
                comp_log[:, m - 1] = np.where(g > 0, lv - np.log(np.where(g > 0, g, 1.0)), -np.inf)
            g_all[:, m - 1] = g

        active = params.psi > 0
        degenerate = np.all(g_all[:, active] <= 0.0, axis=1)
        if degenerate.any():
            first = int(np.argmax(degenerate))
            raise DegenerateConditioningError(
                f"record {self.order[first]}: sampling probability is 0 for every component "
                "with positive mixture weight (degenerate left-truncation conditioning)"
            )

        with np.errstate(divide="ignore"):
            weighted = comp_log + np.log(np.where(active, params.psi, 1.0))[None, :]
        weighted[:, ~active] = -np.inf
        mx = weighted.max(axis=1)
        total = np.full(n, -np.inf)
        finite = np.isfinite(mx)
        if finite.any():
            total[finite] = mx[finite] + np.log(
                np.exp(weighted[finite] - mx[finite, None]).sum(axis=1)
            )

        per_subject = np.empty(n)
        per_subject[self.order] = total
        value = float(np.sum(np.sort(total)))
        return LogLikelihood(value=value, per_subject=per_subject)


def dataset_loglik(
    model: MixtureModelSpec,
    params: ParameterSet,
    records: list[SubjectRecord],
    *,
    validate: bool = True,
) -> LogLikelihood:
    """Sum of per-subject log likelihoods; permutation of records leaves the value bit-identical."""
    return DatasetEvaluator(model, records, validate=validate).loglik(params)


def subject_loglik(model: MixtureModelSpec, params: ParameterSet, record: SubjectRecord) -> float:
    """Log likelihood of a single subject (same evaluation path as ``dataset_loglik``)."""
    return dataset_loglik(model, params, [record]).value


# ---------------------------------------------------------------------------
# Closed-form likelihood on the restricted path pattern
# ---------------------------------------------------------------------------

_DISTINCT_TOL = 1e-8


def restricted_path_closed_form(params: ParameterSet, times: tuple[float, ...]) -> float:
    """Closed-form likelihood for the two-component dementia model on a restricted path.

    The subject is followed from time 0, observed disease-free at every visit
    up to ``a2``, observed with dementia from ``a3`` to ``a4``, dies at ``a5``,
    and carries no auxiliary information.  ``times = (a1, a2, a3, a4, a5)``
    with ``a1 = 0 <= a2 < a3 <= a4 < a5``; only the gaps ``a2-a1``, ``a3-a2``
    and ``a5-a3`` enter (visits inside a constant-state run are memoryless).

    Used to cross-check the matrix evaluator; not part of the fitting path.
    """
    a1, a2, a3, a4, a5 = (float(t) for t in times)
    if a1 != 0.0:
        raise ValueError("restricted path requires follow-up from time 0 (a1 = 0)")
    if not (a1 <= a2 < a3 <= a4 < a5):
        raise ValueError("times must satisfy a1 <= a2 < a3 <= a4 < a5")
    r1, r2 = params.rates[0], params.rates[1]
    if set(r1) != {(1, 2), (1, 3), (2, 4)} or set(r2) != {(1, 2), (1, 4), (2, 3), (2, 5), (3, 6)}:
        raise ValueError("parameters do not match the two-component dementia model structure")

    l112, l113, l124 = r1[(1, 2)], r1[(1, 3)], r1[(2, 4)]
    l212, l214, l223, l225, l236 = r2[(1, 2)], r2[(1, 4)], r2[(2, 3)], r2[(2, 5)], r2[(3, 6)]
    alpha = l212 + l214
    beta = l223 + l225
    gamma = l236
    scale = max(1.0, l112, l113, l124, alpha, beta, gamma)
    for lhs, rhs, what in [
        (l112 + l113, l124, "type-I exit rates"),
        (alpha, beta, "type-II exit rates (states 1 vs 2)"),
        (beta, gamma, "type-II exit rates (states 2 vs 3)"),
        (alpha, gamma, "type-II exit rates (states 1 vs 3)"),
    ]:
        if abs(lhs - rhs) <= _DISTINCT_TOL * scale:
            raise ValueError(
                f"{what} coincide within tolerance; the closed form is singular -- "
                "use the matrix evaluator (subject_loglik) instead"
            )

    psi1 = float(params.psi[0])
    pi11 = float(params.pi[0][0])
    pi21, pi22 = float(params.pi[1][0]), float(params.pi[1][1])
    a12, a23, a35 = a2 - a1, a3 - a2, a5 - a3

    type1 = (
        psi1
        * pi11
        * l112
        * l124
        * (
            np.exp(-(l112 + l113) * a12 - l124 * (a23 + a35))
            - np.exp(-(l112 + l113) * (a12 + a23) - l124 * a35)
        )
        / (l112 + l113 - l124)
    )

    e_a_early = np.exp(-alpha * a12 - gamma * (a23 + a35))
    e_a_late = np.exp(-alpha * (a12 + a23) - gamma * a35)
    e_b_early = np.exp(-beta * a12 - gamma * (a23 + a35))
    e_b_late = np.exp(-beta * (a12 + a23) - gamma * a35)
    start1 = (
        pi21
        * l212
        * l223
        * l236
        * (
            e_a_early / ((alpha - gamma) * (beta - gamma))
            + e_a_late / ((alpha - beta) * (alpha - gamma))
            - (e_a_early + e_b_late - e_b_early) / ((alpha - beta) * (beta - gamma))
        )
    )
    start2 = pi22 * l223 * l236 * (e_b_late - e_b_early) / (beta - gamma)
    type2 = (1.0 - psi1) * (start1 - start2)
    return float(type1 + type2)
