"""Synthetic data generation: latent paths, panel censoring, disclosure.

Subjects are simulated from the mixture law, observed on a visit grid, and
rejected (resampled) when already absorbed at their entry time, which enforces
the left-truncated sampling condition.  Deceased subjects' disease type or
terminal-assessment information is disclosed with a design probability.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .likelihood import SubjectRecord
from .model import MixtureModelSpec, ParameterSet, is_nun_structure
from .rng import DOMAIN_SUBJECT, substream

__all__ = [
    "SimulationDesign",
    "LatentPath",
    "simulate_path",
    "panel_observe",
    "simulate_dataset",
    "nun_pathology_assessment",
]

_MAX_ATTEMPTS = 1000  # per subject; tripping this means acceptance < 0.1%

DISCLOSURE_MODES = ("component", "end_state_set")


@dataclass(frozen=True)
class SimulationDesign:
    """Observation scheme for a simulated cohort.

    ``entry_time`` is either a fixed time or ``("uniform", lo, hi)``.
    ``disclosure`` applies to deceased subjects only, with probability
    ``p_disc``: mode ``component`` reveals the disease type, mode
    ``end_state_set`` reveals per-component end-state sets produced by
    ``assessment(component, terminal_state)`` (the bundled dementia rule is
    used when no assessment is supplied and the model matches it).
    """

    visit_grid: tuple[float, ...]
    admin_end: float
    entry_time: float | tuple = 0.0
    disclosure: str | None = None
    p_disc: float = 0.0
    seed: int = 0
    assessment: Callable[[int, int], tuple[tuple[int, ...], ...]] | None = None

    def __post_init__(self):
        grid = tuple(float(t) for t in self.visit_grid)
        object.__setattr__(self, "visit_grid", grid)
        if not grid or any(np.diff(grid) <= 0):
            raise ValueError("visit_grid must be nonempty and strictly increasing")
        if grid[0] < 0 or grid[-1] > self.admin_end:
            raise ValueError("visit_grid must lie within [0, admin_end]")
        if not 0.0 <= self.p_disc <= 1.0:
            raise ValueError("p_disc must lie in [0, 1]")
        if self.disclosure is not None and self.disclosure not in DISCLOSURE_MODES:
            raise ValueError(f"disclosure must be one of {DISCLOSURE_MODES}")
        if isinstance(self.entry_time, tuple):
            kind, lo, hi = self.entry_time
            if kind != "uniform" or not 0 <= lo <= hi <= self.admin_end:
                raise ValueError(
                    "entry_time rule must be a fixed time or ('uniform', lo, hi) within [0, admin_end]"
                )
        elif not 0 <= self.entry_time <= self.admin_end:
            raise ValueError("entry_time must lie in [0, admin_end]")


@dataclass(frozen=True)
class LatentPath:
    """Realized component and jump chain of one subject's latent process."""

    component: int
    times: tuple[float, ...]
    states: tuple[int, ...]

    def state_at(self, t: float) -> int:
        idx = bisect.bisect_right(self.times, t) - 1
        return self.states[idx]

    @property
    def terminal_state(self) -> int:
        return self.states[-1]


class _PathSampler:
    """Pre-resolved exit distributions for fast repeated path draws."""

    def __init__(self, model: MixtureModelSpec, params: ParameterSet):
        params.validate(model)
        self.model = model
        self.psi_cum = np.cumsum(params.psi)
        self.pi_cum = []
        self.exits = []  # per component: state -> (targets, total_rate, cum_probs)
        for m, comp in enumerate(model.components, start=1):
            self.pi_cum.append(np.cumsum(params.pi[m - 1]))
            table: dict[int, tuple[list[int], float, np.ndarray]] = {}
            for s in comp.transient_states:
                targets = [j for i, j in comp.transitions if i == s]
                rates = np.array([params.rates[m - 1][(s, j)] for j in targets])
                total = float(rates.sum())
                table[s] = (targets, total, np.cumsum(rates) / total)
            self.exits.append(table)

    def draw(self, rng: np.random.Generator) -> LatentPath:
        m = int(np.searchsorted(self.psi_cum, rng.random(), side="right")) + 1
        state = int(np.searchsorted(self.pi_cum[m - 1], rng.random(), side="right")) + 1
        times = [0.0]
        states = [state]
        t = 0.0
        table = self.exits[m - 1]
        while state in table:
            targets, total, cum = table[state]
            t += rng.exponential(1.0 / total)
            state = targets[int(np.searchsorted(cum, rng.random(), side="right"))]
            times.append(t)
            states.append(state)
        return LatentPath(component=m, times=tuple(times), states=tuple(states))


def simulate_path(model: MixtureModelSpec, params: ParameterSet, rng: np.random.Generator) -> LatentPath:
    """Draw a component, an initial state, and the full jump chain to absorption."""
    return _PathSampler(model, params).draw(rng)


def nun_pathology_assessment(component: int, terminal_state: int) -> tuple[tuple[int, ...], ...]:
    """Terminal-assessment rule for the bundled dementia model.

    Pathology is found exactly when the type-2 path died out of the pathology
    pathway (terminal state 5 or 6); the per-component end-state sets mirror
    how a postmortem finding restricts each latent process.
    """
    pathology = component == 2 and terminal_state in (5, 6)
    if pathology:
        return ((), (2, 3, 5, 6))
    return ((1, 2, 3, 4), (1, 4))


def _draw_entry(design: SimulationDesign, rng: np.random.Generator) -> float:
    if isinstance(design.entry_time, tuple):
        _, lo, hi = design.entry_time
        return float(rng.uniform(lo, hi))
    return float(design.entry_time)


def panel_observe(
    path: LatentPath,
    model: MixtureModelSpec,
    design: SimulationDesign,
    rng: np.random.Generator,
) -> SubjectRecord | None:
    """Observe a latent path on the design's visit grid.

    Returns ``None`` when the subject is already absorbed at the entry time
    (left truncation: such subjects are never sampled).
    """
    comp = model.components[path.component - 1]
    dy = set(model.obs_absorbing)
    t1 = _draw_entry(design, rng)

    if comp.emission.observed_state(path.state_at(t1)) in dy:
        return None

    terminal_absorbing = path.terminal_state in comp.absorbing_states
    death_time = path.times[-1] if terminal_absorbing else None
    observed_death = death_time is not None and death_time <= design.admin_end

    schedule = [t1] + [g for g in design.visit_grid if g > t1]
    cutoff = death_time if observed_death else design.admin_end
    visit_times = [t for t in schedule if (t < cutoff if observed_death else t <= cutoff)]
    visit_states = []
    for t in visit_times:
        y = comp.emission.observed_state(path.state_at(t))
        if y in dy:
            raise ValueError("latent path visits an absorbing observed state while alive")
        visit_states.append(y)

    aux = None
    if observed_death:
        death_state = comp.emission.observed_state(path.terminal_state)
        if design.disclosure is not None and design.p_disc > 0 and rng.random() < design.p_disc:
            if design.disclosure == "component":
                aux = tuple(
                    tuple(range(1, c.n_states + 1)) if m == path.component else ()
                    for m, c in enumerate(model.components, start=1)
                )
            else:
                assess = design.assessment
                if assess is None:
                    if not is_nun_structure(model):
                        raise ValueError(
                            "end_state_set disclosure needs design.assessment for this model"
                        )
                    assess = nun_pathology_assessment
                aux = tuple(tuple(a) for a in assess(path.component, path.terminal_state))
        return SubjectRecord(
            entry_time=t1,
            visit_times=tuple(visit_times),
            visit_states=tuple(visit_states),
            death_time=death_time,
            death_state=death_state,
            aux=aux,
        )

    return SubjectRecord(
        entry_time=t1,
        visit_times=tuple(visit_times),
        visit_states=tuple(visit_states),
    )


def simulate_dataset(
    model: MixtureModelSpec,
    params: ParameterSet,
    n: int,
    design: SimulationDesign,
) -> list[SubjectRecord]:
    """n accepted subjects, deterministic given ``design.seed``.

    Subject i consumes only its own substream, so datasets are reproducible
    independently of n and of any parallel scheduling.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    sampler = _PathSampler(model, params)
    records = []
    for i in range(n):
        rng = substream(design.seed, DOMAIN_SUBJECT, i)
        for _ in range(_MAX_ATTEMPTS):
            path = sampler.draw(rng)
            record = panel_observe(path, model, design, rng)
            if record is not None:
                records.append(record)
                break
        else:
            raise RuntimeError(
                f"rejection rate exceeds 99.9% (subject {i}); the design is degenerate "
                "(nearly everyone is absorbed before entry)"
            )
    return records


def with_seed(design: SimulationDesign, seed: int) -> SimulationDesign:
    return replace(design, seed=seed)
