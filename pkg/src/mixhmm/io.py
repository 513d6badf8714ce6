"""File formats: long-format dataset CSV, JSON model/parameter/result files.

Dataset schema (header ``subject_id,record_type,time,value``): one subject's
rows are contiguous with nondecreasing times; ``record_type`` is one of
``entry`` (value empty), ``visit`` (value = observed state), ``death``
(value = death state), ``censor`` (value empty), ``aux`` (value =
``m:j1|j2|...`` listing the end-state set of component m).  Aux rows are
written only for components with information; an absent aux row means the
full state set.  Floats are written with ``repr`` so files round-trip
bit-exactly.
"""

from __future__ import annotations

import csv
import json
from typing import Iterable

import numpy as np

from .estimate import FitResult, PosteriorSummary, StdErrors
from .likelihood import SubjectRecord, validate_record
from .model import (
    ComponentSpec,
    ConstraintSet,
    EmissionMatrix,
    FixRatio,
    FixValue,
    MixtureModelSpec,
    ParameterSet,
)

FORMAT_VERSION = 1

DATASET_FIELDS = ["subject_id", "record_type", "time", "value"]


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Dataset CSV
# ---------------------------------------------------------------------------


def write_dataset(records: Iterable[SubjectRecord], path, ids: list | None = None) -> None:
    records = list(records)
    if ids is None:
        ids = list(range(1, len(records) + 1))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_FIELDS)
        for sid, rec in zip(ids, records):
            writer.writerow([sid, "entry", _fmt(rec.entry_time), ""])
            for t, s in zip(rec.visit_times, rec.visit_states):
                writer.writerow([sid, "visit", _fmt(t), s])
            if rec.death_time is not None:
                terminal = rec.death_time
                writer.writerow([sid, "death", _fmt(terminal), rec.death_state])
            else:
                terminal = rec.visit_times[-1]
                writer.writerow([sid, "censor", _fmt(terminal), ""])
            if rec.aux is not None:
                for m, states in enumerate(rec.aux, start=1):
                    if states is None:
                        continue
                    writer.writerow([sid, "aux", _fmt(terminal), f"{m}:" + "|".join(str(s) for s in states)])


def read_dataset(path, model: MixtureModelSpec) -> list[SubjectRecord]:
    """Parse a dataset CSV back into validated SubjectRecords."""
    groups: dict[str, list[dict]] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != DATASET_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(DATASET_FIELDS)}")
        last_sid = None
        for lineno, row in enumerate(reader, start=2):
            sid = row["subject_id"]
            if sid not in groups:
                groups[sid] = []
                order.append(sid)
            elif sid != last_sid:
                raise ValueError(f"{path}:{lineno}: rows for subject {sid} are not contiguous")
            row["_line"] = lineno
            groups[sid].append(row)
            last_sid = sid

    records = []
    for sid in order:
        rows = groups[sid]
        entry = None
        visits: list[tuple[float, int]] = []
        death = None
        aux: dict[int, tuple[int, ...]] = {}
        for row in rows:
            kind = row["record_type"]
            line = row["_line"]
            try:
                t = float(row["time"])
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: bad time {row['time']!r}") from exc
            value = row["value"]
            if kind == "entry":
                entry = t
            elif kind == "visit":
                visits.append((t, int(value)))
            elif kind == "death":
                death = (t, int(value))
            elif kind == "censor":
                pass
            elif kind == "aux":
                m_str, _, states_str = value.partition(":")
                states = tuple(int(s) for s in states_str.split("|") if s != "")
                aux[int(m_str)] = states
            else:
                raise ValueError(f"{path}:{line}: unknown record_type {kind!r}")
        if entry is None:
            raise ValueError(f"{path}: subject {sid} has no entry row")
        aux_tuple = None
        if aux:
            aux_tuple = tuple(aux.get(m) for m in range(1, model.M + 1))
        record = SubjectRecord(
            entry_time=entry,
            visit_times=tuple(t for t, _ in visits),
            visit_states=tuple(s for _, s in visits),
            death_time=death[0] if death else None,
            death_state=death[1] if death else None,
            aux=aux_tuple,
        )
        try:
            validate_record(model, record)
        except ValueError as exc:
            raise ValueError(f"{path}: subject {sid}: {exc}") from exc
        records.append(record)
    return records


# ---------------------------------------------------------------------------
# Model spec / parameters / constraints JSON
# ---------------------------------------------------------------------------


def constraints_to_list(constraints: ConstraintSet | None) -> list[dict]:
    out = []
    for c in constraints or ():
        if isinstance(c, FixValue):
            out.append({"type": "fix_value", "param": c.param, "value": c.value})
        else:
            out.append({"type": "fix_ratio", "param": c.param, "ref": c.ref, "ratio": c.ratio})
    return out


def constraints_from_list(items: list[dict]) -> ConstraintSet:
    cs = []
    for item in items:
        kind = item.get("type")
        if kind == "fix_value":
            cs.append(FixValue(item["param"], float(item["value"])))
        elif kind == "fix_ratio":
            cs.append(FixRatio(item["param"], item["ref"], float(item["ratio"])))
        else:
            raise ValueError(f"unknown constraint type {kind!r}")
    return ConstraintSet(tuple(cs))


def model_to_dict(model: MixtureModelSpec, constraints: ConstraintSet | None = None) -> dict:
    return {
        "version": FORMAT_VERSION,
        "obs_states": model.obs_states,
        "obs_absorbing": list(model.obs_absorbing),
        "components": [
            {
                "states": comp.n_states,
                "absorbing": list(comp.absorbing_states),
                "transitions": [list(t) for t in comp.transitions],
                "emission": comp.emission.e.tolist(),
                "initial_support": list(comp.initial_support),
            }
            for comp in model.components
        ],
        "constraints": constraints_to_list(constraints),
    }


def model_from_dict(data: dict) -> tuple[MixtureModelSpec, ConstraintSet]:
    if data.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model-spec version {data.get('version')!r}")
    comps = []
    for cd in data["components"]:
        emission = EmissionMatrix(
            latent_dim=cd["states"], obs_dim=data["obs_states"], e=np.array(cd["emission"])
        )
        comps.append(
            ComponentSpec(
                n_states=cd["states"],
                absorbing_states=tuple(cd["absorbing"]),
                transitions=tuple(tuple(t) for t in cd["transitions"]),
                emission=emission,
                initial_support=tuple(cd["initial_support"]),
            )
        )
    model = MixtureModelSpec(
        components=tuple(comps),
        obs_states=data["obs_states"],
        obs_absorbing=tuple(data["obs_absorbing"]),
    )
    return model, constraints_from_list(data.get("constraints", []))


def params_to_dict(params: ParameterSet) -> dict:
    return {
        "version": FORMAT_VERSION,
        "psi": params.psi.tolist(),
        "components": [
            {
                "pi": params.pi[m].tolist(),
                "rates": [
                    {"from": i, "to": j, "rate": rate} for (i, j), rate in sorted(params.rates[m].items())
                ],
            }
            for m in range(len(params.pi))
        ],
    }


def params_from_dict(data: dict) -> ParameterSet:
    if data.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported parameter-file version {data.get('version')!r}")
    pis = []
    rates = []
    for cd in data["components"]:
        pis.append(np.array(cd["pi"], dtype=float))
        rates.append({(int(r["from"]), int(r["to"])): float(r["rate"]) for r in cd["rates"]})
    return ParameterSet(psi=np.array(data["psi"], dtype=float), pi=tuple(pis), rates=tuple(rates))


def write_json(data: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


def fit_result_to_dict(
    model: MixtureModelSpec,
    constraints: ConstraintSet | None,
    fit: FitResult,
    metadata: dict | None = None,
) -> dict:
    def clean(x):
        return None if x is None or not np.isfinite(x) else float(x)

    out = {
        "version": FORMAT_VERSION,
        "kind": "mle",
        "model": model_to_dict(model, constraints),
        "params": params_to_dict(fit.params_hat),
        "free_names": fit.free_names,
        "free_vector": [float(v) for v in fit.free_vector_hat],
        "loglik": fit.loglik,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "multistart_spread": fit.multistart_spread,
        "se_free": None if fit.se_free is None else [clean(v) for v in fit.se_free],
        "ci": None
        if fit.ci is None
        else {k: [clean(v[0]), clean(v[1])] for k, v in fit.ci.items()},
        "hessian_pd": fit.hessian_pd,
        "metadata": metadata or {},
    }
    return out


def posterior_to_dict(
    model: MixtureModelSpec,
    constraints: ConstraintSet | None,
    posterior: PosteriorSummary,
    metadata: dict | None = None,
) -> dict:
    return {
        "version": FORMAT_VERSION,
        "kind": "bayes",
        "model": model_to_dict(model, constraints),
        "parameters": {
            name: posterior.summary_row(name) for name in posterior.names
        },
        "acceptance_rate": posterior.acceptance_rate,
        "degenerate": [bool(d) for d in posterior.degenerate],
        "metadata": metadata or {},
    }


def write_draws_csv(posterior: PosteriorSummary, path) -> None:
    """One row per post burn-in draw; columns are natural-scale parameters."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "iteration", *posterior.names])
        for row in range(posterior.natural_draws.shape[0]):
            writer.writerow(
                [
                    int(posterior.chain_id[row]),
                    int(posterior.iteration[row]),
                    *(_fmt(v) for v in posterior.natural_draws[row]),
                ]
            )


def write_prevalence_csv(curve, path, origin: float = 0.0, cuminc: dict[str, np.ndarray] | None = None) -> None:
    """Curve CSV with columns age, all_cause, type_1..type_M (+ cumulative incidence)."""
    n_types = len(curve.by_type)
    header = ["age", "all_cause"] + [f"type_{m}" for m in range(1, n_types + 1)]
    cuminc = cuminc or {}
    header += list(cuminc)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, t in enumerate(curve.ages):
            row = [_fmt(origin + t), _fmt(curve.all_cause[k])]
            row += [_fmt(curve.by_type[m][k]) for m in range(n_types)]
            row += [_fmt(cuminc[name][k]) for name in cuminc]
            writer.writerow(row)


def write_scenario_csv(results: dict, path) -> None:
    """Scenario comparison table: one row per parameter, Est/SE (and boundary rate) per scenario."""
    scenarios = list(results)
    first = results[scenarios[0]]
    header = ["parameter", "true"]
    for s in scenarios:
        header += [f"{s}_est", f"{s}_se", f"{s}_boundary"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for name in first.param_names:
            row = [name, _fmt(first.true_values[name])]
            for s in scenarios:
                study = results[s]
                row.append(_fmt(study.mean[name]))
                row.append(_fmt(study.empirical_se[name]))
                bf = study.boundary_fraction.get(name)
                row.append("" if bf is None else _fmt(bf))
            writer.writerow(row)
