"""Command-line interface.

Subcommands: ``simulate`` (synthetic cohorts), ``fit`` (MLE or Bayes),
``predict`` (prevalence / cumulative incidence from a fit), ``check``
(identifiability probes).  Options resolve as flags > config file > defaults,
and every command writes a ``<out>.meta.json`` echoing the fully resolved
configuration so runs can be reproduced byte for byte.

Exit codes: 0 success, 2 input/schema error, 3 numerical non-convergence,
4 identifiability guard triggered.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, io
from .epi import cumulative_incidence, derived_quantities, prevalence_curve
from .estimate import BayesOptions, FitOptions, PriorSpec, fit_bayes, fit_mle, standard_errors
from .identify import (
    SCENARIOS,
    equal_likelihood_transform,
    flatness_scan,
    invariance_check,
    scenario_harness,
    synthetic_restricted_path_records,
)
from .model import (
    ConstraintSet,
    FixRatio,
    FixValue,
    FreeParameterization,
    is_nun_structure,
    nun_study_model,
)
from .presets import nun_reference_estimates, sim_study_design, sim_study_truth
from .simulate import SimulationDesign, simulate_dataset

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3
EXIT_GUARD = 4

BOUNDARY_RATE = 1e-6
SPREAD_GUARD = 1e-3


def _default_threads() -> int:
    env = os.environ.get("MIXHMM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _parse_grid(text: str) -> tuple[float, ...]:
    """Accept ``a,b,c`` lists or ``start:stop:step`` ranges (inclusive stop)."""
    text = text.strip()
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(start + k * step for k in range(n))
    return tuple(float(v) for v in text.split(","))


def _parse_fixes(fix_items, ratio_items) -> ConstraintSet:
    constraints = []
    for item in fix_items or []:
        name, _, value = item.partition("=")
        if not value:
            raise ValueError(f"--fix expects name=value, got {item!r}")
        constraints.append(FixValue(name.strip(), float(value)))
    for item in ratio_items or []:
        lhs, _, value = item.partition("=")
        a, _, b = lhs.partition("/")
        if not value or not b:
            raise ValueError(f"--fix-ratio expects a/b=ratio, got {item!r}")
        constraints.append(FixRatio(a.strip(), b.strip(), float(value)))
    return ConstraintSet(tuple(constraints))


def _load_model(resolved) -> tuple:
    """Model plus any constraints embedded in the spec file."""
    path = resolved.get("model")
    if path:
        model, constraints = io.model_from_dict(io.read_json(path))
        return model, constraints
    return nun_study_model(), ConstraintSet()


def _load_params(resolved):
    path = resolved.get("params")
    preset = resolved.get("params_preset")
    if path:
        return io.params_from_dict(io.read_json(path))
    if preset == "sim-truth":
        return sim_study_truth()
    if preset == "nun-ref":
        return nun_reference_estimates()
    if preset:
        raise ValueError(f"unknown parameter preset {preset!r} (expected sim-truth or nun-ref)")
    raise ValueError("provide --params FILE or --params-preset")


def _write_metadata(out_path: str, command: str, resolved: dict) -> None:
    meta = {
        "command": command,
        "version": __version__,
        "resolved": {k: v for k, v in sorted(resolved.items()) if k != "func"},
    }
    io.write_json(meta, str(out_path) + ".meta.json")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    given = {k: v for k, v in vars(args).items() if k not in ("command", "func", "defaults")}
    resolved = dict(defaults)
    config_path = given.get("config") or defaults.get("config")
    if config_path:
        with open(config_path) as fh:
            file_options = json.load(fh)
        unknown = set(file_options) - set(defaults)
        if unknown:
            raise ValueError(f"config file sets unknown options: {sorted(unknown)}")
        resolved.update(file_options)
    resolved.update(given)
    return resolved


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

SIMULATE_DEFAULTS = {
    "preset": None,
    "model": None,
    "params": None,
    "params_preset": None,
    "n": 500,
    "grid": "0,0.25,0.5,0.75,1",
    "admin_end": 1.0,
    "entry": 0.0,
    "entry_uniform": None,
    "disclosure": "none",
    "p_disc": 0.0,
    "seed": 0,
    "out": None,
    "config": None,
}


def cmd_simulate(resolved: dict) -> int:
    if resolved.get("preset") not in (None, "nun-sim"):
        raise ValueError(f"unknown preset {resolved['preset']!r} (expected nun-sim)")
    if not resolved.get("out"):
        raise ValueError("--out is required")
    n = int(resolved["n"])
    if n < 1:
        raise ValueError("n must be >= 1")

    if resolved.get("preset") == "nun-sim":
        model, _ = nun_study_model(), None
        params = sim_study_truth()
        design = sim_study_design(seed=int(resolved["seed"]))
    else:
        model, _ = _load_model(resolved)
        params = _load_params(resolved)
        entry = resolved["entry"]
        if resolved.get("entry_uniform"):
            lo, hi = (float(v) for v in resolved["entry_uniform"].split(","))
            entry = ("uniform", lo, hi)
        disclosure = resolved["disclosure"]
        design = SimulationDesign(
            visit_grid=_parse_grid(resolved["grid"]),
            admin_end=float(resolved["admin_end"]),
            entry_time=entry,
            disclosure=None if disclosure == "none" else disclosure,
            p_disc=float(resolved["p_disc"]),
            seed=int(resolved["seed"]),
        )

    records = simulate_dataset(model, params, n, design)
    io.write_dataset(records, resolved["out"])
    _write_metadata(resolved["out"], "simulate", resolved)
    print(f"wrote {len(records)} subjects to {resolved['out']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

FIT_DEFAULTS = {
    "model": None,
    "data": None,
    "mode": "mle",
    "fix": [],
    "fix_ratio": [],
    "starts": 10,
    "max_iter": 200,
    "tol": 1e-8,
    "chains": 4,
    "iterations": 2000,
    "burn_in": None,
    "prior_preset": "noninformative",
    "seed": 0,
    "threads": None,
    "out": None,
    "draws_out": None,
    "config": None,
}


def cmd_fit(resolved: dict) -> int:
    if not resolved.get("out"):
        raise ValueError("--out is required")
    if not resolved.get("data"):
        raise ValueError("--data is required")
    model, file_constraints = _load_model(resolved)
    flag_constraints = _parse_fixes(resolved.get("fix"), resolved.get("fix_ratio"))
    constraints = ConstraintSet(tuple(file_constraints) + tuple(flag_constraints))
    records = io.read_dataset(resolved["data"], model)
    threads = resolved.get("threads") or _default_threads()

    if resolved["mode"] == "mle":
        options = FitOptions(
            starts=int(resolved["starts"]),
            max_iter=int(resolved["max_iter"]),
            tol=float(resolved["tol"]),
            seed=int(resolved["seed"]),
        )
        fit = fit_mle(model, records, constraints, options)
        se = standard_errors(model, records, constraints, fit.free_vector_hat)
        fit = replace(fit, se_free=se.se_free, ci=se.ci, hessian_pd=se.hessian_pd)
        io.write_json(io.fit_result_to_dict(model, constraints, fit, {"command": "fit"}), resolved["out"])
        _write_metadata(resolved["out"], "fit", resolved)
        if not fit.converged:
            print("optimization did not converge", file=sys.stderr)
            return EXIT_NO_CONVERGENCE
        boundary = [
            name
            for name, value in zip(fit.free_names, fit.free_vector_hat)
            if name.startswith("lambda") and math.exp(value) < BOUNDARY_RATE
        ]
        if not se.hessian_pd or boundary or fit.multistart_spread > SPREAD_GUARD:
            reasons = []
            if not se.hessian_pd:
                reasons.append("Hessian not positive definite")
            if boundary:
                reasons.append(f"rates at the boundary: {', '.join(boundary)}")
            if fit.multistart_spread > SPREAD_GUARD:
                reasons.append(f"multistart spread {fit.multistart_spread:.3g}")
            print("identifiability guard: " + "; ".join(reasons), file=sys.stderr)
            return EXIT_GUARD
        print(f"loglik {fit.loglik:.6f} written to {resolved['out']}")
        return EXIT_OK

    if resolved["mode"] != "bayes":
        raise ValueError(f"unknown fit mode {resolved['mode']!r}")
    layout = FreeParameterization(model, constraints)
    preset = resolved["prior_preset"]
    if preset == "noninformative":
        priors = PriorSpec.noninformative(layout)
    elif preset == "adams":
        priors = PriorSpec.adams(layout)
    else:
        raise ValueError(f"unknown prior preset {preset!r} (expected noninformative or adams)")
    options = BayesOptions(
        chains=int(resolved["chains"]),
        iterations=int(resolved["iterations"]),
        burn_in=None if resolved["burn_in"] is None else int(resolved["burn_in"]),
        seed=int(resolved["seed"]),
        workers=threads,
    )
    posterior = fit_bayes(model, records, constraints, priors, options)
    io.write_json(
        io.posterior_to_dict(model, constraints, posterior, {"command": "fit"}), resolved["out"]
    )
    draws_out = resolved.get("draws_out") or str(resolved["out"]) + ".draws.csv"
    io.write_draws_csv(posterior, draws_out)
    _write_metadata(resolved["out"], "fit", resolved)
    worst = float(np.nanmax(posterior.rhat))
    if worst > 1.1:
        print(f"chains not converged: max rhat {worst:.3f}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    print(f"posterior written to {resolved['out']} (max rhat {worst:.3f})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

PREDICT_DEFAULTS = {
    "fit": None,
    "params": None,
    "params_preset": None,
    "model": None,
    "ages": "75:100:1",
    "origin": 75.0,
    "disease_state": 2,
    "cuminc": [],
    "out": None,
    "config": None,
}


def cmd_predict(resolved: dict) -> int:
    if not resolved.get("out"):
        raise ValueError("--out is required")
    if resolved.get("fit"):
        data = io.read_json(resolved["fit"])
        model, _ = io.model_from_dict(data["model"])
        params = io.params_from_dict(data["params"])
    else:
        model, _ = _load_model(resolved)
        params = _load_params(resolved)
    origin = float(resolved["origin"])
    ages = np.asarray(_parse_grid(resolved["ages"]), dtype=float)
    times = ages - origin
    if times.size and times[0] < 0:
        raise ValueError(f"ages must not precede the origin ({origin:g})")
    curve = prevalence_curve(model, params, times, disease_obs_state=int(resolved["disease_state"]))

    cuminc = {}
    for item in resolved.get("cuminc") or []:
        m_str, _, states_str = item.partition(":")
        m = int(m_str)
        targets = tuple(int(s) for s in states_str.split("|"))
        cuminc[f"cuminc_type_{m}"] = np.array(
            [cumulative_incidence(model, params, float(t), m, targets) for t in times]
        )
    io.write_prevalence_csv(curve, resolved["out"], origin=origin, cuminc=cuminc)
    if is_nun_structure(model):
        dq = derived_quantities(params, model)
        io.write_json(
            {
                "sojourn_years": dq.sojourn_years,
                "progression_years": dq.progression_years,
                "mortality_rate_ratio": dq.mortality_rate_ratio,
                "ad_fraction": dq.ad_fraction,
                "infinite_sojourn": list(dq.infinite_sojourn),
            },
            str(resolved["out"]) + ".derived.json",
        )
    _write_metadata(resolved["out"], "predict", resolved)
    print(f"wrote {len(ages)} rows to {resolved['out']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------

CHECK_DEFAULTS = {
    "mode": None,
    "model": None,
    "params": None,
    "params_preset": None,
    "data": None,
    "synthesize": 100,
    "rho1": 0.9,
    "rho2": 0.9,
    "tol": 1e-8,
    "fit": None,
    "direction": None,
    "half_width": 0.5,
    "points": 21,
    "preset": None,
    "scenarios": "S0,S1",
    "n": 500,
    "reps": 50,
    "starts": 3,
    "seed": 0,
    "threads": None,
    "out": None,
    "config": None,
}


def cmd_check(resolved: dict) -> int:
    mode = resolved.get("mode")
    if not resolved.get("out"):
        raise ValueError("--out is required")
    if mode == "transform":
        model, _ = _load_model(resolved)
        params = _load_params(resolved)
        theta_star = equal_likelihood_transform(params, float(resolved["rho1"]), float(resolved["rho2"]))
        if resolved.get("data"):
            records = io.read_dataset(resolved["data"], model)
        else:
            rng = np.random.default_rng(int(resolved["seed"]))
            records = synthetic_restricted_path_records(int(resolved["synthesize"]), rng)
        report = invariance_check(model, records, params, theta_star, tol=float(resolved["tol"]))
        io.write_json(
            {
                "verdict": report.verdict,
                "max_abs_loglik_gap": report.max_abs_loglik_gap,
                "tolerance": report.tolerance,
                "rho1": resolved["rho1"],
                "rho2": resolved["rho2"],
                "records": len(records),
                "theta": io.params_to_dict(report.theta),
                "theta_star": io.params_to_dict(report.theta_star),
            },
            resolved["out"],
        )
        _write_metadata(resolved["out"], "check", resolved)
        print(f"verdict: {report.verdict} (max gap {report.max_abs_loglik_gap:.3g})")
        return EXIT_GUARD if report.verdict == "invariant" else EXIT_OK

    if mode == "flatness":
        if not (resolved.get("fit") and resolved.get("data")):
            raise ValueError("flatness mode needs --fit and --data")
        data = io.read_json(resolved["fit"])
        model, constraints = io.model_from_dict(data["model"])
        records = io.read_dataset(resolved["data"], model)
        x_hat = np.array(data["free_vector"], dtype=float)
        names = data["free_names"]
        direction_arg = resolved.get("direction")
        if not direction_arg:
            raise ValueError("flatness mode needs --direction (a free-coordinate name)")
        if direction_arg not in names:
            raise ValueError(f"unknown coordinate {direction_arg!r}; choose from {names}")
        direction = np.zeros(len(names))
        direction[names.index(direction_arg)] = 1.0
        scan = flatness_scan(
            model,
            records,
            x_hat,
            direction,
            float(resolved["half_width"]),
            int(resolved["points"]),
            constraints,
        )
        with open(resolved["out"], "w") as fh:
            fh.write("offset,loglik\n")
            for off, val in zip(scan.offsets, scan.loglik):
                fh.write(f"{off!r},{val!r}\n")
        io.write_json(
            {
                "direction": direction_arg,
                "center_loglik": scan.center_loglik,
                "drop_minus": scan.drop_minus,
                "drop_plus": scan.drop_plus,
            },
            str(resolved["out"]) + ".summary.json",
        )
        _write_metadata(resolved["out"], "check", resolved)
        print(f"drop at -/+ half-width: {scan.drop_minus:.4g} / {scan.drop_plus:.4g}")
        return EXIT_OK

    if mode == "scenarios":
        preset = resolved.get("preset")
        if preset not in (None, "constraint-scan"):
            raise ValueError(f"unknown preset {preset!r} (expected constraint-scan)")
        scenarios = SCENARIOS if preset == "constraint-scan" else tuple(
            s.strip() for s in resolved["scenarios"].split(",")
        )
        model = nun_study_model()
        truth = sim_study_truth()
        results = scenario_harness(
            model,
            truth,
            scenarios,
            int(resolved["n"]),
            int(resolved["reps"]),
            int(resolved["seed"]),
            sim_study_design(),
            fit_options=FitOptions(starts=int(resolved["starts"])),
            workers=resolved.get("threads") or _default_threads(),
        )
        io.write_scenario_csv(results, resolved["out"])
        _write_metadata(resolved["out"], "check", resolved)
        print(f"scenario table written to {resolved['out']}")
        return EXIT_OK

    raise ValueError(f"unknown check mode {mode!r} (expected transform, flatness, or scenarios)")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixhmm",
        description="Mixture hidden Markov models for intermittently observed multistate processes",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", argument_default=argparse.SUPPRESS, help="generate a synthetic cohort")
    sim.add_argument("--preset", help="bundled study design (nun-sim)")
    sim.add_argument("--model", help="model spec JSON")
    sim.add_argument("--params", help="parameter JSON")
    sim.add_argument("--params-preset", dest="params_preset", help="sim-truth or nun-ref")
    sim.add_argument("--n", type=int)
    sim.add_argument("--grid", help="visit grid, e.g. 0,0.25,0.5 or 0:1:0.25")
    sim.add_argument("--admin-end", dest="admin_end", type=float)
    sim.add_argument("--entry", type=float)
    sim.add_argument("--entry-uniform", dest="entry_uniform", help="lo,hi")
    sim.add_argument("--disclosure", choices=["none", "component", "end_state_set"])
    sim.add_argument("--p-disc", dest="p_disc", type=float)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out")
    sim.add_argument("--config")
    sim.set_defaults(func=cmd_simulate, defaults=SIMULATE_DEFAULTS)

    fit = sub.add_parser("fit", argument_default=argparse.SUPPRESS, help="fit a model to a dataset")
    fit.add_argument("--model", help="model spec JSON (default: bundled dementia model)")
    fit.add_argument("--data")
    fit.add_argument("--mode", choices=["mle", "bayes"])
    fit.add_argument("--fix", action="append", help="pin a parameter, e.g. pi2.2=0")
    fit.add_argument("--fix-ratio", dest="fix_ratio", action="append", help="tie parameters, e.g. pi2.2/pi2.1=0.75")
    fit.add_argument("--starts", type=int)
    fit.add_argument("--max-iter", dest="max_iter", type=int)
    fit.add_argument("--tol", type=float)
    fit.add_argument("--chains", type=int)
    fit.add_argument("--iterations", type=int)
    fit.add_argument("--burn-in", dest="burn_in", type=int)
    fit.add_argument("--prior-preset", dest="prior_preset", choices=["noninformative", "adams"])
    fit.add_argument("--seed", type=int)
    fit.add_argument("--threads", type=int)
    fit.add_argument("--out")
    fit.add_argument("--draws-out", dest="draws_out")
    fit.add_argument("--config")
    fit.set_defaults(func=cmd_fit, defaults=FIT_DEFAULTS)

    pred = sub.add_parser("predict", argument_default=argparse.SUPPRESS, help="prevalence and incidence curves")
    pred.add_argument("--fit", help="fit result JSON")
    pred.add_argument("--model")
    pred.add_argument("--params")
    pred.add_argument("--params-preset", dest="params_preset")
    pred.add_argument("--ages", help="e.g. 75:100:1")
    pred.add_argument("--origin", type=float)
    pred.add_argument("--disease-state", dest="disease_state", type=int)
    pred.add_argument("--cuminc", action="append", help="m:j1|j2 target set, repeatable")
    pred.add_argument("--out")
    pred.add_argument("--config")
    pred.set_defaults(func=cmd_predict, defaults=PREDICT_DEFAULTS)

    chk = sub.add_parser("check", argument_default=argparse.SUPPRESS, help="identifiability probes")
    chk.add_argument("--mode", choices=["transform", "flatness", "scenarios"])
    chk.add_argument("--model")
    chk.add_argument("--params")
    chk.add_argument("--params-preset", dest="params_preset")
    chk.add_argument("--data")
    chk.add_argument("--synthesize", type=int)
    chk.add_argument("--rho1", type=float)
    chk.add_argument("--rho2", type=float)
    chk.add_argument("--tol", type=float)
    chk.add_argument("--fit")
    chk.add_argument("--direction")
    chk.add_argument("--half-width", dest="half_width", type=float)
    chk.add_argument("--points", type=int)
    chk.add_argument("--preset")
    chk.add_argument("--scenarios")
    chk.add_argument("--n", type=int)
    chk.add_argument("--reps", type=int)
    chk.add_argument("--starts", type=int)
    chk.add_argument("--seed", type=int)
    chk.add_argument("--threads", type=int)
    chk.add_argument("--out")
    chk.add_argument("--config")
    chk.set_defaults(func=cmd_check, defaults=CHECK_DEFAULTS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        resolved = _resolve(args, args.defaults)
        return args.func(resolved)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
