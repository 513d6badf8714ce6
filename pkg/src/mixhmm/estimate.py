"""Constrained maximum likelihood and Bayesian posterior sampling.

Fitting works on the unconstrained free vector (log rates, logit
probabilities).  The likelihood is smooth but has no analytic gradient here,
so the MLE uses multi-start Nelder-Mead simplex search refined by
finite-difference L-BFGS-B, and standard errors come from a central
finite-difference Hessian on the transformed scale.  The Bayesian sampler is
an adaptive blocked random-walk Metropolis targeting prior x likelihood.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .likelihood import DatasetEvaluator, dataset_loglik, validate_record
from .model import ConstraintSet, FreeParameterization, MixtureModelSpec, ParameterSet
from .rng import DOMAIN_CHAIN, DOMAIN_MULTISTART, substream

__all__ = [
    "FitOptions",
    "FitResult",
    "fit_mle",
    "StdErrors",
    "standard_errors",
    "finite_difference_hessian",
    "NormalPrior",
    "Uniform01Prior",
    "PriorSpec",
    "BayesOptions",
    "PosteriorSummary",
    "fit_bayes",
    "DiagnosticsResult",
    "diagnostics",
]

COORD_BOUND = 15.0  # |free coordinate| box; e^15 ~ 3.3e6 keeps expm well-conditioned


def _objective(model, records, layout):
    evaluator = DatasetEvaluator(model, list(records), validate=False)

    def neg_loglik(x):
        if np.any(np.abs(x) > COORD_BOUND):
            return math.inf
        try:
            params = layout.unpack(x)
            return -evaluator.loglik(params).value
        except (ValueError, FloatingPointError, np.linalg.LinAlgError):
            return math.inf

    return neg_loglik


@dataclass(frozen=True)
class FitOptions:
    starts: int = 10
    max_iter: int = 80
    tol: float = 1e-9
    seed: int = 0
    start_spread: float = 2.0
    simplex_maxfev: int | None = None  # per simplex stage; default 60 * dim
    polish: bool = True


@dataclass(frozen=True)
class FitResult:
    params_hat: ParameterSet
    free_vector_hat: np.ndarray
    free_names: list[str]
    loglik: float
    converged: bool
    iterations: int
    multistart_spread: float
    se_free: np.ndarray | None = None
    ci: dict[str, tuple[float, float]] | None = None
    hessian_pd: bool | None = None


def fit_mle(
    model: MixtureModelSpec,
    records,
    constraints: ConstraintSet | None = None,
    options: FitOptions | None = None,
) -> FitResult:
    """Maximize the dataset log likelihood over the free vector.

    Runs ``starts`` local searches (the first from the neutral point, the rest
    over-dispersed around it) and returns the best local optimum; the spread
    of optima across starts is reported as an estimability signal.
    """
    options = options or FitOptions()
    if not records:
        raise ValueError("cannot fit an empty dataset")
    for i, r in enumerate(records):
        try:
            validate_record(model, r)
        except ValueError as exc:
            raise ValueError(f"record {i}: {exc}") from exc
    layout = FreeParameterization(model, constraints)
    if layout.dim == 0:
        raise ValueError("free dimension is 0 (fully constrained); evaluate the likelihood directly")

    f = _objective(model, records, layout)
    dim = layout.dim
    rng = substream(options.seed, DOMAIN_MULTISTART, 0)
    start_points = [np.zeros(dim)]
    for _ in range(max(0, options.starts - 1)):
        start_points.append(rng.uniform(-options.start_spread, options.start_spread, dim))

    maxfev = options.simplex_maxfev if options.simplex_maxfev is not None else 60 * dim
    bounds = [(-COORD_BOUND, COORD_BOUND)] * dim
    nm_options = {"maxfev": maxfev, "xatol": 1e-4, "fatol": 1e-6, "adaptive": dim > 4}

    best = None
    values = []
    for x0 in start_points:
        # simplex search, restarted once with a fresh simplex if it ran out of budget
        res = minimize(f, x0, method="Nelder-Mead", options=nm_options)
        nfev = res.nfev
        success = bool(res.success)
        x_best, f_best = res.x, res.fun
        if not success and np.isfinite(f_best):
            res = minimize(f, x_best, method="Nelder-Mead", options=nm_options)
            nfev += res.nfev
            if res.fun <= f_best:
                x_best, f_best, success = res.x, res.fun, bool(res.success)
        if options.polish and np.isfinite(f_best):
            res2 = minimize(
                f,
                np.clip(x_best, -COORD_BOUND, COORD_BOUND),
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": options.max_iter, "ftol": options.tol, "gtol": 1e-6},
            )
            nfev += res2.nfev
            if res2.fun <= f_best:
                x_best, f_best = res2.x, res2.fun
                success = bool(res2.success)
        values.append(f_best)
        if np.isfinite(f_best) and (best is None or f_best < best[1]):
            best = (x_best, f_best, success, nfev)

    if best is None:
        raise RuntimeError("all optimization starts produced non-finite likelihoods")

    finite_vals = [-v for v in values if np.isfinite(v)]
    spread = float(max(finite_vals) - min(finite_vals)) if len(finite_vals) > 1 else 0.0
    x_hat = np.asarray(best[0], dtype=float)
    params_hat = layout.unpack(x_hat)
    loglik = dataset_loglik(model, params_hat, records, validate=False).value
    return FitResult(
        params_hat=params_hat,
        free_vector_hat=x_hat,
        free_names=layout.names,
        loglik=loglik,
        converged=best[2],
        iterations=int(best[3]),
        multistart_spread=spread,
    )


@dataclass(frozen=True)
class StdErrors:
    se_free: np.ndarray
    ci: dict[str, tuple[float, float]]
    hessian_pd: bool


def finite_difference_hessian(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite-difference Hessian with per-coordinate relative steps."""
    x = np.asarray(x, dtype=float)
    dim = x.size
    h = step * np.maximum(1.0, np.abs(x))
    f0 = f(x)
    hess = np.empty((dim, dim))

    def at(shifts):
        z = x.copy()
        for i, s in shifts:
            z[i] += s
        return f(z)

    for i in range(dim):
        hess[i, i] = (at([(i, h[i])]) - 2.0 * f0 + at([(i, -h[i])])) / h[i] ** 2
        for j in range(i + 1, dim):
            hess[i, j] = hess[j, i] = (
                at([(i, h[i]), (j, h[j])])
                - at([(i, h[i]), (j, -h[j])])
                - at([(i, -h[i]), (j, h[j])])
                + at([(i, -h[i]), (j, -h[j])])
            ) / (4.0 * h[i] * h[j])
    return hess


def standard_errors(
    model: MixtureModelSpec,
    records,
    constraints: ConstraintSet | None,
    free_vector_hat: np.ndarray,
    step: float = 1e-4,
) -> StdErrors:
    """Model-based standard errors at an interior optimum.

    The observed information is a central finite-difference Hessian of the log
    likelihood on the transformed scale; 95% intervals are coordinate +- 1.96
    se mapped monotonically to the natural scale (exp for rates, the block
    softmax for probabilities).  When the information matrix is not positive
    definite (boundary or flat coordinates), the result is flagged: offending
    coordinates get NaN and the remaining ones are rescued from the principal
    submatrix when that is positive definite.
    """
    layout = FreeParameterization(model, constraints)
    x = np.asarray(free_vector_hat, dtype=float)
    dim = layout.dim
    f = _objective(model, records, layout)
    info = -finite_difference_hessian(lambda z: -f(z), x, step)

    se = np.full(dim, np.nan)
    usable = np.isfinite(info).all(axis=0) & np.isfinite(info).all(axis=1) & (np.diag(info) > 0)
    pd = False
    if usable.all():
        try:
            pd = bool(np.linalg.eigvalsh(info).min() > 0)
        except np.linalg.LinAlgError:
            pd = False
    if pd:
        diag = np.diag(np.linalg.inv(info))
        se = np.where(diag > 0, np.sqrt(np.clip(diag, 0.0, None)), np.nan)
    elif usable.any():
        sub = info[np.ix_(usable, usable)]
        try:
            if np.linalg.eigvalsh(sub).min() > 0:
                diag = np.diag(np.linalg.inv(sub))
                se[usable] = np.where(diag > 0, np.sqrt(np.clip(diag, 0.0, None)), np.nan)
        except np.linalg.LinAlgError:
            pass

    ci = {}
    for idx, name in enumerate(layout.names):
        if np.isfinite(se[idx]):
            ci[name] = layout.natural_interval(x, idx, 1.96 * se[idx])
        else:
            ci[name] = (math.nan, math.nan)
    return StdErrors(se_free=se, ci=ci, hessian_pd=pd)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalPrior:
    """Normal density on the transformed (log / logit) coordinate."""

    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("prior sd must be > 0")

    def logpdf(self, x: float) -> float:
        z = (x - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class Uniform01Prior:
    """Uniform(0,1) on the natural probability scale of the coordinate.

    Equivalent to a standard-logistic density on the transformed coordinate;
    only meaningful for probability-block coordinates.
    """

    def logpdf(self, x: float) -> float:
        # log of e^x / (1 + e^x)^2, stable on both tails
        return -abs(x) - 2.0 * math.log1p(math.exp(-abs(x)))


@dataclass(frozen=True)
class PriorSpec:
    """One prior per free coordinate, keyed by the coordinate's parameter name."""

    coords: dict

    def validate(self, layout: FreeParameterization) -> None:
        for name, kind in zip(layout.names, layout.kinds):
            if name not in self.coords:
                raise ValueError(f"no prior given for free coordinate {name}")
            if isinstance(self.coords[name], Uniform01Prior) and kind != "prob":
                raise ValueError(f"Uniform(0,1) prior is only valid for probability coordinates ({name})")
        for name in self.coords:
            if name not in layout.names:
                raise ValueError(f"prior given for unknown coordinate {name}")

    def log_density(self, x: np.ndarray, layout: FreeParameterization) -> float:
        return float(sum(self.coords[name].logpdf(x[i]) for i, name in enumerate(layout.names)))

    @classmethod
    def noninformative(cls, layout: FreeParameterization) -> "PriorSpec":
        """Uniform(0,1) probabilities; N(0, sd = sqrt(1000)) log intensities."""
        coords = {}
        for name, kind in zip(layout.names, layout.kinds):
            coords[name] = Uniform01Prior() if kind == "prob" else NormalPrior(0.0, math.sqrt(1000.0))
        return cls(coords)

    @classmethod
    def adams(cls, layout: FreeParameterization) -> "PriorSpec":
        """Population-prevalence-informed priors for the dementia model.

        Centers the AD mixture weight and the initial disease probabilities on
        the ADAMS study values; everything else stays non-informative.  For
        pi blocks with more than two support states the coordinate is the
        log-odds against the block's reference state.
        """
        spec = cls.noninformative(layout)
        informative = {
            "psi.2": NormalPrior(0.99, 2.0),
            "pi1.2": NormalPrior(-3.69, 0.5),
            "pi2.3": NormalPrior(-3.74, 0.5),
        }
        coords = dict(spec.coords)
        for name, prior in informative.items():
            if name in coords:
                coords[name] = prior
        return cls(coords)

    @classmethod
    def centered_at(cls, layout: FreeParameterization, x_center: np.ndarray, sd: float) -> "PriorSpec":
        """Independent normals centered at a given free vector (testing aid)."""
        return cls({name: NormalPrior(float(x_center[i]), sd) for i, name in enumerate(layout.names)})


# ---------------------------------------------------------------------------
# Adaptive blocked random-walk Metropolis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BayesOptions:
    chains: int = 4
    iterations: int = 2000
    burn_in: int | None = None  # default: half the iterations
    seed: int = 0
    target_accept: float = 0.234
    init_scale: float = 0.5
    workers: int = 1


@dataclass
class PosteriorSummary:
    """Post burn-in draws with natural-scale summaries and convergence diagnostics."""

    free_names: list[str]
    names: list[str]
    draws: np.ndarray
    natural_draws: np.ndarray
    chain_id: np.ndarray
    iteration: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    rhat: np.ndarray
    n_eff: np.ndarray
    degenerate: np.ndarray
    acceptance_rate: dict[str, float]

    def summary_row(self, name: str) -> dict:
        k = self.names.index(name)
        return {
            "mean": float(self.mean[k]),
            "sd": float(self.sd[k]),
            "lower": float(self.lower[k]),
            "upper": float(self.upper[k]),
            "rhat": float(self.rhat[k]),
            "n_eff": float(self.n_eff[k]),
        }


def _block_indices(layout: FreeParameterization) -> dict[str, np.ndarray]:
    blocks: dict[str, list[int]] = {}
    for i, key in enumerate(layout.block_keys):
        blocks.setdefault(key, []).append(i)
    return {k: np.array(v) for k, v in blocks.items()}


def _chain_worker(args):
    (model, records, constraints, prior, iterations, burn_in, target, init_scale, seed, chain) = args
    layout = FreeParameterization(model, constraints)
    f = _objective(model, records, layout)

    def log_post(x):
        neg = f(x)
        if not np.isfinite(neg):
            return -math.inf
        return -neg + prior.log_density(x, layout)

    rng = substream(seed, DOMAIN_CHAIN, chain)
    x = None
    for attempt in range(100):
        cand = rng.normal(0.0, init_scale, layout.dim)
        if np.isfinite(log_post(cand)):
            x = cand
            break
    if x is None:
        raise RuntimeError("non-finite log-posterior at all initialization attempts")

    blocks = _block_indices(layout)
    scales = {k: 0.5 / math.sqrt(len(idx)) for k, idx in blocks.items()}
    lp = log_post(x)
    kept = np.empty((iterations - burn_in, layout.dim))
    accept_counts = {k: 0 for k in blocks}
    for t in range(1, iterations + 1):
        for key, idx in blocks.items():
            prop = x.copy()
            prop[idx] = prop[idx] + scales[key] * rng.standard_normal(idx.size)
            lp_new = log_post(prop)
            log_alpha = lp_new - lp
            alpha = math.exp(min(0.0, log_alpha)) if np.isfinite(log_alpha) else 0.0
            if rng.random() < alpha:
                x, lp = prop, lp_new
                if t > burn_in:
                    accept_counts[key] += 1
            if t <= burn_in:
                gamma = (t + 10.0) ** -0.6
                scales[key] = float(scales[key] * math.exp(gamma * (alpha - target)))
        if t > burn_in:
            kept[t - burn_in - 1] = x
    n_post = iterations - burn_in
    rates = {k: accept_counts[k] / n_post for k in blocks}
    return kept, rates


def fit_bayes(
    model: MixtureModelSpec,
    records,
    constraints: ConstraintSet | None,
    priors: PriorSpec,
    options: BayesOptions | None = None,
) -> PosteriorSummary:
    """Sample the posterior with adaptive blocked random-walk Metropolis.

    Proposal scales adapt toward the target acceptance rate during burn-in
    and are frozen afterwards; chains use independent RNG substreams so the
    result does not depend on scheduling.  An empty dataset gives a
    prior-only run.
    """
    options = options or BayesOptions()
    if options.chains < 1 or options.iterations < 2:
        raise ValueError("need at least one chain and two iterations")
    burn_in = options.burn_in if options.burn_in is not None else options.iterations // 2
    if not 0 <= burn_in < options.iterations:
        raise ValueError("burn_in must lie in [0, iterations)")
    for i, r in enumerate(records):
        try:
            validate_record(model, r)
        except ValueError as exc:
            raise ValueError(f"record {i}: {exc}") from exc
    layout = FreeParameterization(model, constraints)
    priors.validate(layout)

    jobs = [
        (
            model,
            list(records),
            constraints,
            priors,
            options.iterations,
            burn_in,
            options.target_accept,
            options.init_scale,
            options.seed,
            chain,
        )
        for chain in range(options.chains)
    ]
    if options.workers <= 1:
        outputs = [_chain_worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=options.workers) as pool:
            outputs = list(pool.map(_chain_worker, jobs))

    chain_draws = [out[0] for out in outputs]
    acc = {
        key: float(np.mean([out[1][key] for out in outputs])) for key in outputs[0][1]
    }
    n_post = options.iterations - burn_in
    draws = np.vstack(chain_draws)
    chain_id = np.repeat(np.arange(options.chains), n_post)
    iteration = np.tile(np.arange(burn_in + 1, options.iterations + 1), options.chains)

    names = layout.natural_names()
    natural_chain = []
    for kept in chain_draws:
        nat = np.empty((kept.shape[0], len(names)))
        for r in range(kept.shape[0]):
            nat[r] = layout.natural_values(layout.unpack(kept[r]))
        natural_chain.append(nat)
    natural = np.vstack(natural_chain)

    diag = diagnostics(natural_chain)
    lower, upper = np.quantile(natural, [0.025, 0.975], axis=0)
    return PosteriorSummary(
        free_names=layout.names,
        names=names,
        draws=draws,
        natural_draws=natural,
        chain_id=chain_id,
        iteration=iteration,
        mean=natural.mean(axis=0),
        sd=natural.std(axis=0, ddof=1),
        lower=lower,
        upper=upper,
        rhat=diag.rhat,
        n_eff=diag.n_eff,
        degenerate=diag.degenerate,
        acceptance_rate=acc,
    )


# ---------------------------------------------------------------------------
# Convergence diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticsResult:
    rhat: np.ndarray
    n_eff: np.ndarray
    degenerate: np.ndarray


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.size
    centered = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conjugate(f))[:n].real / n
    return acov


def diagnostics(chains) -> DiagnosticsResult:
    """Split-chain potential scale reduction and autocorrelation-based n_eff.

    ``chains`` is a sequence of (iterations x parameters) arrays, one per
    chain.  Constant (zero-variance) parameters are reported as converged
    (rhat 1, n_eff = total draws) with the degeneracy flag set.
    """
    arrays = [np.atleast_2d(np.asarray(c, dtype=float)) for c in chains]
    if len(arrays) < 2:
        raise ValueError("diagnostics need at least 2 chains")
    n_min = min(a.shape[0] for a in arrays)
    if n_min < 10:
        raise ValueError("diagnostics need at least 10 draws per chain")
    p = arrays[0].shape[1]
    half = n_min // 2
    sequences = []
    for a in arrays:
        a = a[:n_min]
        sequences.append(a[:half])
        sequences.append(a[half : 2 * half])
    seqs = np.stack(sequences)  # (m, half, p)
    m, n, _ = seqs.shape

    rhat = np.empty(p)
    n_eff = np.empty(p)
    degenerate = np.zeros(p, dtype=bool)
    for k in range(p):
        data = seqs[:, :, k]
        means = data.mean(axis=1)
        variances = data.var(axis=1, ddof=1)
        w = variances.mean()
        if w == 0 or not np.isfinite(w):
            rhat[k] = 1.0
            n_eff[k] = m * n
            degenerate[k] = True
            continue
        b_over_n = means.var(ddof=1)
        var_plus = (n - 1) / n * w + b_over_n
        rhat[k] = math.sqrt(var_plus / w)

        acov = np.stack([_autocovariance(data[j]) for j in range(m)]).mean(axis=0)
        rho = 1.0 - (w - acov) / var_plus
        rho[0] = 1.0
        # Geyer initial monotone positive sequence on paired autocorrelations
        tau = 0.0
        prev = math.inf
        t = 0
        while t + 1 < n:
            pair = rho[t] + rho[t + 1]
            if pair <= 0:
                break
            pair = min(pair, prev)
            tau += pair
            prev = pair
            t += 2
        tau = max(2.0 * tau - 1.0, 1e-12)
        n_eff[k] = min(m * n / tau, m * n)
    return DiagnosticsResult(rhat=rhat, n_eff=n_eff, degenerate=degenerate)
