"""Time-homogeneous continuous-time Markov chain primitives.

A chain on states ``1..dim`` is described by a generator (intensity) matrix
whose off-diagonal entries are non-negative transition rates and whose rows
sum to zero.  Transition probabilities over an elapsed time ``dt`` are
``P(dt) = exp(dt * Lambda)``, computed with degree-13 Pade scaling-and-squaring.
States are 1-based throughout the public API; arrays are 0-based internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "IntensityMatrix",
    "TransitionProbabilityMatrix",
    "build_intensity",
    "transition_probability",
]

ROW_SUM_TOL = 1e-12
NEGATIVE_CLAMP_TOL = 1e-12

# Degree-13 Pade coefficients and the associated 1-norm threshold.
_PADE13 = np.array(
    [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ]
)
_THETA13 = 5.371920351148152


@dataclass(frozen=True)
class IntensityMatrix:
    """Generator matrix of a time-homogeneous CTMC.

    Rates are per unit time (years in the bundled applications).  Rows of
    absorbing states are identically zero.
    """

    dim: int
    rates: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.shape != (self.dim, self.dim):
            raise ValueError(f"rates must be {self.dim}x{self.dim}, got {rates.shape}")
        if not np.all(np.isfinite(rates)):
            raise ValueError("rates must be finite")
        off = rates[~np.eye(self.dim, dtype=bool)]
        if np.any(off < 0):
            raise ValueError("off-diagonal intensities must be >= 0")
        row_sums = rates.sum(axis=1)
        if np.any(np.abs(row_sums) > ROW_SUM_TOL):
            raise ValueError(f"rows must sum to 0, max |row sum| = {np.abs(row_sums).max():.3g}")
        rates = rates.copy()
        rates.flags.writeable = False
        object.__setattr__(self, "rates", rates)

    @property
    def absorbing_states(self) -> tuple[int, ...]:
        """1-based states with no outgoing intensity."""
        zero_row = np.all(self.rates == 0.0, axis=1)
        return tuple(int(i) + 1 for i in np.nonzero(zero_row)[0])


@dataclass(frozen=True)
class TransitionProbabilityMatrix:
    """Row-stochastic matrix ``P(dt) = exp(dt * Lambda)`` over horizon ``dt``."""

    dim: int
    probs: np.ndarray
    horizon: float

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (self.dim, self.dim):
            raise ValueError(f"probs must be {self.dim}x{self.dim}")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-10):
            raise ValueError("rows must sum to 1")
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)


def build_intensity(
    dim: int, transitions: list[tuple[int, int, float]] | tuple[tuple[int, int, float], ...]
) -> IntensityMatrix:
    """Assemble a generator from ``(from_state, to_state, rate)`` triples.

    The diagonal is filled so every row sums to zero; states with no outgoing
    transition come out absorbing.
    """
    if dim < 1:
        raise ValueError("dim must be a positive integer")
    rates = np.zeros((dim, dim))
    seen: set[tuple[int, int]] = set()
    for i, j, rate in transitions:
        if not (1 <= i <= dim and 1 <= j <= dim):
            raise ValueError(f"state index out of range in transition ({i}, {j})")
        if i == j:
            raise ValueError(f"self-transition ({i}, {j}) is not allowed")
        if not np.isfinite(rate) or rate < 0:
            raise ValueError(f"rate for ({i}, {j}) must be finite and >= 0, got {rate}")
        if (i, j) in seen:
            raise ValueError(f"duplicate transition ({i}, {j})")
        seen.add((i, j))
        rates[i - 1, j - 1] = rate
    np.fill_diagonal(rates, 0.0)
    np.fill_diagonal(rates, -rates.sum(axis=1))
    return IntensityMatrix(dim=dim, rates=rates)


def _expm_stack(a: np.ndarray) -> np.ndarray:
    """exp() of a stack of square matrices, shape (n, J, J).

    Degree-13 Pade with per-slice scaling-and-squaring.  Slices are
    independent: each result depends only on its own matrix.
    """
    a = np.asarray(a, dtype=float)
    n, j, _ = a.shape
    norms = np.abs(a).sum(axis=-2).max(axis=-1)  # 1-norm per slice
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(norms / _THETA13))
    s = np.where(norms > _THETA13, s, 0.0).astype(int)
    a = a / (2.0 ** s)[:, None, None]

    b = _PADE13
    eye = np.broadcast_to(np.eye(j), a.shape)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * eye)
    v = a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * eye
    p = np.linalg.solve(v - u, v + u)
    for k in range(1, int(s.max(initial=0)) + 1):
        mask = s >= k
        p[mask] = p[mask] @ p[mask]
    return p


def _as_stochastic(raw: np.ndarray, absorbing_idx: np.ndarray) -> np.ndarray:
    """Clamp round-off noise in a stack of raw exp(dt*Lambda) results.

    Violations beyond ``NEGATIVE_CLAMP_TOL`` indicate a bug upstream and raise.
    Absorbing rows are set to exact unit vectors.
    """
    worst = raw.min()
    if worst < -NEGATIVE_CLAMP_TOL:
        raise ValueError(
            f"transition probabilities have entry {worst:.3g} < -{NEGATIVE_CLAMP_TOL:g}; "
            "generator or horizon is numerically pathological"
        )
    p = np.clip(raw, 0.0, None)
    p /= p.sum(axis=-1, keepdims=True)
    np.clip(p, 0.0, 1.0, out=p)
    if absorbing_idx.size:
        p[..., absorbing_idx, :] = 0.0
        p[..., absorbing_idx, absorbing_idx] = 1.0
    return p


def transition_probability_stack(lam: IntensityMatrix, dts: np.ndarray) -> np.ndarray:
    """exp(dt * Lambda) for a vector of horizons, as a (len(dts), J, J) stack."""
    dts = np.asarray(dts, dtype=float)
    if not np.all(np.isfinite(dts)) or np.any(dts < 0):
        raise ValueError("horizons must be finite and >= 0")
    absorbing_idx = np.array([s - 1 for s in lam.absorbing_states], dtype=int)
    out = np.empty((dts.size, lam.dim, lam.dim))
    nonzero = dts > 0
    if nonzero.any():
        a = dts[nonzero, None, None] * lam.rates[None, :, :]
        out[nonzero] = _as_stochastic(_expm_stack(a), absorbing_idx)
    out[~nonzero] = np.eye(lam.dim)
    return out


def transition_probability(lam: IntensityMatrix, dt: float) -> TransitionProbabilityMatrix:
    """Transition probability matrix over an elapsed time ``dt >= 0``."""
    if not np.isfinite(dt):
        raise ValueError("dt must be finite")
    if dt < 0:
        raise ValueError("dt must be >= 0")
    probs = transition_probability_stack(lam, np.array([dt]))[0]
    return TransitionProbabilityMatrix(dim=lam.dim, probs=probs, horizon=float(dt))
