"""Model specification for finite-mixture hidden Markov multistate models.

A mixture model couples M latent component chains (each strictly progressive,
with a deterministic 0/1 emission onto a shared observed state space) with
mixture weights ``psi``.  Parameters are the mixture weights, per-component
initial probabilities over a declared support, and positive transition rates.

``FreeParameterization`` maps a constrained ``ParameterSet`` to and from an
unconstrained real vector: log rates, multinomial-logit initial probabilities
(first free support state as reference), logit mixture weights.  Equality and
ratio constraints eliminate coordinates rather than penalizing them.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .ctmc import IntensityMatrix, build_intensity

__all__ = [
    "EmissionMatrix",
    "ComponentSpec",
    "MixtureModelSpec",
    "ParameterSet",
    "FixValue",
    "FixRatio",
    "ConstraintSet",
    "FreeParameterization",
    "pack",
    "unpack",
    "nun_study_model",
    "parse_param_name",
    "param_name",
]

COORD_GUARD = 700.0  # |coordinate| beyond this overflows exp()
CONSTRAINT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class EmissionMatrix:
    """Deterministic emission map from latent to observed states.

    Each row has exactly one 1: latent state i is always classified as the
    observed state ``observed_state(i)``.
    """

    latent_dim: int
    obs_dim: int
    e: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, EmissionMatrix)
            and self.latent_dim == other.latent_dim
            and self.obs_dim == other.obs_dim
            and np.array_equal(self.e, other.e)
        )

    def __post_init__(self):
        e = np.asarray(self.e, dtype=int)
        if e.shape != (self.latent_dim, self.obs_dim):
            raise ValueError(f"emission must be {self.latent_dim}x{self.obs_dim}")
        if not np.all((e == 0) | (e == 1)) or np.any(e.sum(axis=1) != 1):
            raise ValueError("each emission row must contain exactly one 1")
        e = e.copy()
        e.flags.writeable = False
        object.__setattr__(self, "e", e)

    @classmethod
    def from_map(cls, latent_dim: int, obs_dim: int, mapping: dict[int, int]) -> "EmissionMatrix":
        e = np.zeros((latent_dim, obs_dim), dtype=int)
        for latent, obs in mapping.items():
            e[latent - 1, obs - 1] = 1
        return cls(latent_dim, obs_dim, e)

    def observed_state(self, latent: int) -> int:
        return int(np.argmax(self.e[latent - 1])) + 1

    def mask(self, obs: int) -> np.ndarray:
        """0/1 vector over latent states emitting observed state ``obs``."""
        if not 1 <= obs <= self.obs_dim:
            raise ValueError(f"observed state {obs} outside 1..{self.obs_dim}")
        return self.e[:, obs - 1].astype(float)


def _topological_ok(n_states: int, transitions: tuple[tuple[int, int], ...]) -> bool:
    """True when the directed transition graph is acyclic."""
    out_edges: dict[int, list[int]] = {s: [] for s in range(1, n_states + 1)}
    indeg = {s: 0 for s in range(1, n_states + 1)}
    for i, j in transitions:
        out_edges[i].append(j)
        indeg[j] += 1
    stack = [s for s in indeg if indeg[s] == 0]
    seen = 0
    while stack:
        s = stack.pop()
        seen += 1
        for j in out_edges[s]:
            indeg[j] -= 1
            if indeg[j] == 0:
                stack.append(j)
    return seen == n_states


@dataclass(frozen=True)
class ComponentSpec:
    """One latent disease-type process."""

    n_states: int
    absorbing_states: tuple[int, ...]
    transitions: tuple[tuple[int, int], ...]
    emission: EmissionMatrix
    initial_support: tuple[int, ...]

    def __post_init__(self):
        n = self.n_states
        object.__setattr__(self, "absorbing_states", tuple(sorted(self.absorbing_states)))
        object.__setattr__(self, "transitions", tuple(sorted((int(i), int(j)) for i, j in self.transitions)))
        object.__setattr__(self, "initial_support", tuple(sorted(self.initial_support)))
        if n < 1:
            raise ValueError("component needs at least one state")
        for i, j in self.transitions:
            if not (1 <= i <= n and 1 <= j <= n) or i == j:
                raise ValueError(f"bad transition ({i}, {j})")
        if len(set(self.transitions)) != len(self.transitions):
            raise ValueError("duplicate transitions")
        with_exit = {i for i, _ in self.transitions}
        derived_absorbing = tuple(s for s in range(1, n + 1) if s not in with_exit)
        if tuple(self.absorbing_states) != derived_absorbing:
            raise ValueError(
                f"absorbing_states {self.absorbing_states} must be exactly the states "
                f"without outgoing transitions {derived_absorbing}"
            )
        if not _topological_ok(n, self.transitions):
            raise ValueError("transition structure must be strictly progressive (acyclic)")
        if self.emission.latent_dim != n:
            raise ValueError("emission latent dimension mismatch")
        if not self.initial_support:
            raise ValueError("initial_support must be nonempty")
        for s in self.initial_support:
            if not 1 <= s <= n:
                raise ValueError(f"initial_support state {s} out of range")
            if s in self.absorbing_states:
                raise ValueError(f"initial_support must exclude absorbing state {s}")

    @property
    def transient_states(self) -> tuple[int, ...]:
        absorbing = set(self.absorbing_states)
        return tuple(s for s in range(1, self.n_states + 1) if s not in absorbing)

    def successors(self, state: int) -> tuple[int, ...]:
        return tuple(j for i, j in self.transitions if i == state)


@dataclass(frozen=True)
class MixtureModelSpec:
    """M latent components sharing one observed state space."""

    components: tuple[ComponentSpec, ...]
    obs_states: int
    obs_absorbing: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "obs_absorbing", tuple(sorted(self.obs_absorbing)))
        if not self.components:
            raise ValueError("need at least one component")
        dy = set(self.obs_absorbing)
        if not dy <= set(range(1, self.obs_states + 1)):
            raise ValueError("obs_absorbing must be a subset of the observed states")
        for m, comp in enumerate(self.components, start=1):
            if comp.emission.obs_dim != self.obs_states:
                raise ValueError(f"component {m} emission does not match the observed state space")
            for s in range(1, comp.n_states + 1):
                emits_dead = comp.emission.observed_state(s) in dy
                if emits_dead != (s in comp.absorbing_states):
                    raise ValueError(
                        f"component {m} state {s}: latent state must emit an absorbing "
                        "observed state exactly when it is absorbing"
                    )

    @property
    def M(self) -> int:
        return len(self.components)

    def alive_vector(self, m: int) -> np.ndarray:
        """Indicator over latent states of component m emitting a non-absorbing observed state."""
        comp = self.components[m - 1]
        dy = set(self.obs_absorbing)
        return np.array(
            [0.0 if comp.emission.observed_state(s) in dy else 1.0 for s in range(1, comp.n_states + 1)]
        )


@dataclass(frozen=True)
class ParameterSet:
    """Mixture weights, initial probabilities, and transition rates.

    ``pi[m-1]`` is a full-length vector over the states of component m with
    zeros outside the declared initial support; ``rates[m-1]`` maps each
    structural transition ``(i, j)`` to a positive rate.
    """

    psi: np.ndarray
    pi: tuple[np.ndarray, ...]
    rates: tuple[dict[tuple[int, int], float], ...]

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float).copy()
        psi.flags.writeable = False
        object.__setattr__(self, "psi", psi)
        pis = []
        for v in self.pi:
            v = np.asarray(v, dtype=float).copy()
            v.flags.writeable = False
            pis.append(v)
        object.__setattr__(self, "pi", tuple(pis))
        object.__setattr__(self, "rates", tuple(dict(r) for r in self.rates))

    def validate(self, model: MixtureModelSpec, tol: float = 1e-9) -> None:
        if self.psi.shape != (model.M,):
            raise ValueError("psi length must equal the number of components")
        if np.any(self.psi < -tol) or np.any(self.psi > 1 + tol) or abs(self.psi.sum() - 1) > tol:
            raise ValueError("psi must be a probability vector")
        if len(self.pi) != model.M or len(self.rates) != model.M:
            raise ValueError("pi and rates must have one entry per component")
        for m, comp in enumerate(model.components, start=1):
            piv = self.pi[m - 1]
            if piv.shape != (comp.n_states,):
                raise ValueError(f"pi for component {m} has wrong length")
            if np.any(piv < -tol) or abs(piv.sum() - 1) > tol:
                raise ValueError(f"pi for component {m} must be a probability vector")
            support = set(comp.initial_support)
            for s in range(1, comp.n_states + 1):
                if s not in support and piv[s - 1] != 0.0:
                    raise ValueError(f"pi for component {m} puts mass on state {s} outside its support")
            rd = self.rates[m - 1]
            if set(rd) != set(comp.transitions):
                raise ValueError(f"rates for component {m} must cover exactly its transitions")
            for key, rate in rd.items():
                if not np.isfinite(rate) or rate <= 0:
                    raise ValueError(f"rate for component {m} transition {key} must be finite and > 0")

    def intensity(self, model: MixtureModelSpec, m: int) -> IntensityMatrix:
        comp = model.components[m - 1]
        triples = [(i, j, self.rates[m - 1][(i, j)]) for i, j in comp.transitions]
        return build_intensity(comp.n_states, triples)


# ---------------------------------------------------------------------------
# Constraints and the free parameterization
# ---------------------------------------------------------------------------

_PARAM_RE = re.compile(r"^(psi\.(\d+)|pi(\d+)\.(\d+)|lambda(\d+)\.(\d+)\.(\d+))$")


def parse_param_name(name: str) -> tuple:
    """Parse ``psi.m`` / ``pi{m}.{j}`` / ``lambda{m}.{i}.{j}`` into a reference tuple."""
    m = _PARAM_RE.match(name.strip())
    if m is None:
        raise ValueError(f"cannot parse parameter name {name!r}")
    if m.group(2) is not None:
        return ("psi", int(m.group(2)))
    if m.group(3) is not None:
        return ("pi", int(m.group(3)), int(m.group(4)))
    return ("rate", int(m.group(5)), int(m.group(6)), int(m.group(7)))


def param_name(ref: tuple) -> str:
    if ref[0] == "psi":
        return f"psi.{ref[1]}"
    if ref[0] == "pi":
        return f"pi{ref[1]}.{ref[2]}"
    return f"lambda{ref[1]}.{ref[2]}.{ref[3]}"


@dataclass(frozen=True)
class FixValue:
    """Pin a parameter to a constant."""

    param: str
    value: float


@dataclass(frozen=True)
class FixRatio:
    """Pin ``param = ratio * ref``; ``param`` is eliminated from the free vector."""

    param: str
    ref: str
    ratio: float


@dataclass(frozen=True)
class ConstraintSet:
    constraints: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)


EMPTY_CONSTRAINTS = ConstraintSet()


class _Block:
    """Resolution of one probability block (psi, or pi of one component)."""

    def __init__(self, key: str, states: tuple[int, ...]):
        self.key = key
        self.states = states
        self.pinned: dict[int, float] = {}
        self.tied: dict[int, tuple[int, float]] = {}  # state -> (free root state, multiplier)
        self.free: list[int] = []
        self.reference: int | None = None


class FreeParameterization:
    """Bijection between constrained parameters and an unconstrained vector.

    Coordinate layout: mixture-weight coordinates, then per-component initial
    probability coordinates, then per-component log rates.  Each coordinate is
    named after the natural parameter it drives.
    """

    def __init__(self, model: MixtureModelSpec, constraints: ConstraintSet | None = None):
        self.model = model
        self.constraints = constraints or EMPTY_CONSTRAINTS
        self._rate_pinned: dict[tuple, float] = {}
        self._rate_tied: dict[tuple, tuple[tuple, float]] = {}
        self._rate_free: list[tuple] = []
        self._blocks: dict[str, _Block] = {}
        self._build()

    # -- construction -------------------------------------------------------

    def _ref_exists(self, ref: tuple) -> None:
        kind = ref[0]
        if kind == "psi":
            if not 1 <= ref[1] <= self.model.M:
                raise ValueError(f"unknown parameter {param_name(ref)}")
        elif kind == "pi":
            _, m, j = ref
            if not 1 <= m <= self.model.M:
                raise ValueError(f"unknown parameter {param_name(ref)}")
            if j not in self.model.components[m - 1].initial_support:
                raise ValueError(f"{param_name(ref)} is not in the initial support of component {m}")
        else:
            _, m, i, j = ref
            if not 1 <= m <= self.model.M or (i, j) not in self.model.components[m - 1].transitions:
                raise ValueError(f"unknown parameter {param_name(ref)}")

    def _build(self):
        model = self.model
        pinned: dict[tuple, float] = {}
        ties: dict[tuple, tuple[tuple, float]] = {}
        for c in self.constraints:
            if isinstance(c, FixValue):
                ref = parse_param_name(c.param)
                self._ref_exists(ref)
                if ref in pinned or ref in ties:
                    raise ValueError(f"parameter {c.param} constrained twice")
                if not np.isfinite(c.value):
                    raise ValueError(f"fix_value for {c.param} must be finite")
                if ref[0] == "rate" and c.value <= 0:
                    raise ValueError(f"fix_value for rate {c.param} must be > 0")
                if ref[0] in ("psi", "pi") and not 0 <= c.value <= 1:
                    raise ValueError(f"fix_value for {c.param} must lie in [0, 1]")
                pinned[ref] = float(c.value)
            elif isinstance(c, FixRatio):
                ref = parse_param_name(c.param)
                root = parse_param_name(c.ref)
                self._ref_exists(ref)
                self._ref_exists(root)
                if ref in pinned or ref in ties:
                    raise ValueError(f"parameter {c.param} constrained twice")
                if not np.isfinite(c.ratio) or c.ratio <= 0:
                    raise ValueError(f"fix_ratio for {c.param} must have a positive finite ratio")
                if ref[0] != root[0]:
                    raise ValueError(f"cannot tie {c.param} to {c.ref}: different parameter kinds")
                if ref[0] in ("psi", "pi") and ref[1] != root[1] and ref[0] == "pi":
                    raise ValueError("initial-probability ratios must stay within one component")
                if ref == root:
                    raise ValueError(f"cannot tie {c.param} to itself")
                ties[ref] = (root, float(c.ratio))
            else:
                raise TypeError(f"unknown constraint {c!r}")

        # Collapse tie chains onto terminal roots; terminal roots are free or pinned.
        resolved: dict[tuple, tuple[tuple, float]] = {}

        def chase(ref: tuple, trail: tuple) -> tuple[tuple, float]:
            if ref in trail:
                raise ValueError(f"constraint cycle through {param_name(ref)}")
            if ref not in ties:
                return ref, 1.0
            if ref in resolved:
                return resolved[ref]
            root, mult = ties[ref]
            terminal, mult2 = chase(root, trail + (ref,))
            resolved[ref] = (terminal, mult * mult2)
            return resolved[ref]

        for ref in ties:
            chase(ref, ())
        for ref, (terminal, mult) in resolved.items():
            if terminal in pinned:
                pinned[ref] = mult * pinned[terminal]
                if ref[0] == "rate" and pinned[ref] <= 0:
                    raise ValueError(f"{param_name(ref)} resolves to a non-positive rate")
        tied_final = {ref: rm for ref, rm in resolved.items() if rm[0] not in pinned}

        # Rate statuses.
        for m, comp in enumerate(model.components, start=1):
            for i, j in comp.transitions:
                ref = ("rate", m, i, j)
                if ref in pinned:
                    self._rate_pinned[ref] = pinned[ref]
                elif ref in tied_final:
                    self._rate_tied[ref] = tied_final[ref]
                else:
                    self._rate_free.append(ref)

        # Probability blocks.
        def build_block(key: str, kind: str, mref, states: tuple[int, ...]) -> _Block:
            block = _Block(key, states)
            for s in states:
                ref = (kind, s) if kind == "psi" else (kind, mref, s)
                if ref in pinned:
                    block.pinned[s] = pinned[ref]
                elif ref in tied_final:
                    root, mult = tied_final[ref]
                    block.tied[s] = (root[-1], mult)
                else:
                    block.free.append(s)
            total_pinned = sum(block.pinned.values())
            if total_pinned > 1 + 1e-9:
                raise ValueError(f"pinned probabilities in block {key} exceed 1")
            if block.free:
                block.reference = block.free[0]
            else:
                if block.tied:
                    raise ValueError(f"block {key} has ratio ties but no free state to anchor them")
                if abs(total_pinned - 1.0) > CONSTRAINT_TOL:
                    raise ValueError(f"block {key} is fully pinned but its values sum to {total_pinned:.6g}")
            for s, (root_state, _) in block.tied.items():
                if root_state not in block.free:
                    raise ValueError(
                        f"{key}: state {s} is tied to state {root_state}, which is not free in the same block"
                    )
            return block

        self._blocks["psi"] = build_block("psi", "psi", None, tuple(range(1, model.M + 1)))
        for m, comp in enumerate(model.components, start=1):
            self._blocks[f"pi{m}"] = build_block(f"pi{m}", "pi", m, comp.initial_support)

        # Coordinate layout.
        self._coords: list[tuple] = []  # (name, kind, block_key_or_None, ref)
        psi_block = self._blocks["psi"]
        for s in psi_block.free:
            if s != psi_block.reference:
                self._coords.append((param_name(("psi", s)), "prob", "psi", ("psi", s)))
        for m in range(1, model.M + 1):
            block = self._blocks[f"pi{m}"]
            for s in block.free:
                if s != block.reference:
                    self._coords.append((param_name(("pi", m, s)), "prob", f"pi{m}", ("pi", m, s)))
        for ref in self._rate_free:
            self._coords.append((param_name(ref), "rate", f"rates{ref[1]}", ref))

    # -- basic introspection -------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self._coords)

    @property
    def names(self) -> list[str]:
        return [c[0] for c in self._coords]

    @property
    def kinds(self) -> list[str]:
        return [c[1] for c in self._coords]

    @property
    def block_keys(self) -> list[str]:
        return [c[2] for c in self._coords]

    def natural_names(self) -> list[str]:
        """Names of every natural parameter (including pinned/tied ones)."""
        model = self.model
        names = [param_name(("psi", m)) for m in range(1, model.M + 1)]
        for m, comp in enumerate(model.components, start=1):
            names += [param_name(("pi", m, s)) for s in comp.initial_support]
        for m, comp in enumerate(model.components, start=1):
            names += [param_name(("rate", m, i, j)) for i, j in comp.transitions]
        return names

    def natural_values(self, params: ParameterSet) -> np.ndarray:
        model = self.model
        vals = list(params.psi)
        for m, comp in enumerate(model.components, start=1):
            vals += [params.pi[m - 1][s - 1] for s in comp.initial_support]
        for m, comp in enumerate(model.components, start=1):
            vals += [params.rates[m - 1][(i, j)] for i, j in comp.transitions]
        return np.array(vals)

    # -- pack / unpack -------------------------------------------------------

    def _block_probs(self, params: ParameterSet, key: str) -> dict[int, float]:
        if key == "psi":
            return {m: float(params.psi[m - 1]) for m in self._blocks["psi"].states}
        m = int(key[2:])
        return {s: float(params.pi[m - 1][s - 1]) for s in self._blocks[key].states}

    def assert_satisfies(self, params: ParameterSet) -> None:
        """Raise unless ``params`` obeys every constraint (tolerance 1e-8)."""
        params.validate(self.model)

        def check(actual: float, expected: float, what: str):
            if abs(actual - expected) > CONSTRAINT_TOL * max(1.0, abs(expected)):
                raise ValueError(f"{what}: expected {expected:.10g}, got {actual:.10g}")

        for ref, value in self._rate_pinned.items():
            check(self._rate_value(params, ref), value, f"fixed {param_name(ref)}")
        for ref, (root, mult) in self._rate_tied.items():
            check(self._rate_value(params, ref), mult * self._rate_value(params, root), f"tied {param_name(ref)}")
        for key, block in self._blocks.items():
            probs = self._block_probs(params, key)
            for s, value in block.pinned.items():
                check(probs[s], value, f"fixed {key} state {s}")
            for s, (root_state, mult) in block.tied.items():
                check(probs[s], mult * probs[root_state], f"tied {key} state {s}")

    @staticmethod
    def _rate_value(params: ParameterSet, ref: tuple) -> float:
        _, m, i, j = ref
        return params.rates[m - 1][(i, j)]

    def pack(self, params: ParameterSet) -> np.ndarray:
        self.assert_satisfies(params)
        x = np.empty(self.dim)
        for idx, (_, kind, key, ref) in enumerate(self._coords):
            if kind == "rate":
                x[idx] = math.log(self._rate_value(params, ref))
            else:
                block = self._blocks[key]
                probs = self._block_probs(params, key)
                state = ref[-1]
                ref_prob = probs[block.reference]
                if ref_prob <= 0 or probs[state] <= 0:
                    raise ValueError(
                        f"cannot pack {param_name(ref)}: free probabilities must be strictly positive"
                    )
                x[idx] = math.log(probs[state] / ref_prob)
        return x

    def unpack(self, x: np.ndarray) -> ParameterSet:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"free vector must have length {self.dim}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("free vector must be finite")
        if np.any(np.abs(x) > COORD_GUARD):
            raise ValueError(f"|coordinate| > {COORD_GUARD:g} would overflow exp()")

        coord_by_ref = {ref: x[idx] for idx, (_, _, _, ref) in enumerate(self._coords)}

        def block_values(key: str, kind: str, mref) -> dict[int, float]:
            block = self._blocks[key]
            out = dict(block.pinned)
            remaining = 1.0 - sum(block.pinned.values())
            others = [s for s in block.states if s not in block.pinned]
            if not others:
                return out
            weights = {}
            for s in block.free:
                if s == block.reference:
                    weights[s] = 1.0
                else:
                    ref = (kind, s) if kind == "psi" else (kind, mref, s)
                    weights[s] = math.exp(coord_by_ref[ref])
            for s, (root_state, mult) in block.tied.items():
                weights[s] = mult * weights[root_state]
            total = sum(weights.values())
            for s in others:
                out[s] = max(remaining, 0.0) * weights[s] / total
            return out

        psi_vals = block_values("psi", "psi", None)
        psi = np.array([psi_vals[m] for m in range(1, self.model.M + 1)])
        pis = []
        for m, comp in enumerate(self.model.components, start=1):
            vals = block_values(f"pi{m}", "pi", m)
            piv = np.zeros(comp.n_states)
            for s, p in vals.items():
                piv[s - 1] = p
            pis.append(piv)
        rates = []
        for m, comp in enumerate(self.model.components, start=1):
            rd = {}
            for i, j in comp.transitions:
                ref = ("rate", m, i, j)
                if ref in self._rate_pinned:
                    rd[(i, j)] = self._rate_pinned[ref]
                elif ref in self._rate_tied:
                    root, mult = self._rate_tied[ref]
                    rd[(i, j)] = mult * math.exp(coord_by_ref[root])
                else:
                    rd[(i, j)] = math.exp(coord_by_ref[ref])
            rates.append(rd)
        params = ParameterSet(psi=psi, pi=tuple(pis), rates=tuple(rates))
        params.validate(self.model)
        return params

    def natural_point(self, x: np.ndarray, name: str) -> float:
        """Natural-scale value of one named parameter at free vector ``x``."""
        params = self.unpack(x)
        ref = parse_param_name(name)
        if ref[0] == "psi":
            return float(params.psi[ref[1] - 1])
        if ref[0] == "pi":
            return float(params.pi[ref[1] - 1][ref[2] - 1])
        return self._rate_value(params, ref)

    def natural_interval(self, x_hat: np.ndarray, idx: int, half_width: float) -> tuple[float, float]:
        """Map ``coordinate ± half_width`` to the natural scale of coordinate ``idx``.

        Rates map through exp.  Probability coordinates map through the
        softmax of their block with the other coordinates held fixed, which is
        a shifted logistic in the coordinate (plain expit for 2-state blocks).
        """
        name, kind, key, ref = self._coords[idx]
        lo_x, hi_x = x_hat[idx] - half_width, x_hat[idx] + half_width
        if kind == "rate":
            with np.errstate(over="ignore"):
                return float(np.exp(lo_x)), float(np.exp(hi_x))

        def prob_at(coord_value: float) -> float:
            x = np.array(x_hat, dtype=float)
            # clamping is harmless: the map is monotone and saturates at 0/1
            x[idx] = min(max(coord_value, -COORD_GUARD), COORD_GUARD)
            return self.natural_point(x, name)

        return prob_at(lo_x), prob_at(hi_x)


def pack(params: ParameterSet, model: MixtureModelSpec, constraints: ConstraintSet | None = None) -> np.ndarray:
    """Constrained parameters -> unconstrained free vector."""
    return FreeParameterization(model, constraints).pack(params)


def unpack(x: np.ndarray, model: MixtureModelSpec, constraints: ConstraintSet | None = None) -> ParameterSet:
    """Unconstrained free vector -> valid ``ParameterSet`` (inverse of :func:`pack`)."""
    return FreeParameterization(model, constraints).unpack(x)


def nun_study_model() -> MixtureModelSpec:
    """The two-component dementia model used by the Nun Study application.

    Observed process: dementia-free (1), dementia (2), death (3).  Component 1
    (non-AD dementia) is a four-state progressive chain; component 2 (AD) adds
    a latent pathology state that is observed as dementia-free.
    """
    comp1 = ComponentSpec(
        n_states=4,
        absorbing_states=(3, 4),
        transitions=((1, 2), (1, 3), (2, 4)),
        emission=EmissionMatrix.from_map(4, 3, {1: 1, 2: 2, 3: 3, 4: 3}),
        initial_support=(1, 2),
    )
    comp2 = ComponentSpec(
        n_states=6,
        absorbing_states=(4, 5, 6),
        transitions=((1, 2), (1, 4), (2, 3), (2, 5), (3, 6)),
        emission=EmissionMatrix.from_map(6, 3, {1: 1, 2: 1, 3: 2, 4: 3, 5: 3, 6: 3}),
        initial_support=(1, 2, 3),
    )
    return MixtureModelSpec(components=(comp1, comp2), obs_states=3, obs_absorbing=(3,))


def is_nun_structure(model: MixtureModelSpec) -> bool:
    """True when ``model`` has exactly the structure of :func:`nun_study_model`."""
    ref = nun_study_model()
    if model.M != 2 or model.obs_states != ref.obs_states or model.obs_absorbing != ref.obs_absorbing:
        return False
    for comp, comp_ref in zip(model.components, ref.components):
        if (
            comp.n_states != comp_ref.n_states
            or comp.transitions != comp_ref.transitions
            or comp.initial_support != comp_ref.initial_support
            or not np.array_equal(comp.emission.e, comp_ref.emission.e)
        ):
            return False
    return True
