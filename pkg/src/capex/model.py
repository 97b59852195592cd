"""Discrete capability-model substrate.

Variables, instantiations, the bipartite situation->outcome network, and
Dirichlet-parameterized conditional probability tables, plus the
information-theoretic primitives everything else builds on.

All types are immutable values; update operations return new objects.
CPT rows are indexed by a mixed-radix code over the parent domains in
declared parent order, with the last parent varying fastest. That order is
fixed so persisted models stay portable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import (
    InvalidModelError,
    InvalidValueError,
    InvalidVariableError,
    MissingBindingError,
)

ROLES = ("context", "command", "outcome", "attribute")

PROB_TOL = 1e-9


@dataclass(frozen=True)
class VariableSpec:
    """A named categorical variable with a finite, ordered domain."""

    name: str
    domain: tuple[str, ...]
    role: str
    controllable: bool = False

    def __post_init__(self):
        object.__setattr__(self, "domain", tuple(self.domain))
        if not self.name:
            raise InvalidVariableError("variable name must be non-empty")
        if self.role not in ROLES:
            raise InvalidVariableError(f"unknown role {self.role!r} for variable {self.name!r}")
        if len(self.domain) < 2:
            raise InvalidVariableError(f"variable {self.name!r} needs a domain of >= 2 values")
        if len(set(self.domain)) != len(self.domain):
            raise InvalidVariableError(f"variable {self.name!r} has duplicate domain values")
        if self.role == "command" and not self.controllable:
            raise InvalidVariableError(f"command variable {self.name!r} must be controllable")

    def index_of(self, value: str) -> int:
        try:
            return self.domain.index(value)
        except ValueError:
            raise InvalidValueError(
                f"value {value!r} not in domain of variable {self.name!r}"
            ) from None


class Instantiation:
    """An assignment of values to a set of variables, usable as a dict key.

    Bindings are stored as a name-sorted tuple of (variable, value) pairs so
    equal assignments hash equally regardless of construction order.
    """

    __slots__ = ("_items", "_map")

    def __init__(self, bindings: Mapping[str, str] | Iterable[tuple[str, str]] = ()):
        m = dict(bindings.items() if isinstance(bindings, Mapping) else bindings)
        self._map = m
        self._items = tuple(sorted(m.items()))

    @property
    def bindings(self) -> dict[str, str]:
        return dict(self._map)

    def key(self) -> tuple[tuple[str, str], ...]:
        return self._items

    def restrict(self, names: Iterable[str]) -> "Instantiation":
        wanted = set(names)
        return Instantiation({k: v for k, v in self._map.items() if k in wanted})

    def merge(self, other: "Instantiation") -> "Instantiation":
        merged = dict(self._map)
        for k, v in other._map.items():
            if k in merged and merged[k] != v:
                raise InvalidValueError(f"conflicting bindings for {k!r}: {merged[k]!r} vs {v!r}")
            merged[k] = v
        return Instantiation(merged)

    def __getitem__(self, name: str) -> str:
        try:
            return self._map[name]
        except KeyError:
            raise MissingBindingError(f"variable {name!r} is not bound") from None

    def __contains__(self, name: str) -> bool:
        return name in self._map

    def __iter__(self) -> Iterator[str]:
        return iter(self._map)

    def __len__(self) -> int:
        return len(self._map)

    def __eq__(self, other) -> bool:
        return isinstance(other, Instantiation) and self._items == other._items

    def __hash__(self) -> int:
        return hash(self._items)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in self._items)
        return f"Instantiation({inner})"


def validate_bindings(inst: Instantiation, variables: Sequence[VariableSpec]) -> None:
    """Check that ``inst`` binds every listed variable to an in-domain value."""
    for var in variables:
        value = inst[var.name]  # raises MissingBindingError
        if value not in var.domain:
            raise InvalidValueError(
                f"value {value!r} not in domain of variable {var.name!r}"
            )


def enumerate_instantiations(variables: Sequence[VariableSpec]) -> list[Instantiation]:
    """All joint assignments in mixed-radix order, last variable fastest."""
    if not variables:
        raise InvalidVariableError("cannot enumerate an empty variable list")
    for v in variables:
        if not v.domain:
            raise InvalidVariableError(f"variable {v.name!r} has an empty domain")
    out: list[Instantiation] = []
    total = 1
    for v in variables:
        total *= len(v.domain)
    for code in range(total):
        out.append(instantiation_at(variables, code))
    return out


def instantiation_at(variables: Sequence[VariableSpec], code: int) -> Instantiation:
    """Decode a mixed-radix index into an assignment (inverse of the encoder)."""
    sizes = [len(v.domain) for v in variables]
    total = math.prod(sizes)
    if not 0 <= code < total:
        raise InvalidValueError(f"index {code} out of range [0, {total})")
    digits = {}
    rem = code
    for v, size in zip(reversed(variables), reversed(sizes)):
        rem, d = divmod(rem, size)
        digits[v.name] = v.domain[d]
    return Instantiation(digits)


def mixed_radix_index(variables: Sequence[VariableSpec], inst: Instantiation) -> int:
    """Encode an assignment over ``variables`` as its mixed-radix index."""
    code = 0
    for v in variables:
        code = code * len(v.domain) + v.index_of(inst[v.name])
    return code


@dataclass(frozen=True)
class NetworkStructure:
    """Bipartite network: situation variables are parents of outcome variables."""

    variables: tuple[VariableSpec, ...]
    parents: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(
            self, "parents", {o: tuple(ps) for o, ps in dict(self.parents).items()}
        )
        by_name = {}
        for v in self.variables:
            if v.name in by_name:
                raise InvalidModelError(f"duplicate variable {v.name!r}")
            if v.role == "attribute":
                raise InvalidModelError(
                    f"attribute variable {v.name!r} cannot be a network node before promotion"
                )
            by_name[v.name] = v
        object.__setattr__(self, "_by_name", by_name)
        situation = {v.name for v in self.variables if v.role in ("context", "command")}
        outcomes = [v.name for v in self.variables if v.role == "outcome"]
        if set(self.parents) != set(outcomes):
            raise InvalidModelError("parents must be keyed exactly by the outcome variables")
        used: set[str] = set()
        for o, ps in self.parents.items():
            if len(set(ps)) != len(ps):
                raise InvalidModelError(f"parent list of {o!r} has duplicates")
            for p in ps:
                if p not in situation:
                    raise InvalidModelError(
                        f"parent {p!r} of {o!r} is not a situation variable"
                    )
            used.update(ps)
        unused = situation - used
        if unused:
            raise InvalidModelError(
                f"situation variables {sorted(unused)} are parents of no outcome variable"
            )

    def var(self, name: str) -> VariableSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise InvalidVariableError(f"unknown variable {name!r}") from None

    @property
    def situation_vars(self) -> tuple[VariableSpec, ...]:
        return tuple(v for v in self.variables if v.role in ("context", "command"))

    @property
    def context_vars(self) -> tuple[VariableSpec, ...]:
        return tuple(v for v in self.variables if v.role == "context")

    @property
    def command_vars(self) -> tuple[VariableSpec, ...]:
        return tuple(v for v in self.variables if v.role == "command")

    @property
    def outcome_vars(self) -> tuple[VariableSpec, ...]:
        return tuple(v for v in self.variables if v.role == "outcome")

    def parent_specs(self, outcome_var: str) -> tuple[VariableSpec, ...]:
        return tuple(self.var(p) for p in self.parents[outcome_var])

    def n_rows(self, outcome_var: str) -> int:
        return math.prod(len(p.domain) for p in self.parent_specs(outcome_var))


def situation_index(structure: NetworkStructure, outcome_var: str, situation: Instantiation) -> int:
    """Row index of ``situation`` in the CPT of ``outcome_var``."""
    return mixed_radix_index(structure.parent_specs(outcome_var), situation)


def situation_at(structure: NetworkStructure, outcome_var: str, index: int) -> Instantiation:
    """Inverse of :func:`situation_index` over full parent instantiations."""
    return instantiation_at(structure.parent_specs(outcome_var), index)


# ---------------------------------------------------------------------------
# information-theoretic primitives

def _check_prob_vector(p: np.ndarray, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise InvalidValueError(f"{what} must be a 1-d vector")
    if np.any(p < 0) or np.any(~np.isfinite(p)):
        raise InvalidValueError(f"{what} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise InvalidValueError(f"{what} does not sum to 1 (got {p.sum()!r})")
    return p


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats, with 0*log(0/q)=0.

    Returns ``math.inf`` (a distinguished value, not an exception) when some
    q_i is zero where p_i > 0; reference distributions legitimately contain
    exact zeros.
    """
    p = _check_prob_vector(p, "p")
    q = _check_prob_vector(q, "q")
    if p.shape != q.shape:
        raise InvalidValueError("p and q must have the same length")
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def entropy(p) -> float:
    """Shannon entropy in nats, with 0*log(0)=0."""
    p = _check_prob_vector(p, "p")
    mask = p > 0
    return float(-np.sum(p[mask] * np.log(p[mask])))


def dirichlet_expected_kl(alpha) -> float:
    """Expected KL from a Dirichlet(alpha) draw to the posterior mean alpha/alpha0.

    This is the minimum over point estimates of the expected divergence (the
    cross-entropy term is minimized at the mean), i.e. the residual risk of
    one CPT row under the current belief.
    """
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 1 or a.size < 2:
        raise InvalidValueError("alpha must be a 1-d vector of length >= 2")
    if np.any(a <= 0) or np.any(~np.isfinite(a)):
        raise InvalidValueError("alpha entries must be strictly positive and finite")
    return float(kernels.row_risks(a[None, :])[0])


# ---------------------------------------------------------------------------
# Dirichlet CPTs and model state

@dataclass(frozen=True)
class DirichletCPT:
    """One Dirichlet pseudo-count row per full parent instantiation.

    ``alpha`` has shape (n_rows, |outcome domain|); rows follow the
    mixed-radix order of the declared parents.
    """

    outcome_var: str
    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64)
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        if a.ndim != 2:
            raise InvalidModelError(f"CPT of {self.outcome_var!r} must be 2-d")
        if np.any(a <= 0) or np.any(~np.isfinite(a)):
            raise InvalidModelError(
                f"CPT of {self.outcome_var!r} has non-positive or non-finite pseudo-counts"
            )

    @property
    def n_rows(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_values(self) -> int:
        return self.alpha.shape[1]

    def _check_row(self, idx: int) -> None:
        if not 0 <= idx < self.n_rows:
            raise InvalidValueError(f"row index {idx} out of range [0, {self.n_rows})")


def posterior_update(cpt: DirichletCPT, situation_idx: int, outcome_idx: int) -> DirichletCPT:
    """Conjugate update: add one count to (situation_idx, outcome_idx)."""
    cpt._check_row(situation_idx)
    if not 0 <= outcome_idx < cpt.n_values:
        raise InvalidValueError(f"outcome index {outcome_idx} out of range [0, {cpt.n_values})")
    alpha = cpt.alpha.copy()
    alpha[situation_idx, outcome_idx] += 1.0
    return DirichletCPT(cpt.outcome_var, alpha)


def posterior_mean(cpt: DirichletCPT, situation_idx: int) -> np.ndarray:
    """Mean of the row's Dirichlet: alpha / alpha0. Strictly positive."""
    cpt._check_row(situation_idx)
    row = cpt.alpha[situation_idx]
    return row / row.sum()


@dataclass(frozen=True)
class ModelState:
    """Network structure plus one Dirichlet CPT and row-weight vector per outcome variable."""

    structure: NetworkStructure
    cpts: Mapping[str, DirichletCPT]
    situation_weights: Mapping[str, np.ndarray] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        cpts = dict(self.cpts)
        object.__setattr__(self, "cpts", cpts)
        outs = [v.name for v in self.structure.outcome_vars]
        if set(cpts) != set(outs):
            raise InvalidModelError("cpts must be keyed exactly by the outcome variables")
        for o in outs:
            spec = self.structure.var(o)
            cpt = cpts[o]
            if cpt.outcome_var != o:
                raise InvalidModelError(f"CPT for {o!r} is labeled {cpt.outcome_var!r}")
            expect = (self.structure.n_rows(o), len(spec.domain))
            if cpt.alpha.shape != expect:
                raise InvalidModelError(
                    f"CPT of {o!r} has shape {cpt.alpha.shape}, expected {expect}"
                )
        if self.situation_weights is None:
            weights = {o: _uniform_weights(self.structure.n_rows(o)) for o in outs}
        else:
            weights = {}
            for o in outs:
                w = np.array(self.situation_weights[o], dtype=np.float64)
                w.setflags(write=False)
                if w.shape != (self.structure.n_rows(o),):
                    raise InvalidModelError(f"situation weights of {o!r} have wrong length")
                if np.any(w < 0) or abs(w.sum() - 1.0) > PROB_TOL:
                    raise InvalidModelError(
                        f"situation weights of {o!r} must be nonnegative and sum to 1"
                    )
                weights[o] = w
        object.__setattr__(self, "situation_weights", weights)

    def with_cpt(self, cpt: DirichletCPT) -> "ModelState":
        cpts = dict(self.cpts)
        cpts[cpt.outcome_var] = cpt
        return ModelState(self.structure, cpts, self.situation_weights)

    # -- persistence ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "variables": [
                {
                    "name": v.name,
                    "domain": list(v.domain),
                    "role": v.role,
                    "controllable": v.controllable,
                }
                for v in self.structure.variables
            ],
            "parents": {o: list(ps) for o, ps in self.structure.parents.items()},
            "cpt_rows": {o: self.cpts[o].alpha.tolist() for o in self.cpts},
            "situation_weights": {o: w.tolist() for o, w in self.situation_weights.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelState":
        variables = tuple(
            VariableSpec(
                name=v["name"],
                domain=tuple(v["domain"]),
                role=v["role"],
                controllable=bool(v.get("controllable", v["role"] == "command")),
            )
            for v in data["variables"]
        )
        structure = NetworkStructure(variables, {o: tuple(ps) for o, ps in data["parents"].items()})
        cpts = {
            o: DirichletCPT(o, np.array(rows, dtype=np.float64))
            for o, rows in data["cpt_rows"].items()
        }
        weights = data.get("situation_weights")
        if weights is not None:
            weights = {o: np.array(w, dtype=np.float64) for o, w in weights.items()}
        return cls(structure, cpts, weights)


def _uniform_weights(n: int) -> np.ndarray:
    w = np.full(n, 1.0 / n)
    w.setflags(write=False)
    return w


def uniform_model(structure: NetworkStructure, prior: float = 1.0) -> ModelState:
    """Fresh model: every CPT row gets a symmetric Dirichlet(prior) and uniform weights."""
    if prior <= 0:
        raise InvalidModelError("prior pseudo-count must be positive")
    cpts = {}
    for v in structure.outcome_vars:
        n = structure.n_rows(v.name)
        cpts[v.name] = DirichletCPT(v.name, np.full((n, len(v.domain)), float(prior)))
    return ModelState(structure, cpts)
