"""Active selection of experiments by minimizing expected posterior error.

The learner's uncertainty is the weighted sum of per-row Dirichlet risks
(``model_error``). For a candidate query it computes the expected model error
after one experiment (``expected_posterior_error``): the inner expectation
over parameters and outcomes collapses to the Dirichlet predictive, so the
whole quantity is closed-form. ``best_query`` greedily picks the argmin with
ties broken by enumeration order, which keeps runs reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import InvalidModelError, InvalidValueError, MissingBindingError
from .model import (
    Instantiation,
    ModelState,
    VariableSpec,
    enumerate_instantiations,
    mixed_radix_index,
    posterior_update,
    validate_bindings,
)


@dataclass(frozen=True)
class Observation:
    """One experiment record: full situation, full outcome, sampled attributes."""

    situation: Instantiation
    outcome: Instantiation
    attributes: Instantiation

    def to_dict(self) -> dict:
        return {
            "situation": self.situation.bindings,
            "outcome": self.outcome.bindings,
            "attributes": self.attributes.bindings,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Observation":
        return cls(
            Instantiation(d["situation"]),
            Instantiation(d["outcome"]),
            Instantiation(d.get("attributes", {})),
        )


@dataclass(frozen=True)
class LearnerState:
    """Model belief plus the learner's control surface and experiment log."""

    model: ModelState
    query_vars: tuple[str, ...]
    uncontrolled_dist: Mapping[str, np.ndarray]
    history: tuple[Observation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "query_vars", tuple(self.query_vars))
        object.__setattr__(self, "history", tuple(self.history))
        sit = {v.name for v in self.model.structure.situation_vars}
        qset = set(self.query_vars)
        if len(qset) != len(self.query_vars):
            raise InvalidModelError("query_vars has duplicates")
        if not qset <= sit:
            raise InvalidModelError("query_vars must be situation variables")
        for v in self.model.structure.command_vars:
            if v.name not in qset:
                raise InvalidModelError(f"command variable {v.name!r} must be controllable (in Q)")
        for q in self.query_vars:
            if not self.model.structure.var(q).controllable:
                raise InvalidModelError(f"query variable {q!r} is not controllable")
        dist = {}
        for name in sorted(sit - qset):
            spec = self.model.structure.var(name)
            d = np.array(self.uncontrolled_dist[name], dtype=np.float64)
            d.setflags(write=False)
            if d.shape != (len(spec.domain),) or np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
                raise InvalidModelError(f"uncontrolled distribution for {name!r} is not a valid pmf")
            dist[name] = d
        extra = set(self.uncontrolled_dist) - (sit - qset)
        if extra:
            raise InvalidModelError(f"uncontrolled_dist covers non-uncontrolled variables {sorted(extra)}")
        object.__setattr__(self, "uncontrolled_dist", dist)

    @property
    def query_specs(self) -> tuple[VariableSpec, ...]:
        return tuple(self.model.structure.var(q) for q in self.query_vars)


@dataclass(frozen=True)
class QueryEvaluation:
    """EPE of one query plus the model error expected after each outcome value."""

    query: Instantiation
    epe: float
    posterior_risk_by_outcome: Mapping[str, float]


def initial_learner_state(model: ModelState, query_vars: Sequence[str] | None = None) -> LearnerState:
    """Wrap a model for learning; uncontrolled variables start with uniform estimates."""
    structure = model.structure
    if query_vars is None:
        query_vars = tuple(v.name for v in structure.situation_vars if v.controllable)
    dist = {}
    for v in structure.situation_vars:
        if v.name not in query_vars:
            dist[v.name] = np.full(len(v.domain), 1.0 / len(v.domain))
    return LearnerState(model, tuple(query_vars), dist)


def model_error(state: LearnerState) -> float:
    """Situation-weighted sum of per-row Dirichlet risks over all outcome variables."""
    total = 0.0
    for o, cpt in state.model.cpts.items():
        w = state.model.situation_weights[o]
        total += float(w @ kernels.row_risks(cpt.alpha))
    return total


def _validate_query(state: LearnerState, query: Instantiation) -> None:
    if set(query) != set(state.query_vars):
        raise InvalidValueError(
            f"query must bind exactly {list(state.query_vars)}, got {sorted(query)}"
        )
    validate_bindings(query, state.query_specs)


def _reachable_rows(state: LearnerState, query: Instantiation, outcome_var: str):
    """(row index, probability) pairs for the rows a query can touch.

    Parents not bound by the query are marginalized with the learner's
    current estimate of how the environment assigns them.
    """
    parents = state.model.structure.parent_specs(outcome_var)
    free = [p for p in parents if p.name not in query]
    if not free:
        return [(mixed_radix_index(parents, query), 1.0)]
    out = []
    strides = {}
    stride = 1
    for p in reversed(parents):
        strides[p.name] = stride
        stride *= len(p.domain)
    base = sum(strides[p.name] * p.index_of(query[p.name]) for p in parents if p.name in query)
    combos = [(0, 1.0)]
    for p in free:
        d = state.uncontrolled_dist[p.name]
        combos = [
            (off + strides[p.name] * i, pr * float(d[i]))
            for off, pr in combos
            for i in range(len(p.domain))
        ]
    for off, pr in combos:
        if pr > 0.0:
            out.append((base + off, pr))
    return out


def expected_posterior_error(state: LearnerState, query: Instantiation) -> QueryEvaluation:
    """Closed-form EPE of one query; never exceeds the current model error."""
    _validate_query(state, query)
    me = model_error(state)
    outs = state.model.structure.outcome_vars
    single = len(outs) == 1

    reductions: dict[str, float] = {}
    risk_by_value: dict[str, float] = {}
    per_var_terms = {}
    for spec in outs:
        o = spec.name
        cpt = state.model.cpts[o]
        w = state.model.situation_weights[o]
        reach = _reachable_rows(state, query, o)
        rows = np.array([r for r, _ in reach], dtype=np.intp)
        probs = np.array([p for _, p in reach])      # P(row | query), sums to 1
        alpha = cpt.alpha[rows]
        pred = alpha / alpha.sum(axis=1, keepdims=True)
        base = kernels.row_risks(alpha)
        k = alpha.shape[1]
        bumped = (alpha[:, None, :] + np.eye(k)[None, :, :]).reshape(-1, k)
        drop = base[:, None] - kernels.row_risks(bumped).reshape(-1, k)   # (rows, j)
        wp = w[rows] * probs
        reductions[o] = float(np.sum(wp[:, None] * pred * drop))
        per_var_terms[o] = (spec, probs, wp, pred, drop)

    total_reduction = sum(reductions.values())
    epe = me - total_reduction

    for spec, probs, wp, pred, drop in per_var_terms.values():
        o = spec.name
        p_out = probs @ pred                         # P(outcome value | query)
        others = total_reduction - reductions[o]
        for j, value in enumerate(spec.domain):
            # expected model error given this variable lands on value j
            red_j = float(np.sum(wp * pred[:, j] * drop[:, j])) / float(p_out[j])
            key = value if single else f"{o}={value}"
            risk_by_value[key] = me - red_j - others
    return QueryEvaluation(query, float(epe), risk_by_value)


def _all_gains(state: LearnerState):
    """Per outcome variable: weights * expected one-step risk drop, for every row."""
    out = {}
    for o, cpt in state.model.cpts.items():
        w = state.model.situation_weights[o]
        out[o] = w * kernels.row_gains(cpt.alpha)
    return out


def evaluate_all_queries(state: LearnerState) -> list[tuple[Instantiation, float]]:
    """(query, EPE) for every instantiation of Q, in enumeration order."""
    queries = enumerate_instantiations(state.query_specs)
    me = model_error(state)
    gains = _all_gains(state)
    results = []
    for q in queries:
        reduction = 0.0
        for o in state.model.cpts:
            for row, prob in _reachable_rows(state, q, o):
                reduction += prob * float(gains[o][row])
        results.append((q, me - reduction))
    return results


def best_query(state: LearnerState) -> Instantiation:
    """Argmin-EPE query; ties go to the first query in enumeration order."""
    if not state.query_vars:
        raise InvalidModelError("query variable set is empty")
    best = None
    best_epe = np.inf
    for q, epe in evaluate_all_queries(state):
        if epe < best_epe:
            best, best_epe = q, epe
    return best


def passive_query(state: LearnerState, rng: np.random.Generator) -> Instantiation:
    """Uniform draw over the query space (the passive baseline)."""
    if not state.query_vars:
        raise InvalidModelError("query variable set is empty")
    queries = enumerate_instantiations(state.query_specs)
    return queries[int(rng.integers(len(queries)))]


def record_observation(
    state: LearnerState,
    situation: Instantiation,
    outcome: Instantiation,
    attributes: Instantiation = Instantiation(),
) -> LearnerState:
    """Fold one experiment into the belief; returns a new state."""
    structure = state.model.structure
    validate_bindings(situation, structure.situation_vars)
    validate_bindings(outcome, structure.outcome_vars)
    model = state.model
    for spec in structure.outcome_vars:
        o = spec.name
        idx = mixed_radix_index(structure.parent_specs(o), situation)
        j = spec.index_of(outcome[o])
        model = model.with_cpt(posterior_update(model.cpts[o], idx, j))
    record = Observation(
        situation.restrict([v.name for v in structure.situation_vars]),
        outcome.restrict([v.name for v in structure.outcome_vars]),
        attributes,
    )
    history = state.history + (record,)
    dist = _empirical_uncontrolled(structure, state.query_vars, history, state.uncontrolled_dist)
    return LearnerState(model, state.query_vars, dist, history)


def learner_to_dict(state: LearnerState, rng_seed: int | None = None) -> dict:
    """Single flat JSON document: model fields plus the learner's surface and log."""
    doc = state.model.to_dict()
    doc["rng_seed"] = rng_seed
    doc["query_vars"] = list(state.query_vars)
    doc["uncontrolled_dist"] = {k: v.tolist() for k, v in state.uncontrolled_dist.items()}
    doc["history"] = [rec.to_dict() for rec in state.history]
    return doc


def learner_from_dict(doc: Mapping) -> LearnerState:
    model = ModelState.from_dict(doc)
    history = tuple(Observation.from_dict(d) for d in doc.get("history", []))
    dist = {k: np.array(v, dtype=np.float64) for k, v in doc.get("uncontrolled_dist", {}).items()}
    query_vars = tuple(doc.get("query_vars") or
                       (v.name for v in model.structure.situation_vars if v.controllable))
    return LearnerState(model, query_vars, dist, history)


def _empirical_uncontrolled(structure, query_vars, history, fallback):
    """Frequency estimates for environment-assigned variables, from the log."""
    dist = {}
    qset = set(query_vars)
    for v in structure.situation_vars:
        if v.name in qset:
            continue
        counts = np.zeros(len(v.domain))
        for rec in history:
            if v.name in rec.situation:
                counts[v.index_of(rec.situation[v.name])] += 1
        if counts.sum() > 0:
            dist[v.name] = counts / counts.sum()
        elif v.name in fallback:
            dist[v.name] = fallback[v.name]
        else:
            dist[v.name] = np.full(len(v.domain), 1.0 / len(v.domain))
    return dist
