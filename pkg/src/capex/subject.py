"""Simulated subjects with predefined ground truth.

A subject's programmed behavior is a set of truth CPT rows plus hidden rules
(guards over variables the learner may not know about) and a noise rate.
Rules take precedence: a gated experiment samples the rule's override
directly, so e.g. an undetected ball cannot be kicked by noise. Otherwise the
outcome is uniform with probability ``noise_rate`` and a truth-row draw
otherwise.

``eval_kl`` measures how close a learned model is to the programmed behavior:
rules applied, noise excluded, averaged uniformly over the true situations.
When the learner lacks a true variable, its row is compared against every
true row it aggregates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import xlogy

from .errors import InvalidModelError, InvalidValueError, MissingBindingError, ScenarioError
from .learner import LearnerState
from .model import (
    Instantiation,
    ModelState,
    VariableSpec,
    enumerate_instantiations,
    mixed_radix_index,
)
from .refine import LearnConfig, TraceRow, learn_model

PROB_TOL = 1e-9


@dataclass(frozen=True)
class HiddenRule:
    """When the guard matches the full true binding, sample the override."""

    guard: Instantiation
    override: Mapping[str, np.ndarray]

    def matches(self, full: Instantiation) -> bool:
        return all(name in full and full[name] == value
                   for name, value in self.guard.bindings.items())


@dataclass(frozen=True)
class SubjectSpec:
    """Ground truth of a simulated subject over the true variable set."""

    situation_vars: tuple[VariableSpec, ...]
    outcome_vars: tuple[VariableSpec, ...]
    parents: Mapping[str, tuple[str, ...]]
    truth: Mapping[str, np.ndarray]
    noise_rate: float = 0.0
    hidden_rules: tuple[HiddenRule, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "situation_vars", tuple(self.situation_vars))
        object.__setattr__(self, "outcome_vars", tuple(self.outcome_vars))
        object.__setattr__(self, "parents", {o: tuple(p) for o, p in dict(self.parents).items()})
        object.__setattr__(self, "hidden_rules", tuple(self.hidden_rules))
        truth = {o: np.asarray(rows, dtype=np.float64) for o, rows in dict(self.truth).items()}
        object.__setattr__(self, "truth", truth)
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ScenarioError("noise_rate must lie in [0, 1]")
        sit_names = {v.name for v in self.situation_vars}
        out_by_name = {v.name: v for v in self.outcome_vars}
        if set(self.parents) != set(out_by_name):
            raise ScenarioError("truth parents must be keyed by the outcome variables")
        for o, ps in self.parents.items():
            if not set(ps) <= sit_names:
                raise ScenarioError(f"truth parents of {o!r} must be true situation variables")
            n_rows = int(np.prod([len(self._sit(p).domain) for p in ps])) if ps else 1
            rows = truth[o]
            if rows.shape != (n_rows, len(out_by_name[o].domain)):
                raise ScenarioError(
                    f"truth rows of {o!r} have shape {rows.shape}, expected "
                    f"({n_rows}, {len(out_by_name[o].domain)})"
                )
            if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > PROB_TOL):
                raise ScenarioError(f"truth rows of {o!r} are not probability vectors")
        for rule in self.hidden_rules:
            for name in rule.guard:
                if name not in sit_names:
                    raise ScenarioError(f"hidden rule guards unknown variable {name!r}")
            for o, vec in rule.override.items():
                v = np.asarray(vec, dtype=np.float64)
                if o not in out_by_name or v.shape != (len(out_by_name[o].domain),):
                    raise ScenarioError(f"hidden rule override for {o!r} has wrong shape")
                if np.any(v < 0) or abs(v.sum() - 1.0) > PROB_TOL:
                    raise ScenarioError(f"hidden rule override for {o!r} is not a pmf")
        for i, a in enumerate(self.hidden_rules):
            for b in self.hidden_rules[i + 1:]:
                shared = set(a.guard) & set(b.guard)
                if not any(a.guard[n] != b.guard[n] for n in shared):
                    raise ScenarioError("hidden rule guards are not mutually exclusive")

    def _sit(self, name: str) -> VariableSpec:
        for v in self.situation_vars:
            if v.name == name:
                return v
        raise InvalidValueError(f"unknown situation variable {name!r}")

    def parent_specs(self, outcome_var: str) -> tuple[VariableSpec, ...]:
        return tuple(self._sit(p) for p in self.parents[outcome_var])

    def effective_truth(self, full: Instantiation, outcome_var: str) -> np.ndarray:
        """The programmed outcome distribution: rule override or truth row, no noise."""
        for rule in self.hidden_rules:
            if rule.matches(full) and outcome_var in rule.override:
                return np.asarray(rule.override[outcome_var], dtype=np.float64)
        idx = mixed_radix_index(self.parent_specs(outcome_var), full)
        return self.truth[outcome_var][idx]


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    return int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))


def sample_outcome(
    spec: SubjectSpec,
    situation: Instantiation,
    attributes: Instantiation,
    rng: np.random.Generator,
) -> Instantiation:
    """Sample one experiment outcome; gating beats noise beats truth."""
    full = situation.merge(attributes)
    for v in spec.situation_vars:
        if v.name not in full:
            raise MissingBindingError(f"true variable {v.name!r} is unbound")
        if full[v.name] not in v.domain:
            raise InvalidValueError(f"value {full[v.name]!r} not in domain of {v.name!r}")
    out = {}
    for o in spec.outcome_vars:
        dist = None
        for rule in spec.hidden_rules:
            if rule.matches(full) and o.name in rule.override:
                dist = np.asarray(rule.override[o.name], dtype=np.float64)
                break
        if dist is None:
            if rng.random() < spec.noise_rate:
                dist = np.full(len(o.domain), 1.0 / len(o.domain))
            else:
                idx = mixed_radix_index(spec.parent_specs(o.name), full)
                dist = spec.truth[o.name][idx]
        out[o.name] = o.domain[_draw(dist, rng)]
    return Instantiation(out)


def eval_kl(learned: ModelState, spec: SubjectSpec) -> float:
    """Situation-averaged divergence from the programmed behavior to the learned model."""
    true_names = {v.name for v in spec.situation_vars}
    for v in learned.structure.situation_vars:
        if v.name not in true_names:
            raise InvalidModelError(f"learned variable {v.name!r} is absent from the truth")
    for o in spec.outcome_vars:
        learned_spec = learned.structure.var(o.name)
        if learned_spec.domain != o.domain:
            raise InvalidModelError(f"outcome domains of {o.name!r} disagree")
    sits = enumerate_instantiations(spec.situation_vars)
    total = 0.0
    for o in spec.outcome_vars:
        cpt = learned.cpts[o.name]
        means = cpt.alpha / cpt.alpha.sum(axis=1, keepdims=True)
        learned_parents = learned.structure.parent_specs(o.name)
        acc = 0.0
        for s in sits:
            t = spec.effective_truth(s, o.name)
            q = means[mixed_radix_index(learned_parents, s)]
            acc += float(np.sum(xlogy(t, t) - xlogy(t, q)))
        total += acc / len(sits)
    return total


class SimulatedSubject:
    """Adapter exposing a scenario's ground truth through the experiment interface."""

    def __init__(self, scenario):
        self.scenario = scenario
        self.spec = scenario.subject_spec()
        self._env_dists = scenario.env_dists()
        self._eval_cache: dict = {}

    def initial_state(self) -> LearnerState:
        return self.scenario.initial_learner_state()

    def attribute_specs(self) -> tuple[VariableSpec, ...]:
        return self.scenario.attribute_specs()

    def experiment(self, query, attributes, rng):
        known = query.merge(attributes)
        env = {}
        for v in self.spec.situation_vars:
            if v.name not in known:
                d = self._env_dists.get(v.name, np.full(len(v.domain), 1.0 / len(v.domain)))
                env[v.name] = v.domain[_draw(d, rng)]
        env_inst = Instantiation(env)
        outcome = sample_outcome(self.spec, known.merge(env_inst), Instantiation(), rng)
        return env_inst, outcome

    def kl_to_truth(self, learned: ModelState) -> float | None:
        true_names = {v.name for v in self.spec.situation_vars}
        if any(v.name not in true_names for v in learned.structure.situation_vars):
            return None   # a spuriously promoted variable has no ground truth to compare
        key = tuple(sorted((o, ps) for o, ps in learned.structure.parents.items()))
        cached = self._eval_cache.get(key)
        if cached is None:
            cached = _EvalPlan(learned, self.spec)
            self._eval_cache[key] = cached
        return cached.evaluate(learned)


class _EvalPlan:
    """Precomputed index maps so per-iteration truth divergence stays cheap."""

    def __init__(self, learned: ModelState, spec: SubjectSpec):
        self.spec = spec
        sits = enumerate_instantiations(spec.situation_vars)
        self.truth = {}
        self.idx = {}
        for o in spec.outcome_vars:
            t = np.stack([spec.effective_truth(s, o.name) for s in sits])
            self.truth[o.name] = t
            parents = learned.structure.parent_specs(o.name)
            self.idx[o.name] = np.array([mixed_radix_index(parents, s) for s in sits])
        self.n_sits = len(sits)

    def evaluate(self, learned: ModelState) -> float:
        total = 0.0
        for o in self.spec.outcome_vars:
            cpt = learned.cpts[o.name]
            means = cpt.alpha / cpt.alpha.sum(axis=1, keepdims=True)
            q = means[self.idx[o.name]]
            t = self.truth[o.name]
            total += float(np.sum(xlogy(t, t) - xlogy(t, q))) / self.n_sits
        return total


@dataclass
class TrialResult:
    state: LearnerState
    trace: list[TraceRow]

    @property
    def final_kl(self) -> float | None:
        return self.trace[-1].kl_to_truth if self.trace else None

    @property
    def promotions(self) -> list[tuple[int, str]]:
        out = []
        for row in self.trace:
            for name in row.promoted:
                out.append((row.iteration, name))
        return out


def run_trial(scenario, mode: str, iters: int, seed: int,
              overrides: Mapping | None = None) -> TrialResult:
    """Learn against a scenario's simulated subject; trace carries kl_to_truth."""
    subject = SimulatedSubject(scenario)
    config = scenario.learn_config(mode=mode, max_iter=iters, seed=seed,
                                   overrides=overrides or {})
    state, trace = learn_model(subject, config)
    return TrialResult(state, trace)
