"""Online model refinement: detect outcome-attribute dependence and promote.

Attributes are candidate factors tracked outside the network. Each experiment
samples them uniformly, so their empirical co-occurrence with outcomes inside
a situation estimates a conditional dependence. The detector is the
coefficient of mutual information

    R(o, A | S) = I_hat(o, A | S) / min(H(o | S), H(A))

with the plug-in estimate

    I_hat(o, A | S) = H(P(o|S)) - sum_{a in valid} H(P(o | A=a, S)) * P(A=a)

where P(A=a) comes from the global attribute marginals (attributes are drawn
independently of the situation) and ``valid`` keeps only values seen at least
``n_min`` times in S. When R exceeds the threshold in at least one
sufficiently observed situation, the attribute is promoted into the network
and the affected tables are reset to the prior.

Plug-in estimates at the bare n_min coverage are noisy at the scale of the
threshold, so a situation only enters the R evaluation once every attribute
value reached ``eval_min`` observations there (default ``2 * n_min``; see the
sufficiency discussion in the README).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import (
    InvalidModelError,
    InvalidValueError,
    InvalidVariableError,
    UndefinedEstimateError,
)
from .learner import (
    LearnerState,
    Observation,
    best_query,
    model_error,
    passive_query,
    record_observation,
)
from .model import (
    DirichletCPT,
    Instantiation,
    ModelState,
    NetworkStructure,
    VariableSpec,
    validate_bindings,
)

SitKey = tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class RefinementConfig:
    """Knobs of the dependence detector."""

    r_threshold: float = 0.3
    n_min: int = 5
    promoted_controllable: bool = True
    enabled: bool = True
    eval_min: int | None = None   # per-value count before a situation is judged; None = 2*n_min

    def __post_init__(self):
        if not 0.0 < self.r_threshold <= 1.0:
            raise InvalidValueError("r_threshold must lie in (0, 1]")
        if self.n_min < 1:
            raise InvalidValueError("n_min must be >= 1")
        if self.eval_min is not None and self.eval_min < self.n_min:
            raise InvalidValueError("eval_min cannot be below n_min")

    @property
    def effective_eval_min(self) -> int:
        return self.eval_min if self.eval_min is not None else 2 * self.n_min


@dataclass(frozen=True)
class AttributeStats:
    """Co-occurrence counts of (situation, attribute value, outcome value).

    ``counts[sit][attr][a][o][v]`` is the number of experiments in situation
    ``sit`` where attribute ``attr`` had value ``a`` and outcome variable
    ``o`` landed on ``v``. ``sa_counts`` and ``attr_marginals`` are the
    matching per-situation and global attribute-value totals.
    """

    attr_specs: Mapping[str, VariableSpec]
    n_min: int
    counts: Mapping[SitKey, Mapping] = field(default_factory=dict)
    sa_counts: Mapping[SitKey, Mapping] = field(default_factory=dict)
    attr_marginals: Mapping[str, Mapping[str, int]] = field(default_factory=dict)

    def situations(self) -> tuple[SitKey, ...]:
        return tuple(self.counts.keys())

    def attribute_names(self) -> tuple[str, ...]:
        return tuple(self.attr_specs.keys())

    def marginal_total(self, attr: str) -> int:
        return sum(self.attr_marginals.get(attr, {}).values())

    def retire(self, names: Iterable[str]) -> "AttributeStats":
        """Drop promoted attributes; everything else persists."""
        gone = set(names)
        specs = {n: s for n, s in self.attr_specs.items() if n not in gone}
        counts = {
            sit: {a: blk for a, blk in sit_blk.items() if a not in gone}
            for sit, sit_blk in self.counts.items()
        }
        sa = {
            sit: {a: blk for a, blk in sit_blk.items() if a not in gone}
            for sit, sit_blk in self.sa_counts.items()
        }
        marg = {a: m for a, m in self.attr_marginals.items() if a not in gone}
        return AttributeStats(specs, self.n_min, counts, sa, marg)

    # -- persistence ----------------------------------------------------

    def to_dict(self) -> dict:
        def sit_str(key: SitKey) -> str:
            return "|".join(f"{k}={v}" for k, v in key)

        return {
            "attr_specs": [
                {
                    "name": s.name,
                    "domain": list(s.domain),
                    "role": s.role,
                    "controllable": s.controllable,
                }
                for s in self.attr_specs.values()
            ],
            "n_min": self.n_min,
            "counts": {sit_str(k): v for k, v in self.counts.items()},
            "sa_counts": {sit_str(k): v for k, v in self.sa_counts.items()},
            "attr_marginals": self.attr_marginals,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AttributeStats":
        def sit_key(s: str) -> SitKey:
            if not s:
                return ()
            return tuple(tuple(kv.split("=", 1)) for kv in s.split("|"))  # type: ignore[return-value]

        specs = {
            s["name"]: VariableSpec(s["name"], tuple(s["domain"]), s["role"], s["controllable"])
            for s in data["attr_specs"]
        }
        return cls(
            specs,
            int(data["n_min"]),
            {sit_key(k): v for k, v in data["counts"].items()},
            {sit_key(k): v for k, v in data["sa_counts"].items()},
            data["attr_marginals"],
        )


def empty_stats(attr_specs: Sequence[VariableSpec], n_min: int) -> AttributeStats:
    return AttributeStats({s.name: s for s in attr_specs}, n_min)


def update_attribute_stats(
    stats: AttributeStats,
    situation: Instantiation,
    attributes: Instantiation,
    outcome: Instantiation,
) -> AttributeStats:
    """Fold one experiment into the co-occurrence counts (pure update)."""
    validate_bindings(attributes, tuple(stats.attr_specs.values()))
    key = situation.key()

    counts = dict(stats.counts)
    sit_blk = {a: dict(b) for a, b in counts.get(key, {}).items()}
    sa = dict(stats.sa_counts)
    sa_blk = dict(sa.get(key, {}))
    marg = {a: dict(m) for a, m in stats.attr_marginals.items()}

    for attr, spec in stats.attr_specs.items():
        a_val = attributes[attr]
        blk = dict(sit_blk.get(attr, {}))
        cell = {o: dict(vv) for o, vv in blk.get(a_val, {}).items()}
        for o_name, o_val in outcome.bindings.items():
            per_o = cell.setdefault(o_name, {})
            per_o[o_val] = per_o.get(o_val, 0) + 1
        blk[a_val] = cell
        sit_blk[attr] = blk

        slot = dict(sa_blk.get(attr, {}))
        slot[a_val] = slot.get(a_val, 0) + 1
        sa_blk[attr] = slot

        m = marg.setdefault(attr, {})
        m[a_val] = m.get(a_val, 0) + 1

    counts[key] = sit_blk
    sa[key] = sa_blk
    return AttributeStats(stats.attr_specs, stats.n_min, counts, sa, marg)


def _count_entropy(count_map: Mapping[str, int]) -> float:
    total = sum(count_map.values())
    if total == 0:
        return 0.0
    acc = 0.0
    for c in count_map.values():
        if c > 0:
            p = c / total
            acc -= p * math.log(p)
    return acc


def domain_valid(stats: AttributeStats, attr: str, situation: Instantiation) -> list[str]:
    """Attribute values seen at least n_min times in this situation, in domain order."""
    if attr not in stats.attr_specs:
        raise InvalidVariableError(f"unknown attribute {attr!r}")
    slot = stats.sa_counts.get(situation.key(), {}).get(attr, {})
    return [v for v in stats.attr_specs[attr].domain if slot.get(v, 0) >= stats.n_min]


def _outcome_counts(stats: AttributeStats, outcome_var: str, attr: str, key: SitKey):
    """Per-attribute-value and situation-total outcome counts for one situation."""
    blk = stats.counts.get(key, {}).get(attr, {})
    per_value = {a: dict(cell.get(outcome_var, {})) for a, cell in blk.items()}
    total: dict[str, int] = {}
    for cell in per_value.values():
        for v, c in cell.items():
            total[v] = total.get(v, 0) + c
    return per_value, total


def mutual_information_estimate(
    stats: AttributeStats, outcome_var: str, attr: str, situation: Instantiation
) -> float:
    """Plug-in estimate of I(o, A | Situation), clamped at zero."""
    key = situation.key()
    if key not in stats.counts:
        raise UndefinedEstimateError(f"situation {situation!r} was never observed")
    per_value, total = _outcome_counts(stats, outcome_var, attr, key)
    h_sit = _count_entropy(total)
    marg = stats.attr_marginals.get(attr, {})
    marg_total = sum(marg.values())
    acc = 0.0
    for a in domain_valid(stats, attr, situation):
        p_a = marg.get(a, 0) / marg_total if marg_total else 0.0
        acc += p_a * _count_entropy(per_value.get(a, {}))
    return max(0.0, h_sit - acc)


def coefficient_of_mi(
    stats: AttributeStats, outcome_var: str, attr: str, situation: Instantiation
) -> float:
    """Normalized dependence score in [0, 1]; 0 when either entropy is degenerate."""
    key = situation.key()
    if key not in stats.counts:
        raise UndefinedEstimateError(f"situation {situation!r} was never observed")
    _, total = _outcome_counts(stats, outcome_var, attr, key)
    h_out = _count_entropy(total)
    h_attr = _count_entropy(stats.attr_marginals.get(attr, {}))
    denom = min(h_out, h_attr)
    if denom <= 0.0:
        return 0.0
    r = mutual_information_estimate(stats, outcome_var, attr, situation) / denom
    return min(1.0, max(0.0, r))


def _sufficiently_observed(stats: AttributeStats, attr: str, key: SitKey, eval_min: int) -> bool:
    slot = stats.sa_counts.get(key, {}).get(attr, {})
    return all(slot.get(v, 0) >= eval_min for v in stats.attr_specs[attr].domain)


def identify_dependence(
    stats: AttributeStats,
    outcome_var: str,
    situations_observed: Iterable[SitKey],
    config: RefinementConfig,
) -> set[str]:
    """Attributes whose R clears the threshold in at least one judged situation."""
    if not config.enabled:
        return set()
    hits: set[str] = set()
    for attr in stats.attribute_names():
        for key in situations_observed:
            if key not in stats.counts:
                continue
            if not _sufficiently_observed(stats, attr, key, config.effective_eval_min):
                continue
            if coefficient_of_mi(stats, outcome_var, attr, Instantiation(key)) > config.r_threshold:
                hits.add(attr)
                break
    return hits


def modify_model(
    state: LearnerState,
    stats: AttributeStats,
    promoted: set[str],
    config: RefinementConfig | None = None,
    dependents: Mapping[str, Iterable[str]] | None = None,
    prior: float = 1.0,
) -> LearnerState:
    """Promote attributes into the network as context variables.

    Affected outcome variables get the promoted attributes appended to their
    parent lists and their tables recreated at the prior (the learning curve
    visibly jumps). History is kept but not replayed.
    """
    if not promoted:
        return state
    config = config or RefinementConfig()
    structure = state.model.structure
    outcome_names = [v.name for v in structure.outcome_vars]
    existing = {v.name for v in structure.variables}
    for name in promoted:
        if name not in stats.attr_specs:
            raise InvalidVariableError(f"cannot promote unknown attribute {name!r}")
        if name in existing:
            raise InvalidModelError(f"attribute {name!r} is already a network node")

    deps = {
        name: tuple(dependents[name]) if dependents and name in dependents else tuple(outcome_names)
        for name in promoted
    }
    order = [n for n in stats.attribute_names() if n in promoted]

    new_vars = list(structure.variables)
    for name in order:
        old = stats.attr_specs[name]
        new_vars.append(
            VariableSpec(name, old.domain, "context", controllable=config.promoted_controllable)
        )
    new_parents = {}
    affected = set()
    for o in outcome_names:
        ps = list(structure.parents[o])
        for name in order:
            if o in deps[name]:
                ps.append(name)
                affected.add(o)
        new_parents[o] = tuple(ps)
    new_structure = NetworkStructure(tuple(new_vars), new_parents)

    cpts = {}
    for o in outcome_names:
        spec = new_structure.var(o)
        if o in affected:
            n = new_structure.n_rows(o)
            cpts[o] = DirichletCPT(o, np.full((n, len(spec.domain)), float(prior)))
        else:
            cpts[o] = state.model.cpts[o]
    new_model = ModelState(new_structure, cpts)   # weights recreated uniform

    query_vars = list(state.query_vars)
    uncontrolled = dict(state.uncontrolled_dist)
    for name in order:
        if config.promoted_controllable:
            query_vars.append(name)
        else:
            uncontrolled[name] = _attribute_frequencies(stats.attr_specs[name], state.history)
    return LearnerState(new_model, tuple(query_vars), uncontrolled, state.history)


def _attribute_frequencies(spec: VariableSpec, history: Sequence[Observation]) -> np.ndarray:
    counts = np.zeros(len(spec.domain))
    for rec in history:
        if spec.name in rec.attributes:
            counts[spec.index_of(rec.attributes[spec.name])] += 1
    if counts.sum() == 0:
        return np.full(len(spec.domain), 1.0 / len(spec.domain))
    return counts / counts.sum()


# ---------------------------------------------------------------------------
# the learn loop

class ExperimentSubject(Protocol):
    """What the learn loop needs from a subject (simulator or operator bridge)."""

    def initial_state(self) -> LearnerState: ...

    def attribute_specs(self) -> tuple[VariableSpec, ...]: ...

    def experiment(
        self, query: Instantiation, attributes: Instantiation, rng: np.random.Generator
    ) -> tuple[Instantiation, Instantiation]:
        """Run one experiment; returns (environment-assigned bindings, outcome)."""
        ...


@dataclass(frozen=True)
class LearnConfig:
    max_iter: int
    r_threshold: float = 0.3
    n_min: int = 5
    mode: str = "active"
    seed: int = 0
    promoted_controllable: bool = True
    refine_enabled: bool = True
    eval_min: int | None = None
    prior: float = 1.0

    def __post_init__(self):
        if self.mode not in ("active", "passive"):
            raise InvalidValueError("mode must be 'active' or 'passive'")
        if self.max_iter < 0:
            raise InvalidValueError("max_iter must be >= 0")

    def refinement(self) -> RefinementConfig:
        return RefinementConfig(
            r_threshold=self.r_threshold,
            n_min=self.n_min,
            promoted_controllable=self.promoted_controllable,
            enabled=self.refine_enabled,
            eval_min=self.eval_min,
        )


@dataclass
class TraceRow:
    iteration: int
    mode: str
    query: Instantiation
    situation: Instantiation
    attributes: Instantiation
    outcome: Instantiation
    model_error: float
    kl_to_truth: float | None
    promoted: tuple[str, ...]
    error: str | None = None

    def to_json_obj(self) -> dict:
        return {
            "iteration": self.iteration,
            "mode": self.mode,
            "query": self.query.bindings,
            "situation": self.situation.bindings,
            "attributes": self.attributes.bindings,
            "outcome": self.outcome.bindings,
            "model_error": self.model_error,
            "kl_to_truth": self.kl_to_truth,
            "promoted_vars": list(self.promoted),
            "error": self.error,
        }


@dataclass
class StepResult:
    iteration: int
    model_error: float
    promoted: tuple[str, ...]
    situation: Instantiation = Instantiation()


class LearnDriver:
    """One-experiment-at-a-time engine behind both the batch loop and the service.

    Three independent seeded streams: query choice (passive mode only),
    attribute sampling, and a subject stream handed to whoever executes the
    experiment. Sharing the subject stream lets the two modes see the same
    noise where their situations coincide.
    """

    def __init__(self, state: LearnerState, attribute_specs: Sequence[VariableSpec],
                 config: LearnConfig):
        self.config = config
        self.state = state
        self.stats = empty_stats(attribute_specs, config.n_min)
        self.iteration = 0
        self.situations_observed: set[SitKey] = set()
        q_ss, a_ss, s_ss = np.random.SeedSequence(config.seed).spawn(3)
        self.rng_query = np.random.default_rng(q_ss)
        self.rng_attr = np.random.default_rng(a_ss)
        self.subject_seed = s_ss

    def propose(self) -> tuple[Instantiation, Instantiation]:
        if self.config.mode == "active":
            query = best_query(self.state)
        else:
            query = passive_query(self.state, self.rng_query)
        bindings = {}
        for spec in self.stats.attr_specs.values():
            bindings[spec.name] = spec.domain[int(self.rng_attr.integers(len(spec.domain)))]
        return query, Instantiation(bindings)

    def apply(self, situation: Instantiation, attributes: Instantiation,
              outcome: Instantiation) -> StepResult:
        sit_names = [v.name for v in self.state.model.structure.situation_vars]
        situation = situation.restrict(sit_names)
        self.state = record_observation(self.state, situation, outcome, attributes)
        self.stats = update_attribute_stats(self.stats, situation, attributes, outcome)
        self.situations_observed.add(situation.key())
        rconf = self.config.refinement()
        dependents: dict[str, set[str]] = {}
        for spec in self.state.model.structure.outcome_vars:
            for attr in identify_dependence(self.stats, spec.name, self.situations_observed, rconf):
                dependents.setdefault(attr, set()).add(spec.name)
        promoted = tuple(n for n in self.stats.attribute_names() if n in dependents)
        if promoted:
            self.state = modify_model(
                self.state, self.stats, set(promoted), rconf, dependents, self.config.prior
            )
            self.stats = self.stats.retire(promoted)
            self.situations_observed = set()   # situation vocabulary changed
        self.iteration += 1
        return StepResult(self.iteration, model_error(self.state), promoted, situation)


def learn_model(subject, config: LearnConfig) -> tuple[LearnerState, list[TraceRow]]:
    """Run the full experiment loop against a subject for max_iter experiments."""
    driver = LearnDriver(subject.initial_state(), subject.attribute_specs(), config)
    rng_subject = np.random.default_rng(driver.subject_seed)
    kl_hook = getattr(subject, "kl_to_truth", None)
    trace: list[TraceRow] = []
    for _ in range(config.max_iter):
        query, attributes = driver.propose()
        try:
            env, outcome = subject.experiment(query, attributes, rng_subject)
        except Exception as exc:  # subject failure truncates the trace
            trace.append(
                TraceRow(driver.iteration + 1, config.mode, query, Instantiation(),
                         attributes, Instantiation(), model_error(driver.state),
                         None, (), error=str(exc))
            )
            break
        situation = query.merge(env)
        step = driver.apply(situation, attributes, outcome)
        kl = kl_hook(driver.state.model) if kl_hook is not None else None
        trace.append(
            TraceRow(step.iteration, config.mode, query, step.situation,
                     attributes, outcome, step.model_error, kl, step.promoted)
        )
    return driver.state, trace
