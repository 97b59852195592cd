"""Scenario files: one JSON document describing subject truth and learner setup.

Schema (see also the bundled files under ``capex/scenarios/``)::

    {
      "name": "...",
      "variables": [{"name", "domain", "role", "controllable", "hidden"}, ...],
      "parents": {outcome: [true parent, ...]},
      "truth_cpt": {outcome: [[p, ...], ...]},      # mixed-radix row order
      "noise_rate": 0.2,
      "hidden_rules": [{"guard": {var: value}, "override": {outcome: [p, ...]}}],
      "learner_initial": {"variables": [...], "parents": {...}, "prior": 1.0},
      "reference": {...} | null,
      "env_dist": {var: [p, ...]},                  # optional, uniform default
      "defaults": {"r_threshold", "n_min", "threshold"}
    }

Variables with ``"hidden": true`` exist in the truth but start outside the
learner's model; together with ``role == "attribute"`` variables they form the
candidate set sampled uniformly during experiments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ScenarioError
from .learner import LearnerState, initial_learner_state
from .model import NetworkStructure, VariableSpec, uniform_model
from .refine import LearnConfig
from .scoring import ReferenceSpec
from .subject import HiddenRule, SubjectSpec

BUNDLED = ("ballkick_basic", "ballkick_missing_size", "ballkick_missing_two", "pickup")


@dataclass(frozen=True)
class ScenarioVariable:
    spec: VariableSpec
    hidden: bool = False


@dataclass(frozen=True)
class Scenario:
    name: str
    variables: tuple[ScenarioVariable, ...]
    parents: Mapping[str, tuple[str, ...]]
    truth_cpt: Mapping[str, np.ndarray]
    noise_rate: float
    hidden_rules: tuple[HiddenRule, ...]
    learner_variables: tuple[str, ...]
    learner_parents: Mapping[str, tuple[str, ...]]
    prior: float = 1.0
    reference: dict | None = None
    env_dist: Mapping[str, np.ndarray] = field(default_factory=dict)
    defaults: Mapping[str, float] = field(default_factory=dict)

    def var(self, name: str) -> ScenarioVariable:
        for v in self.variables:
            if v.spec.name == name:
                return v
        raise ScenarioError(f"unknown variable {name!r}")

    def subject_spec(self) -> SubjectSpec:
        # true situation variables: every context/command variable, hidden or not;
        # pure attribute-role variables never enter the truth
        sit = tuple(
            v.spec for v in self.variables if v.spec.role in ("context", "command")
        )
        outs = tuple(v.spec for v in self.variables if v.spec.role == "outcome")
        return SubjectSpec(sit, outs, self.parents, self.truth_cpt,
                           self.noise_rate, self.hidden_rules)

    def _is_candidate(self, v: ScenarioVariable) -> bool:
        return v.spec.role == "attribute" or v.hidden

    def attribute_specs(self) -> tuple[VariableSpec, ...]:
        """Candidate variables sampled uniformly each experiment, declaration order."""
        return tuple(v.spec for v in self.variables if self._is_candidate(v))

    def learner_structure(self) -> NetworkStructure:
        by_name = {v.spec.name: v for v in self.variables}
        specs = []
        for name in self.learner_variables:
            if name not in by_name:
                raise ScenarioError(f"learner_initial names unknown variable {name!r}")
            specs.append(by_name[name].spec)
        return NetworkStructure(tuple(specs), self.learner_parents)

    def initial_learner_state(self) -> LearnerState:
        return initial_learner_state(uniform_model(self.learner_structure(), self.prior))

    def reference_spec(self) -> ReferenceSpec | None:
        if self.reference is None:
            return None
        return ReferenceSpec.from_json(self.reference, self.learner_structure())

    def env_dists(self) -> dict[str, np.ndarray]:
        return dict(self.env_dist)

    def learn_config(self, mode: str, max_iter: int, seed: int,
                     overrides: Mapping | None = None) -> LearnConfig:
        kwargs = {
            "max_iter": max_iter,
            "mode": mode,
            "seed": seed,
            "r_threshold": float(self.defaults.get("r_threshold", 0.3)),
            "n_min": int(self.defaults.get("n_min", 5)),
            "prior": self.prior,
        }
        for key, value in (overrides or {}).items():
            if value is not None:
                kwargs[key] = value
        return LearnConfig(**kwargs)

    @property
    def score_threshold(self) -> float:
        return float(self.defaults.get("threshold", 0.5))


def scenario_from_dict(data: Mapping) -> Scenario:
    try:
        variables = tuple(
            ScenarioVariable(
                VariableSpec(
                    v["name"],
                    tuple(v["domain"]),
                    v["role"],
                    bool(v.get("controllable", v["role"] == "command")),
                ),
                hidden=bool(v.get("hidden", False)),
            )
            for v in data["variables"]
        )
        learner = data["learner_initial"]
        scenario = Scenario(
            name=data.get("name", "scenario"),
            variables=variables,
            parents={o: tuple(ps) for o, ps in data["parents"].items()},
            truth_cpt={o: np.asarray(rows, dtype=np.float64)
                       for o, rows in data["truth_cpt"].items()},
            noise_rate=float(data.get("noise_rate", 0.0)),
            hidden_rules=tuple(
                HiddenRule(
                    guard=_guard(r["guard"]),
                    override={o: np.asarray(v, dtype=np.float64)
                              for o, v in r["override"].items()},
                )
                for r in data.get("hidden_rules", [])
            ),
            learner_variables=tuple(learner["variables"]),
            learner_parents={o: tuple(ps) for o, ps in learner["parents"].items()},
            prior=float(learner.get("prior", 1.0)),
            reference=data.get("reference"),
            env_dist={k: np.asarray(v, dtype=np.float64)
                      for k, v in data.get("env_dist", {}).items()},
            defaults=dict(data.get("defaults", {})),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing required field {exc}") from exc
    # fail fast on inconsistent pieces
    scenario.subject_spec()
    scenario.initial_learner_state()
    scenario.reference_spec()
    return scenario


def _guard(mapping: Mapping[str, str]):
    from .model import Instantiation

    return Instantiation(dict(mapping))


def load_scenario(name_or_path: str | Path) -> Scenario:
    """Load a bundled scenario by name or any scenario JSON by path."""
    text = None
    if isinstance(name_or_path, str) and name_or_path in BUNDLED:
        text = resources.files("capex.scenarios").joinpath(f"{name_or_path}.json").read_text()
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise ScenarioError(
                f"no such scenario {name_or_path!r} (bundled: {', '.join(BUNDLED)})"
            )
        text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    return scenario_from_dict(data)
