"""Session-oriented HTTP service: the learn loop one experiment at a time.

A session holds a learner plus refinement statistics. The operator asks for
the next proposed experiment, runs it on the physical subject, and posts the
observed outcome; every mutation is snapshotted to one JSON file (fsync'd) so
a restarted server resumes exactly where it stopped.

State machine per session: ready -> awaiting_outcome -> ready, and finally
finished once max_iter experiments were consumed. Outcomes are only accepted
while awaiting; the pending proposal is returned unchanged on repeated reads.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .errors import CapexError, ScenarioError
from .learner import (
    expected_posterior_error,
    initial_learner_state,
    learner_from_dict,
    learner_to_dict,
    model_error,
)
from .model import Instantiation, NetworkStructure, VariableSpec, uniform_model
from .refine import AttributeStats, LearnConfig, LearnDriver
from .scenario import BUNDLED, Scenario, load_scenario, scenario_from_dict
from .scoring import ReferenceSpec, favourable_contexts

UNBOUNDED = 10**9


class SessionDefinition:
    """What a session is created from: a scenario or a bare learner model."""

    def __init__(self, raw: Mapping):
        self.raw = dict(raw)
        scenario = self.raw.get("scenario")
        if scenario is not None:
            if isinstance(scenario, str):
                if scenario not in BUNDLED:
                    raise ScenarioError(f"unknown bundled scenario {scenario!r}")
                self.scenario: Scenario | None = load_scenario(scenario)
            else:
                self.scenario = scenario_from_dict(scenario)
            return
        self.scenario = None
        variables = tuple(
            VariableSpec(
                v["name"], tuple(v["domain"]), v["role"],
                bool(v.get("controllable", v["role"] == "command")),
            )
            for v in self.raw["variables"]
        )
        self._structure = NetworkStructure(
            tuple(v for v in variables if v.role != "attribute"),
            {o: tuple(ps) for o, ps in self.raw["parents"].items()},
        )
        self._attributes = tuple(v for v in variables if v.role == "attribute")
        self._prior = float(self.raw.get("prior", 1.0))

    def initial_state(self):
        if self.scenario is not None:
            return self.scenario.initial_learner_state()
        return initial_learner_state(uniform_model(self._structure, self._prior))

    def attribute_specs(self):
        if self.scenario is not None:
            return self.scenario.attribute_specs()
        return self._attributes

    def reference_for(self, structure) -> ReferenceSpec | None:
        ref = self.raw.get("reference")
        if ref is None and self.scenario is not None:
            ref = self.scenario.reference
        if ref is None:
            return None
        return ReferenceSpec.from_json(ref, structure)

    def default_threshold(self) -> float:
        if self.scenario is not None:
            return self.scenario.score_threshold
        return float(self.raw.get("threshold", 0.5))

    def defaults(self) -> dict:
        if self.scenario is not None:
            return dict(self.scenario.defaults)
        return {}


def _learn_config(definition: SessionDefinition, config: Mapping) -> LearnConfig:
    defaults = definition.defaults()
    prior = definition.scenario.prior if definition.scenario is not None else \
        float(definition.raw.get("prior", 1.0))
    return LearnConfig(
        max_iter=int(config.get("max_iter", UNBOUNDED)),
        mode=config.get("mode", "active"),
        seed=int(config.get("seed", 0)),
        r_threshold=float(config.get("r_threshold", defaults.get("r_threshold", 0.3))),
        n_min=int(config.get("n_min", defaults.get("n_min", 5))),
        promoted_controllable=bool(config.get("promoted_controllable", True)),
        prior=prior,
    )


class Session:
    def __init__(self, session_id: str, definition: SessionDefinition, config: LearnConfig,
                 raw_config: Mapping):
        self.id = session_id
        self.definition = definition
        self.config = config
        self.raw_config = dict(raw_config)
        self.driver = LearnDriver(definition.initial_state(), definition.attribute_specs(), config)
        self.pending: dict | None = None
        self.trace: list[dict] = []
        self.lock = threading.Lock()

    # -- state ----------------------------------------------------------

    @property
    def status(self) -> str:
        if self.pending is not None:
            return "awaiting_outcome"
        if self.driver.iteration >= self.config.max_iter:
            return "finished"
        return "ready"

    def summary(self) -> dict:
        return {
            "id": self.id,
            "status": self.status,
            "iteration": self.driver.iteration,
            "model_error": model_error(self.driver.state),
        }

    def next_query(self, redraw: bool) -> dict:
        if self.pending is not None:
            if redraw:
                raise HTTPException(409, "an experiment is already awaiting its outcome")
            return {**self.summary(), **self.pending}
        if self.status == "finished":
            raise HTTPException(409, "session has finished its experiment budget")
        query, attributes = self.driver.propose()
        epe = expected_posterior_error(self.driver.state, query).epe
        self.pending = {
            "query": query.bindings,
            "attributes": attributes.bindings,
            "epe": epe,
        }
        return {**self.summary(), **self.pending}

    def post_observation(self, body: Mapping) -> dict:
        if self.pending is None:
            raise HTTPException(409, f"no pending experiment (status: {self.status})")
        outcome = Instantiation(dict(body.get("outcome") or {}))
        attributes = Instantiation(dict(body.get("attributes") or self.pending["attributes"]))
        situation = Instantiation(dict(self.pending["query"]))
        overrides = body.get("situation") or {}
        situation = situation.merge(Instantiation(dict(overrides)))
        try:
            step = self.driver.apply(situation, attributes, outcome)
        except CapexError as exc:
            raise HTTPException(422, str(exc)) from exc
        self.trace.append({
            "iteration": step.iteration,
            "mode": self.config.mode,
            "query": dict(self.pending["query"]),
            "situation": step.situation.bindings,
            "attributes": attributes.bindings,
            "outcome": outcome.bindings,
            "model_error": step.model_error,
            "kl_to_truth": None,
            "promoted_vars": list(step.promoted),
            "error": None,
        })
        self.pending = None
        return {**self.summary(), "promoted": list(step.promoted)}

    def scores(self, threshold: float | None) -> dict:
        structure = self.driver.state.model.structure
        ref = self.definition.reference_for(structure)
        if ref is None:
            raise HTTPException(422, "session has no reference attached")
        t = self.definition.default_threshold() if threshold is None else threshold
        if not 0.0 < t < 1.0:
            raise HTTPException(422, "threshold must lie in (0, 1)")
        return favourable_contexts(self.driver.state.model, ref, t).to_json_obj()

    def state_payload(self) -> dict:
        payload = {
            **self.summary(),
            "pending": self.pending,
            "model": learner_to_dict(self.driver.state, rng_seed=self.config.seed),
            "stats": self.driver.stats.to_dict(),
            "trace": list(self.trace),
        }
        try:
            payload["score_report"] = self.scores(None)
        except HTTPException:
            payload["score_report"] = None
        return payload

    # -- persistence ------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "id": self.id,
            "definition": self.definition.raw,
            "config": self.raw_config,
            "learner": learner_to_dict(self.driver.state, rng_seed=self.config.seed),
            "stats": self.driver.stats.to_dict(),
            "iteration": self.driver.iteration,
            "situations_observed": [list(map(list, key)) for key in
                                    sorted(self.driver.situations_observed)],
            "pending": self.pending,
            "trace": self.trace,
            "rng_query": _rng_state(self.driver.rng_query),
            "rng_attr": _rng_state(self.driver.rng_attr),
        }

    @classmethod
    def restore(cls, snap: Mapping) -> "Session":
        definition = SessionDefinition(snap["definition"])
        config = _learn_config(definition, snap["config"])
        session = cls(snap["id"], definition, config, snap["config"])
        session.driver.state = learner_from_dict(snap["learner"])
        session.driver.stats = AttributeStats.from_dict(snap["stats"])
        session.driver.iteration = int(snap["iteration"])
        session.driver.situations_observed = {
            tuple(tuple(kv) for kv in key) for key in snap["situations_observed"]
        }
        _set_rng_state(session.driver.rng_query, snap["rng_query"])
        _set_rng_state(session.driver.rng_attr, snap["rng_attr"])
        session.pending = snap.get("pending")
        session.trace = list(snap.get("trace", []))
        return session


def _rng_state(rng: np.random.Generator) -> dict:
    return json.loads(json.dumps(rng.bit_generator.state))


def _set_rng_state(rng: np.random.Generator, state: Mapping) -> None:
    rng.bit_generator.state = state


class SessionStore:
    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self.create_lock = threading.Lock()
        for path in sorted(self.data_dir.glob("*.json")):
            snap = json.loads(path.read_text())
            session = Session.restore(snap)
            self.sessions[session.id] = session

    def get(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise HTTPException(404, f"no session {session_id!r}") from None

    def persist(self, session: Session) -> None:
        path = self.data_dir / f"{session.id}.json"
        tmp = path.with_name(path.name + ".tmp")
        blob = json.dumps(session.snapshot())
        with open(tmp, "w") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)


def create_app(data_dir: str | Path) -> FastAPI:
    app = FastAPI(title="capex session API")
    store = SessionStore(Path(data_dir))
    app.state.store = store

    @app.exception_handler(HTTPException)
    async def _fmt_error(_req: Request, exc: HTTPException):
        return JSONResponse(status_code=exc.status_code,
                            content={"code": exc.status_code, "message": str(exc.detail)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        try:
            definition = SessionDefinition(body.get("definition") or {})
            raw_config = body.get("config") or {}
            config = _learn_config(definition, raw_config)
        except (CapexError, KeyError, TypeError, ValueError) as exc:
            raise HTTPException(422, f"invalid session definition: {exc}") from exc
        with store.create_lock:
            session_id = uuid.uuid4().hex
            session = Session(session_id, definition, config, raw_config)
            store.sessions[session_id] = session
        with session.lock:
            store.persist(session)
            return session.summary()

    @app.get("/sessions/{session_id}/next-query")
    def next_query(session_id: str, redraw: bool = False):
        session = store.get(session_id)
        with session.lock:
            payload = session.next_query(redraw)
            store.persist(session)
            return payload

    @app.post("/sessions/{session_id}/observations")
    def post_observation(session_id: str, body: dict):
        session = store.get(session_id)
        with session.lock:
            payload = session.post_observation(body)
            store.persist(session)
            return payload

    @app.get("/sessions/{session_id}/state")
    def get_state(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return session.state_payload()

    @app.get("/sessions/{session_id}/scores")
    def get_scores(session_id: str, threshold: float | None = None):
        session = store.get(session_id)
        with session.lock:
            return session.scores(threshold)

    return app
