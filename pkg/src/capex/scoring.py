"""Capability scoring against a reference behavior.

A reference gives, per outcome variable, the distribution an ideal subject
would produce for each command. The mismatch of a context is the divergence
from the reference to the learned conditionals, averaged over the command
space, and the score squashes it into (0, 1]:

    Score(context) = 1 / (1 + Mismatch(context))

Contexts scoring above a threshold are favourable. The divergence runs
reference-first, so reference zeros drop out and a learned model (whose
posterior means are strictly positive) can never produce an infinite
mismatch; imported point-mass tables can, and then the score is 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidValueError, ScenarioError
from .model import (
    Instantiation,
    ModelState,
    NetworkStructure,
    enumerate_instantiations,
    situation_index,
)

CmdKey = tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class ReferenceSpec:
    """Expected outcome distribution per command, for each outcome variable."""

    tables: Mapping[str, Mapping[CmdKey, np.ndarray]]

    def __post_init__(self):
        object.__setattr__(
            self,
            "tables",
            {
                o: {cmd: np.asarray(vec, dtype=np.float64) for cmd, vec in table.items()}
                for o, table in dict(self.tables).items()
            },
        )
        for o, table in self.tables.items():
            for cmd, vec in table.items():
                if np.any(vec < 0) or abs(vec.sum() - 1.0) > 1e-9:
                    raise InvalidValueError(
                        f"reference for {o!r} at {dict(cmd)!r} is not a probability vector"
                    )

    def vector(self, outcome_var: str, command: Instantiation) -> np.ndarray:
        table = self.tables[outcome_var]
        try:
            return table[command.key()]
        except KeyError:
            raise InvalidValueError(
                f"reference for {outcome_var!r} does not cover command {command!r}"
            ) from None

    # -- constructors ----------------------------------------------------

    @classmethod
    def equals_command(cls, structure: NetworkStructure, outcome_var: str,
                       command_var: str) -> "ReferenceSpec":
        """Ideal subject: the outcome always equals the commanded value."""
        out_spec = structure.var(outcome_var)
        commands = enumerate_instantiations(structure.command_vars)
        table = {}
        for cmd in commands:
            vec = np.zeros(len(out_spec.domain))
            vec[out_spec.index_of(cmd[command_var])] = 1.0
            table[cmd.key()] = vec
        return cls({outcome_var: table})

    @classmethod
    def constant_outcome(cls, structure: NetworkStructure, outcome_var: str,
                         value: str) -> "ReferenceSpec":
        """Ideal subject: one fixed outcome value regardless of command."""
        out_spec = structure.var(outcome_var)
        commands = enumerate_instantiations(structure.command_vars)
        vec = np.zeros(len(out_spec.domain))
        vec[out_spec.index_of(value)] = 1.0
        return cls({outcome_var: {cmd.key(): vec.copy() for cmd in commands}})

    @classmethod
    def from_json(cls, data: Mapping, structure: NetworkStructure) -> "ReferenceSpec":
        kind = data.get("type")
        if kind == "equals_command":
            return cls.equals_command(structure, data["outcome"], data["command"])
        if kind == "constant":
            return cls.constant_outcome(structure, data["outcome"], data["value"])
        if kind == "table":
            tables = {}
            for o, rows in data["tables"].items():
                table = {}
                for row in rows:
                    cmd = Instantiation(row["command"])
                    table[cmd.key()] = np.asarray(row["p"], dtype=np.float64)
                tables[o] = table
            return cls(tables)
        raise ScenarioError(f"unknown reference type {kind!r}")


def _ref_kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) where p may contain exact zeros; inf when q misses p's support."""
    mask = p > 0
    if np.any(q[mask] == 0.0):
        return math.inf
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def mismatch_from_tables(
    ref: ReferenceSpec,
    model_means: Mapping[tuple[str, CmdKey], np.ndarray],
    commands: Sequence[Instantiation],
) -> float:
    """Command-averaged divergence given explicit conditional tables."""
    total = 0.0
    for cmd in commands:
        for o in ref.tables:
            total += _ref_kl(ref.vector(o, cmd), np.asarray(model_means[(o, cmd.key())]))
    return total / len(commands)


def mismatch(model: ModelState, ref: ReferenceSpec, context: Instantiation) -> float:
    """Mismatch of one context: sum over outcome variables, averaged over commands."""
    structure = model.structure
    for v in structure.context_vars:
        if v.name not in context:
            raise InvalidValueError(f"context must bind {v.name!r}")
    commands = enumerate_instantiations(structure.command_vars)
    means = {}
    for cmd in commands:
        situation = context.merge(cmd)
        for o in ref.tables:
            cpt = model.cpts[o]
            row = cpt.alpha[situation_index(structure, o, situation)]
            means[(o, cmd.key())] = row / row.sum()
    return mismatch_from_tables(ref, means, commands)


def score_value(mismatch_value: float) -> float:
    if math.isinf(mismatch_value):
        return 0.0
    return 1.0 / (1.0 + mismatch_value)


def score(model: ModelState, ref: ReferenceSpec, context: Instantiation) -> float:
    return score_value(mismatch(model, ref, context))


@dataclass(frozen=True)
class ScoreRow:
    context: Instantiation
    mismatch: float
    score: float


@dataclass(frozen=True)
class ScoreReport:
    rows: tuple[ScoreRow, ...]
    threshold: float
    favourable: tuple[Instantiation, ...]

    def to_json_obj(self) -> dict:
        return {
            "threshold": self.threshold,
            "rows": [
                {
                    "context": r.context.bindings,
                    "mismatch": None if math.isinf(r.mismatch) else r.mismatch,
                    "score": r.score,
                    "favourable": r.context in self.favourable,
                }
                for r in self.rows
            ],
            "favourable": [c.bindings for c in self.favourable],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2)


def favourable_contexts(model: ModelState, ref: ReferenceSpec, threshold: float) -> ScoreReport:
    """Score every context; favourable rows sorted by descending score."""
    if not 0.0 < threshold < 1.0:
        raise InvalidValueError("threshold must lie in (0, 1)")
    ctx_vars = model.structure.context_vars
    contexts = enumerate_instantiations(ctx_vars) if ctx_vars else [Instantiation()]
    rows = []
    for c in contexts:
        m = mismatch(model, ref, c)
        rows.append(ScoreRow(c, m, score_value(m)))
    order = sorted(range(len(rows)), key=lambda i: (-rows[i].score, i))
    favourable = tuple(rows[i].context for i in order if rows[i].score > threshold)
    return ScoreReport(tuple(rows), threshold, favourable)


def render_score_table(report: ScoreReport) -> str:
    """Aligned text table: context columns, mismatch, score, favourable flag."""
    names = sorted({n for r in report.rows for n in r.context}) or ["context"]
    header = names + ["mismatch", "score", "favourable"]
    lines = [header]
    for r in report.rows:
        ctx = [r.context[n] if n in r.context else "-" for n in names]
        m = "inf" if math.isinf(r.mismatch) else f"{r.mismatch:.6f}"
        flag = "yes" if r.context in report.favourable else ""
        lines.append(ctx + [m, f"{r.score:.6f}", flag])
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    out = []
    for i, row in enumerate(lines):
        out.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)
