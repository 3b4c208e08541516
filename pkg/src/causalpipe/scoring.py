"""Per-module severities and the failure index F = -sum(log(1 - sev_i))."""

from __future__ import annotations

import csv
import math
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .payloads import INTENT, TEXT, TOOL_CALL, Payload
from .pipeline import Episode, OracleSet

SEV_MAX = 0.99

# Rubric tiers of the deterministic judge.
EXACT = 0.0
SURFACE = 0.30
PARTIAL = 0.70
WRONG = 0.95

_PUNCT = re.compile("[" + re.escape(string.punctuation) + "]")


def tokenize(text: str) -> list:
    """Lowercase; split on whitespace and ASCII punctuation; no stemming."""
    return _PUNCT.sub(" ", text.lower()).split()


def clamp_severity(value: float) -> float:
    return min(max(float(value), 0.0), SEV_MAX)


def failure_index(sev: Sequence[float]) -> float:
    """Natural-log failure index.  Entries must already lie in [0, 1)."""
    values = getattr(sev, "sev", sev)
    total = 0.0
    for s in values:
        if not 0.0 <= s < 1.0 or math.isnan(s):
            raise ValueError(f"severity {s!r} outside [0, 1)")
        total -= math.log1p(-s)
    return total


@dataclass(frozen=True)
class SeverityVector:
    sev: tuple
    judge_tag: str = "rubric"

    def __post_init__(self):
        object.__setattr__(self, "sev", tuple(clamp_severity(s) for s in self.sev))

    def __len__(self):
        return len(self.sev)

    def __iter__(self):
        return iter(self.sev)

    def __getitem__(self, i):
        return self.sev[i]

    @property
    def F(self) -> float:
        return failure_index(self.sev)


@dataclass(frozen=True)
class FailureRecord:
    task_id: str
    F: float
    severity: SeverityVector
    configuration_tag: str = "baseline"

    @classmethod
    def from_severity(cls, task_id: str, severity: SeverityVector, tag: str = "baseline"):
        return cls(task_id, failure_index(severity.sev), severity, tag)


def _norm(value: str) -> tuple:
    return tuple(tokenize(value))


def _score_text(out: str, gold: str) -> float:
    if out == gold:
        return EXACT
    o, g = Counter(tokenize(out)), Counter(tokenize(gold))
    if o == g:
        return SURFACE
    if not g:
        return SURFACE
    coverage = sum((o & g).values()) / sum(g.values())
    if coverage >= 1.0:
        return SURFACE  # nothing missing, extra verbiage only
    return PARTIAL if coverage >= 0.5 else WRONG


def _score_mapping(out: dict, gold: dict) -> float:
    if set(out) != set(gold):
        return PARTIAL
    if any(_norm(out[k]) != _norm(gold[k]) for k in gold):
        return PARTIAL
    return EXACT if dict(out) == dict(gold) else SURFACE


class RubricJudge:
    """Deterministic tiered judge.

    exact match 0.0; surface-only difference 0.30; intent-label or slot/argument
    mismatch 0.70; tool-name mismatch 0.95.  Free text below half coverage of
    the gold tokens also scores 0.95.
    """

    tag = "rubric"
    serial = False

    def score(self, payload: Payload, gold: Payload) -> float:
        if payload.kind != gold.kind:
            return WRONG
        if payload.kind == TEXT:
            return _score_text(payload.text, gold.text)
        if payload.kind == INTENT:
            if payload.intent != gold.intent:
                return PARTIAL
            return _score_mapping(payload.slots, gold.slots)
        if payload.kind == TOOL_CALL:
            if payload.tool != gold.tool:
                return WRONG
            return _score_mapping(payload.args, gold.args)
        raise ValueError(f"unknown payload kind {payload.kind!r}")

    def __call__(self, episode: Episode, oracle: OracleSet) -> SeverityVector:
        return SeverityVector(tuple(self.score(o.payload, oracle[o.module_index]) for o in episode.outputs),
                              self.tag)


def judge_episode(episode: Episode, oracle: OracleSet, judge) -> SeverityVector:
    missing = [o.module_index for o in episode.outputs if o.module_index not in oracle]
    if missing:
        raise KeyError(f"oracle gap for task {episode.task_id!r}: modules {missing}")
    result = judge(episode, oracle)
    if not isinstance(result, SeverityVector):
        result = SeverityVector(tuple(result), getattr(judge, "tag", "judge"))
    if len(result) != len(episode.outputs):
        raise ValueError("judge returned the wrong number of severities")
    return result


def episode_F(episode: Episode, oracle: OracleSet, judge) -> float:
    return failure_index(judge_episode(episode, oracle, judge).sev)


def write_records_csv(path, records: Iterable[FailureRecord]) -> None:
    records = list(records)
    k = max((len(r.severity) for r in records), default=0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["task_id", "configuration_tag", "F"] + [f"sev_{i}" for i in range(1, k + 1)])
        for r in records:
            w.writerow([r.task_id, r.configuration_tag, repr(r.F)] + [repr(s) for s in r.severity])


def read_records_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        sev = tuple(float(row[key]) for key in row if key.startswith("sev_"))
        out.append(FailureRecord(row["task_id"], float(row["F"]), SeverityVector(sev), row["configuration_tag"]))
    return out
