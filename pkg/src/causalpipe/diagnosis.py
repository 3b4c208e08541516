"""Causal contributions, population targets, mediation triples and fates."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .pipeline import Agent, Episode, InterventionError, InterventionSpec, OracleSet, Task, run_pipeline, world_pair
from .scoring import episode_F

DEFAULT_TAU = 0.05
DEFAULT_TAU_SWEEP = (0.01, 0.05, 0.10, 0.20)


class Fate(str, Enum):
    AMPLIFIER = "amplifier"
    PROPAGATOR = "propagator"
    COMPENSATOR = "compensator"


def classify_fate(nie: float, tau: float = DEFAULT_TAU) -> Fate:
    if not tau > 0:
        raise ValueError("tau must be positive")
    if nie > tau:
        return Fate.AMPLIFIER
    if nie < -tau:
        return Fate.COMPENSATOR
    return Fate.PROPAGATOR


def argmax_lowest(values: Sequence[float]) -> int:
    """1-based argmax with ties resolved toward the lowest index."""
    if len(values) == 0:
        raise ValueError("cannot take argmax of an empty sequence")
    best = 0
    for j, v in enumerate(values):
        if v > values[best]:
            best = j
    return best + 1


def causal_contribution(task: Task, agent: Agent, oracle: OracleSet, judge, baseline: Episode,
                        seed: int = 0) -> list:
    """Drop in F when each module's output is replaced by its oracle payload."""
    missing = [s.index for s in agent.slots if s.index not in oracle]
    if missing:
        raise InterventionError(f"oracle is missing modules {missing}")
    f_base = episode_F(baseline, oracle, judge)
    out = []
    for slot in agent.slots:
        ep = run_pipeline(task, agent, InterventionSpec({slot.index: oracle[slot.index]}), baseline, seed)
        out.append(f_base - episode_F(ep, oracle, judge))
    return out


@dataclass
class CausalSweepResult:
    per_task: dict  # task_id -> [dF_1..dF_k]
    means: list = field(default_factory=list)
    pop_target: int = 0

    @classmethod
    def from_per_task(cls, per_task: Mapping[str, Sequence[float]]) -> "CausalSweepResult":
        if not per_task:
            raise ValueError("empty sweep")
        rows = np.asarray(list(per_task.values()), dtype=float)
        means = rows.mean(axis=0).tolist()
        return cls({k: list(v) for k, v in per_task.items()}, means, argmax_lowest(means))


def population_target(sweep) -> int:
    means = sweep.means if isinstance(sweep, CausalSweepResult) else list(sweep)
    return argmax_lowest(means)


def naive_severity_target(severities) -> int:
    """Module with the largest mean baseline severity."""
    rows = np.asarray([list(s) for s in severities], dtype=float)
    if rows.size == 0:
        raise ValueError("no severities given")
    return argmax_lowest(rows.mean(axis=0).tolist())


@dataclass(frozen=True)
class MediationTriple:
    task_id: str
    module_index: int
    TE: float
    NDE: float
    NIE: float
    F_base: float = math.nan
    F_A: float = math.nan
    F_B: float = math.nan


def mediation(task: Task, agent: Agent, oracle: OracleSet, judge, baseline: Episode, i: int,
              seed: int = 0, f_base: Optional[float] = None) -> MediationTriple:
    """NIE = F(A) - F(B), NDE = F(B) - F(E), TE = F(A) - F(E)."""
    if i < 2:
        raise InterventionError("module 1 has no upstream; NIE is undefined")
    a, b = world_pair(task, agent, oracle, i, baseline, seed)
    f_e = episode_F(baseline, oracle, judge) if f_base is None else f_base
    f_a = episode_F(a, oracle, judge)
    f_b = episode_F(b, oracle, judge)
    return MediationTriple(task.task_id, i, f_a - f_e, f_b - f_e, f_a - f_b, f_e, f_a, f_b)


@dataclass
class FateCensus:
    tau: float
    counts: dict  # module -> {"amplifier": n, "propagator": n, "compensator": n}
    compensator_rate: dict  # module -> rate

    def row(self, module: int) -> tuple:
        c = self.counts[module]
        return c[Fate.AMPLIFIER.value], c[Fate.PROPAGATOR.value], c[Fate.COMPENSATOR.value]

    def to_json(self) -> dict:
        return {"tau": self.tau,
                "counts": {str(m): dict(c) for m, c in sorted(self.counts.items())},
                "compensator_rate": {str(m): r for m, r in sorted(self.compensator_rate.items())}}


def fate_census(triples: Iterable[MediationTriple], tau: float = DEFAULT_TAU) -> FateCensus:
    counts: dict = {}
    for t in triples:
        c = counts.setdefault(t.module_index, {f.value: 0 for f in Fate})
        c[classify_fate(t.NIE, tau).value] += 1
    rates = {m: c[Fate.COMPENSATOR.value] / sum(c.values()) for m, c in counts.items()}
    return FateCensus(tau, dict(sorted(counts.items())), dict(sorted(rates.items())))


def tau_sensitivity(triples: Iterable[MediationTriple], taus: Sequence[float] = DEFAULT_TAU_SWEEP) -> list:
    """One census per threshold, relabelled from stored NIE values."""
    taus = list(taus)
    if any(t <= 0 for t in taus) or taus != sorted(taus):
        raise ValueError("tau values must be positive and ascending")
    triples = list(triples)
    return [fate_census(triples, t) for t in taus]


def compensator_rate(census: FateCensus, i: int) -> float:
    counts = census.counts.get(i)
    n = sum(counts.values()) if counts else 0
    if n == 0:
        raise ValueError(f"no mediation results for module {i}")
    return counts[Fate.COMPENSATOR.value] / n


@dataclass
class TaskDiagnosis:
    """Everything the diagnosis sweep learns about one task."""

    task_id: str
    baseline: Episode
    severities: tuple
    F: float
    delta_F: list
    triples: list


def diagnose_task(task: Task, agent: Agent, oracle: OracleSet, judge, seed: int = 0,
                  baseline: Optional[Episode] = None) -> TaskDiagnosis:
    from .scoring import judge_episode

    if baseline is None:
        baseline = run_pipeline(task, agent, seed=seed)
    sev = judge_episode(baseline, oracle, judge)
    f_base = sev.F
    deltas = causal_contribution(task, agent, oracle, judge, baseline, seed)
    triples = [mediation(task, agent, oracle, judge, baseline, s.index, seed, f_base)
               for s in agent.slots if s.index >= 2]
    return TaskDiagnosis(task.task_id, baseline, tuple(sev.sev), f_base, deltas, triples)


def write_sweep_csv(path, diagnoses: Iterable[TaskDiagnosis], tau: float = DEFAULT_TAU) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["task_id", "module", "dF", "TE", "NDE", "NIE", "fate"])
        for d in diagnoses:
            med = {t.module_index: t for t in d.triples}
            for i, df in enumerate(d.delta_F, start=1):
                t = med.get(i)
                if t is None:
                    w.writerow([d.task_id, i, repr(df), "", "", "", ""])
                else:
                    w.writerow([d.task_id, i, repr(df), repr(t.TE), repr(t.NDE), repr(t.NIE),
                                classify_fate(t.NIE, tau).value])


def read_triples_csv(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["NIE"]:
                out.append(MediationTriple(row["task_id"], int(row["module"]), float(row["TE"]),
                                           float(row["NDE"]), float(row["NIE"])))
    return out


def triple_to_json(t: MediationTriple) -> dict:
    return asdict(t)


def summary_json(sweep: CausalSweepResult, naive_target: int, censuses: Sequence[FateCensus]) -> str:
    return json.dumps({"means": sweep.means, "pop_target": sweep.pop_target, "naive_target": naive_target,
                       "censuses": [c.to_json() for c in censuses]}, indent=2, sort_keys=True)
