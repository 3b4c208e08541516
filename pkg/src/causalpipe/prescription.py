"""Correction pools, patch rendering and the prescription configuration sweep."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .diagnosis import DEFAULT_TAU, TaskDiagnosis, argmax_lowest, compensator_rate  # noqa: F401
from .payloads import TOOL_CALL, Payload, payload_from_json
from .pipeline import Agent, Episode, InterventionSpec, OracleSet, Task, run_pipeline, world_pair
from .scoring import episode_F, judge_episode

logger = logging.getLogger(__name__)

DEFAULT_TAU_DEMO = 0.30
DEFAULT_K = 5
DEFAULT_Z_THR = 1.0


class SplitHygieneError(AssertionError):
    pass


@dataclass(frozen=True)
class CorrectionTriple:
    task_id: str
    module_index: int
    input: str
    wrong: Payload
    correct: Payload
    severity: float

    def to_json(self) -> dict:
        return {"task_id": self.task_id, "module_index": self.module_index, "input": self.input,
                "wrong": self.wrong.to_json(), "correct": self.correct.to_json(), "severity": self.severity}

    @classmethod
    def from_json(cls, d) -> "CorrectionTriple":
        return cls(d["task_id"], d["module_index"], d["input"], payload_from_json(d["wrong"]),
                   payload_from_json(d["correct"]), d["severity"])


@dataclass(frozen=True)
class CorrectionPool:
    module_index: int
    triples: tuple
    tau_demo: float = DEFAULT_TAU_DEMO
    k: int = DEFAULT_K

    @property
    def task_ids(self) -> set:
        return {t.task_id for t in self.triples}

    def to_json(self) -> dict:
        return {"module_index": self.module_index, "tau_demo": self.tau_demo, "k": self.k,
                "triples": [t.to_json() for t in self.triples]}

    @property
    def content_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_json(cls, d) -> "CorrectionPool":
        return cls(d["module_index"], tuple(CorrectionTriple.from_json(t) for t in d["triples"]),
                   d.get("tau_demo", DEFAULT_TAU_DEMO), d.get("k", DEFAULT_K))


def module_input_text(task: Task, upstream: Sequence[Payload]) -> str:
    """What a module saw: the user query for module 1, the previous output after that."""
    return upstream[-1].render() if upstream else task.user_query


def select_pool(candidates: Iterable[CorrectionTriple], module_index: int,
                tau_demo: float = DEFAULT_TAU_DEMO, k: int = DEFAULT_K) -> CorrectionPool:
    """Keep severity >= tau_demo, sort by severity descending then task id, take k."""
    admitted = [c for c in candidates if c.module_index == module_index and c.severity >= tau_demo]
    admitted.sort(key=lambda c: (-c.severity, c.task_id))
    return CorrectionPool(module_index, tuple(admitted[:k]), tau_demo, k)


def build_pools(diagnoses: Iterable[TaskDiagnosis], tasks: Mapping[str, Task], oracles: Mapping[str, OracleSet],
                tau_demo: float = DEFAULT_TAU_DEMO, k: int = DEFAULT_K) -> dict:
    if not 0 < tau_demo < 1:
        raise ValueError("tau_demo must lie in (0, 1)")
    if k < 1:
        raise ValueError("k must be >= 1")
    diagnoses = list(diagnoses)
    if not diagnoses:
        raise ValueError("no diagnosis artifacts")
    n_mod = len(diagnoses[0].severities)
    candidates = []
    for d in diagnoses:
        payloads = d.baseline.payloads
        for i in range(1, n_mod + 1):
            candidates.append(CorrectionTriple(
                d.task_id, i, module_input_text(tasks[d.task_id], payloads[:i - 1]),
                payloads[i - 1], oracles[d.task_id][i], d.severities[i - 1]))
    return {i: select_pool(candidates, i, tau_demo, k) for i in range(1, n_mod + 1)}


def write_pools(path, pools: Mapping[int, CorrectionPool]) -> str:
    body = {str(i): p.to_json() for i, p in sorted(pools.items())}
    digest = hashlib.sha256(json.dumps(body, sort_keys=True, ensure_ascii=False).encode()).hexdigest()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"content_hash": digest, "pools": body}, fh, indent=2, sort_keys=True, ensure_ascii=False)
    return digest


def read_pools(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return {int(i): CorrectionPool.from_json(p) for i, p in data["pools"].items()}


@dataclass(frozen=True)
class PatchSpec:
    target: int
    rendered_block: str
    pool_hash: str
    triples: tuple = ()

    @property
    def empty(self) -> bool:
        return not self.triples


def render_patch(pool: CorrectionPool) -> PatchSpec:
    blocks = []
    for j, t in enumerate(pool.triples, start=1):
        blocks.append(f"### Example {j}\nInput: {t.input}\nWrong: {t.wrong.render()}\n"
                      f"Correct: {t.correct.render()}")
    return PatchSpec(pool.module_index, "\n\n".join(blocks), pool.content_hash, pool.triples)


def count_examples(block: str) -> int:
    return len(re.findall(r"^### Example \d+$", block, flags=re.M))


@dataclass(frozen=True)
class RoutingStats:
    mu: dict
    sigma: dict
    z_thr: float = DEFAULT_Z_THR

    @classmethod
    def from_triples(cls, triples, z_thr: float = DEFAULT_Z_THR) -> "RoutingStats":
        by_mod: dict = {}
        for t in triples:
            by_mod.setdefault(t.module_index, []).append(t.NIE)
        mu = {m: float(np.mean(v)) for m, v in sorted(by_mod.items())}
        sigma = {m: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0 for m, v in sorted(by_mod.items())}
        return cls(mu, sigma, z_thr)

    def zscores(self, nie: Mapping[int, float]) -> dict:
        out = {}
        for m, v in nie.items():
            s = self.sigma.get(m, 0.0)
            out[m] = -math.inf if s <= 0 else (v - self.mu[m]) / s
        return out

    def to_json(self) -> dict:
        return {"mu": {str(k): v for k, v in self.mu.items()},
                "sigma": {str(k): v for k, v in self.sigma.items()}, "z_thr": self.z_thr}

    @classmethod
    def from_json(cls, d) -> "RoutingStats":
        return cls({int(k): v for k, v in d["mu"].items()}, {int(k): v for k, v in d["sigma"].items()},
                   d.get("z_thr", DEFAULT_Z_THR))


@dataclass
class RouteDecision:
    target: Optional[int]
    nie: dict
    scores: dict
    episode: Episode


def route_target(task: Task, agent: Agent, routing_oracle: Callable[[Task, Episode], OracleSet], judge,
                 baseline: Episode, routing: str = "zscore", stats: Optional[RoutingStats] = None,
                 tau: float = DEFAULT_TAU, z_thr: Optional[float] = None, seed: int = 0) -> tuple:
    """(target or None, NIE by module, routing scores) for one task.

    NIE is estimated against the routing oracle, never the cached strong one.
    """
    if routing not in ("zscore", "absolute"):
        raise ValueError(f"unknown routing rule {routing!r}")
    if routing == "zscore" and stats is None:
        raise ValueError("z-score routing needs RoutingStats")
    hat = routing_oracle(task, baseline)
    nie = {}
    for slot in agent.slots:
        if slot.index < 2:
            continue
        a, b = world_pair(task, agent, hat, slot.index, baseline, seed)
        nie[slot.index] = episode_F(a, hat, judge) - episode_F(b, hat, judge)
    best, scores = routing_decision(nie, routing, stats, tau, z_thr)
    return best, nie, scores


def routing_decision(nie: Mapping[int, float], routing: str = "zscore", stats: Optional[RoutingStats] = None,
                     tau: float = DEFAULT_TAU, z_thr: Optional[float] = None) -> tuple:
    """(module to patch or None, per-module scores) from per-task NIE values."""
    if routing == "absolute":
        scores, thr = dict(nie), tau
    else:
        scores = stats.zscores(nie)
        thr = stats.z_thr if z_thr is None else z_thr
    if not scores:
        return None, scores
    order = sorted(scores)
    best = order[argmax_lowest([scores[m] for m in order]) - 1]
    return (best if scores[best] > thr else None), scores


def adaptive_route(task: Task, agent: Agent, routing_oracle: Callable[[Task, Episode], OracleSet], judge,
                   pools: Mapping[int, CorrectionPool], baseline: Episode, routing: str = "zscore",
                   stats: Optional[RoutingStats] = None, tau: float = DEFAULT_TAU,
                   z_thr: Optional[float] = None, seed: int = 0) -> RouteDecision:
    """Per-task patch routing; a failing routing oracle leaves the task unpatched.

    Scoring of the returned episode is left to the caller, against the cached
    strong oracle.
    """
    if routing not in ("zscore", "absolute"):
        raise ValueError(f"unknown routing rule {routing!r}")
    if routing == "zscore" and stats is None:
        raise ValueError("z-score routing needs RoutingStats")
    try:
        best, nie, scores = route_target(task, agent, routing_oracle, judge, baseline, routing, stats, tau,
                                         z_thr, seed)
    except Exception as exc:
        logger.warning("routing oracle failed for %s: %r; not patching", task.task_id, exc)
        return RouteDecision(None, {}, {}, baseline)
    pool = pools.get(best) if best is not None else None
    if pool is None or not pool.triples:
        return RouteDecision(None, nie, scores, baseline)
    ep = run_pipeline(task, agent, baseline=baseline, seed=seed, patches={best: render_patch(pool)})
    return RouteDecision(best, nie, scores, ep)


# -- configurations ---------------------------------------------------------

TARGET_RULES = ("none", "fixed", "pop_target", "naive_pop_severity", "per_task_severity",
                "adaptive_abs_nie", "adaptive_zscore")
TREATMENTS = ("ccp", "oracle-inject", "none")


@dataclass(frozen=True)
class Configuration:
    tag: str
    rule: str
    treatment: str
    fixed: Optional[int] = None


def parse_configuration(tag: str, k: Optional[int] = None) -> Configuration:
    """Map a configuration tag onto (target rule, treatment).

    Tags: baseline, popccp@M<i>, popccp@pop, oracle@M<i>, oracle@pop,
    naive-pop-severity, per-task-severity, adaptive-zscore, adaptive-abs-nie,
    rewrite@pop, compute-upgrade@pop.  The last two are labelled no-op rows.
    """
    t = tag.strip()
    m = re.fullmatch(r"(popccp|oracle|rewrite|compute-upgrade)@(M(\d+)|pop)", t)
    if m:
        kind, _, idx = m.groups()
        rule, fixed = ("fixed", int(idx)) if idx else ("pop_target", None)
        if fixed is not None and (fixed < 1 or (k is not None and fixed > k)):
            raise ValueError(f"configuration {tag!r} targets M{fixed}, outside M1..M{k or '?'}")
        treatment = {"popccp": "ccp", "oracle": "oracle-inject"}.get(kind, "none")
        return Configuration(t, rule, treatment, fixed)
    simple = {
        "baseline": ("none", "none"),
        "naive-pop-severity": ("naive_pop_severity", "ccp"),
        "per-task-severity": ("per_task_severity", "ccp"),
        "adaptive-zscore": ("adaptive_zscore", "ccp"),
        "adaptive-abs-nie": ("adaptive_abs_nie", "ccp"),
    }
    if t in simple:
        return Configuration(t, *simple[t])
    raise ValueError(f"unknown configuration tag {tag!r}")


DEFAULT_CONFIGURATIONS = ("baseline", "popccp@M1", "popccp@M2", "popccp@M3", "popccp@M4", "adaptive-zscore",
                          "oracle@pop", "naive-pop-severity", "per-task-severity", "adaptive-abs-nie",
                          "rewrite@pop", "compute-upgrade@pop")


@dataclass
class ConfigurationResult:
    configuration_tag: str
    task_ids: list
    F_base: list
    F_patched: list
    tool_match: list
    targets: list = field(default_factory=list)
    episodes: list = field(default_factory=list, repr=False, compare=False)

    @property
    def delta(self) -> list:
        return [p - b for p, b in zip(self.F_patched, self.F_base)]

    @property
    def mean_delta(self) -> float:
        return float(np.mean(self.delta)) if self.delta else math.nan

    @property
    def tool_match_rate(self) -> float:
        return float(np.mean(self.tool_match)) if self.tool_match else math.nan

    def summary(self) -> dict:
        return {"configuration_tag": self.configuration_tag, "n": len(self.task_ids),
                "mean_F_base": float(np.mean(self.F_base)), "mean_F": float(np.mean(self.F_patched)),
                "mean_delta": self.mean_delta, "tool_match_rate": self.tool_match_rate}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["task_id", "F_base", "F_patched", "delta", "tool_match", "target"])
            for row in zip(self.task_ids, self.F_base, self.F_patched, self.delta, self.tool_match,
                           self.targets or [""] * len(self.task_ids)):
                tid, fb, fp, d, tm, tg = row
                w.writerow([tid, repr(fb), repr(fp), repr(d), int(tm), "" if tg is None else tg])

    @classmethod
    def read_csv(cls, path, tag: str) -> "ConfigurationResult":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls(tag, [r["task_id"] for r in rows], [float(r["F_base"]) for r in rows],
                   [float(r["F_patched"]) for r in rows], [bool(int(r["tool_match"])) for r in rows],
                   [int(r["target"]) if r["target"] else None for r in rows])


def tool_match(episode: Episode, oracle: OracleSet) -> bool:
    """First tool-call module's tool name equals the oracle's."""
    for out in episode.outputs:
        if out.payload.kind == TOOL_CALL:
            return out.payload.tool == oracle[out.module_index].tool
    return False


@dataclass
class PrescriptionContext:
    """Immutable diagnosis artifacts every configuration draws from."""

    pools: Mapping[int, CorrectionPool]
    pop_target: int
    naive_target: int
    routing_stats: Optional[RoutingStats] = None
    tau: float = DEFAULT_TAU
    routing_oracle: Optional[Callable[[Task, Episode], OracleSet]] = None


def check_split_hygiene(pools: Mapping[int, CorrectionPool], task_ids: Iterable[str]) -> None:
    leaked = set(task_ids) & set().union(*(p.task_ids for p in pools.values()))
    if leaked:
        raise SplitHygieneError(f"prescription tasks found in correction pools: {sorted(leaked)[:5]}")


def run_configuration(config, tasks: Sequence[Task], agent: Agent, oracles: Mapping[str, OracleSet], judge,
                      baselines: Mapping[str, Episode], context: PrescriptionContext, seed: int = 0,
                      jobs: int = 1) -> ConfigurationResult:
    from .pipeline import map_tasks

    cfg = parse_configuration(config, agent.k) if isinstance(config, str) else config
    if cfg.fixed is not None and not 1 <= cfg.fixed <= agent.k:
        raise ValueError(f"configuration {cfg.tag!r} targets M{cfg.fixed}, outside M1..M{agent.k}")
    check_split_hygiene(context.pools, [t.task_id for t in tasks])
    if cfg.treatment == "oracle-inject" and any(t.task_id not in oracles for t in tasks):
        raise KeyError("oracle-inject needs a cached oracle for every task")
    patches = {i: render_patch(p) for i, p in context.pools.items()}

    def fixed_target() -> Optional[int]:
        if cfg.rule == "fixed":
            return cfg.fixed
        if cfg.rule == "pop_target":
            return context.pop_target
        if cfg.rule == "naive_pop_severity":
            return context.naive_target
        return None

    def one(task: Task):
        oracle = oracles[task.task_id]
        base = baselines[task.task_id]
        f_base = episode_F(base, oracle, judge)
        target = None
        if cfg.treatment == "none" or cfg.rule == "none":
            ep = base
        elif cfg.rule in ("adaptive_zscore", "adaptive_abs_nie"):
            if context.routing_oracle is None:
                raise ValueError("adaptive routing needs a routing oracle")
            dec = adaptive_route(task, agent, context.routing_oracle, judge, context.pools, base,
                                 "zscore" if cfg.rule == "adaptive_zscore" else "absolute",
                                 context.routing_stats, context.tau, seed=seed)
            target, ep = dec.target, dec.episode
        else:
            if cfg.rule == "per_task_severity":
                target = argmax_lowest(list(judge_episode(base, oracle, judge).sev))
            else:
                target = fixed_target()
            if cfg.treatment == "oracle-inject":
                ep = run_pipeline(task, agent, InterventionSpec({target: oracle[target]}), base, seed)
            elif context.pools.get(target) is None or patches[target].empty:
                ep = base
            else:
                ep = run_pipeline(task, agent, baseline=base, seed=seed, patches={target: patches[target]})
        return f_base, episode_F(ep, oracle, judge), tool_match(ep, oracle), target, ep

    rows = map_tasks(one, tasks, jobs, agent.serial)
    return ConfigurationResult(cfg.tag, [t.task_id for t in tasks], [r[0] for r in rows], [r[1] for r in rows],
                               [r[2] for r in rows], [r[3] for r in rows], [r[4] for r in rows])
