"""End-to-end diagnose-then-prescribe runs on the synthetic agent."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from ..diagnosis import (DEFAULT_TAU, DEFAULT_TAU_SWEEP, CausalSweepResult, diagnose_task, fate_census,
                         naive_severity_target, tau_sensitivity)
from ..pipeline import map_tasks, run_pipeline
from ..prescription import (DEFAULT_CONFIGURATIONS, DEFAULT_K, DEFAULT_TAU_DEMO, PrescriptionContext,
                            RoutingStats, build_pools, run_configuration)
from ..scoring import RubricJudge
from ..stats import PairedSample, cascade_shift, cohens_dz, correlation, wilcoxon_signed_rank
from .agent import DegradedOracle, SyntheticAgentConfig, make_agent
from .domain import generate_tasks, gold_oracle

PARADOX_CONFIGURATIONS = DEFAULT_CONFIGURATIONS + ("oracle@M3",)
KAPPA_GRID = (0.0, 0.25, 0.5, 0.75, 0.9)


@dataclass(frozen=True)
class SimulationConfig:
    agent: SyntheticAgentConfig = field(default_factory=SyntheticAgentConfig)
    n_diag: int = 500
    n_presc: int = 200
    domain: str = "retail-like"
    seed: int = 0
    k: int = DEFAULT_K
    tau_demo: float = DEFAULT_TAU_DEMO
    tau: float = DEFAULT_TAU
    tau_sweep: tuple = DEFAULT_TAU_SWEEP
    routing_corruption: float = 0.15
    configurations: tuple = PARADOX_CONFIGURATIONS

    def __post_init__(self):
        if self.n_diag < 1 or self.n_presc < 1:
            raise ValueError("n_diag and n_presc must be >= 1")
        object.__setattr__(self, "tau_sweep", tuple(self.tau_sweep))
        object.__setattr__(self, "configurations", tuple(self.configurations))

    def replace(self, **changes) -> "SimulationConfig":
        # names shared with the agent (seed) stay at this level
        agent_only = set(SyntheticAgentConfig.__dataclass_fields__) - set(self.__dataclass_fields__)
        agent_changes = {k: changes.pop(k) for k in list(changes) if k in agent_only}
        agent = changes.pop("agent", self.agent)
        if agent_changes:
            agent = agent.replace(**agent_changes)
        return SimulationConfig(**{**{f.name: getattr(self, f.name) for f in fields(self)}, "agent": agent, **changes})

    def to_json(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["agent"] = self.agent.to_json()
        d["tau_sweep"] = list(self.tau_sweep)
        d["configurations"] = list(self.configurations)
        return d

    @classmethod
    def from_json(cls, data) -> "SimulationConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown simulation config fields: {sorted(unknown)}")
        if "agent" in data:
            data["agent"] = SyntheticAgentConfig.from_json(data["agent"])
        return cls(**data)


def split_tasks(config: SimulationConfig) -> tuple:
    tasks = generate_tasks(config.n_diag + config.n_presc, config.domain, config.seed)
    return tasks[:config.n_diag], tasks[config.n_diag:]


@dataclass
class DiagnosisRun:
    diagnoses: list
    sweep: CausalSweepResult
    naive_target: int
    triples: list
    censuses: list  # one per tau in the sweep
    census: object  # at the primary tau
    pools: dict
    routing_stats: RoutingStats


def run_diagnosis(config: SimulationConfig, agent, diag_tasks, oracles, judge, jobs: int = 1) -> DiagnosisRun:
    s = config.seed
    ds = map_tasks(lambda t: diagnose_task(t, agent, oracles[t.task_id], judge, s), diag_tasks, jobs, agent.serial)
    sweep = CausalSweepResult.from_per_task({d.task_id: d.delta_F for d in ds})
    triples = [x for d in ds for x in d.triples]
    pools = build_pools(ds, {t.task_id: t for t in diag_tasks}, oracles, config.tau_demo, config.k)
    return DiagnosisRun(ds, sweep, naive_severity_target([d.severities for d in ds]), triples,
                        tau_sensitivity(triples, config.tau_sweep), fate_census(triples, config.tau), pools,
                        RoutingStats.from_triples(triples))


@dataclass
class ParadoxReport:
    config: SimulationConfig
    pop_target: int
    naive_target: int
    mean_delta_F: list
    census: dict
    tau_censuses: list
    mean_delta: dict  # configuration tag -> mean delta F
    contrast: dict  # M1-vs-M3 paired comparison on patched F
    baseline_tool_match: float
    f_validity: dict
    results: dict = field(default_factory=dict, repr=False)  # tag -> ConfigurationResult
    diagnosis: Optional[DiagnosisRun] = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"config": self.config.to_json(), "pop_target": self.pop_target, "naive_target": self.naive_target,
                "mean_delta_F": self.mean_delta_F, "census": self.census, "tau_censuses": self.tau_censuses,
                "mean_delta": self.mean_delta, "contrast": self.contrast,
                "baseline_tool_match": self.baseline_tool_match, "f_validity": self.f_validity}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def write_f_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["configuration_tag", "task_id", "F_base", "F", "delta", "tool_match"])
            for tag, r in self.results.items():
                for row in zip(r.task_ids, r.F_base, r.F_patched, r.delta, r.tool_match):
                    w.writerow([tag, row[0], repr(row[1]), repr(row[2]), repr(row[3]), int(row[4])])

    def cascade(self, tags: Sequence[str] = ("popccp@M1", "popccp@M3"), embed=None) -> dict:
        base = self.results["baseline"].episodes
        return {tag: cascade_shift(base, self.results[tag].episodes, embed).to_json() for tag in tags}


def contrast_m1_m3(results: dict) -> dict:
    m1, m3 = results["popccp@M1"], results["popccp@M3"]
    if m1.task_ids != m3.task_ids:
        raise ValueError("M1 and M3 results are not aligned")
    sample = PairedSample(m1.F_patched, m3.F_patched, m1.task_ids)
    w = wilcoxon_signed_rank(sample)
    return {"label": "popccp@M1 vs popccp@M3", "statistic": w.statistic, "raw_p": w.p_value, "n": w.n,
            "mode": w.mode, "d_z": cohens_dz(sample), "mean_diff": float(np.mean(sample.diffs))}


def f_validity(result) -> dict:
    f = np.asarray(result.F_patched)
    tm = np.asarray(result.tool_match, dtype=float)
    out = {"baseline_tool_match": float(tm.mean()), "pearson_r": None, "spearman_rho": None, "mean_F_gap": None}
    if 0 < tm.mean() < 1:
        out["pearson_r"] = correlation(f, tm, "pearson")[0]
        out["spearman_rho"] = correlation(f, tm, "spearman")[0]
        out["mean_F_gap"] = float(f[tm == 0].mean() - f[tm == 1].mean())
    return out


def reproduce_paradox(config: SimulationConfig = SimulationConfig(), jobs: int = 1,
                      configurations: Optional[Sequence[str]] = None) -> ParadoxReport:
    """Diagnose on one split, build pools there, prescribe on a disjoint split."""
    agent = make_agent(config.agent)
    judge = RubricJudge()
    diag_tasks, presc_tasks = split_tasks(config)
    oracles = {t.task_id: gold_oracle(t) for t in diag_tasks + presc_tasks}
    dx = run_diagnosis(config, agent, diag_tasks, oracles, judge, jobs)
    ctx = PrescriptionContext(dx.pools, dx.sweep.pop_target, dx.naive_target, dx.routing_stats, config.tau,
                              DegradedOracle(config.routing_corruption, config.seed))
    baselines = dict(zip([t.task_id for t in presc_tasks],
                         map_tasks(lambda t: run_pipeline(t, agent, seed=config.seed), presc_tasks, jobs,
                                   agent.serial)))
    tags = list(dict.fromkeys(["baseline", "popccp@M1", "popccp@M3",
                               *(configurations or config.configurations)]))
    results = {tag: run_configuration(tag, presc_tasks, agent, oracles, judge, baselines, ctx, config.seed, jobs)
               for tag in tags}
    return ParadoxReport(
        config, dx.sweep.pop_target, dx.naive_target, dx.sweep.means, dx.census.to_json(),
        [c.to_json() for c in dx.censuses], {t: r.mean_delta for t, r in results.items()},
        contrast_m1_m3(results), results["baseline"].tool_match_rate, f_validity(results["baseline"]),
        results, dx)


def kappa_grid(config: SimulationConfig = SimulationConfig(), kappas: Sequence[float] = KAPPA_GRID,
               jobs: int = 1) -> list:
    """Compensator rate at M_3 and mean delta of CCP@M_3 at each coupling strength."""
    rows = []
    for kappa in kappas:
        cfg = config.replace(kappa=kappa)
        rep = reproduce_paradox(cfg, jobs, configurations=("popccp@M3",))
        rows.append({"kappa": kappa, "compensator_rate_m3": rep.census["compensator_rate"]["3"],
                     "delta_ccp_m3": rep.mean_delta["popccp@M3"], "pop_target": rep.pop_target,
                     "n_diag": cfg.n_diag, "n_presc": cfg.n_presc})
    return rows


def hazard_onset(rows: Sequence[dict]) -> Optional[dict]:
    """First grid point (in kappa order) where CCP@M_3 makes things worse."""
    for row in sorted(rows, key=lambda r: r["kappa"]):
        if row["delta_ccp_m3"] > 0:
            return row
    return None
