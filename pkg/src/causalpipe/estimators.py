"""Estimator-style wrappers: fit on the diagnosis split, predict on prescription tasks."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import (check_oracles, check_positive, check_positive_int, check_tasks, check_tau_sweep,
                          check_unit_interval)
from .diagnosis import (DEFAULT_TAU, DEFAULT_TAU_SWEEP, CausalSweepResult, causal_contribution, diagnose_task,
                        fate_census, naive_severity_target, tau_sensitivity)
from .pipeline import map_tasks, run_pipeline
from .prescription import (DEFAULT_K, DEFAULT_TAU_DEMO, DEFAULT_Z_THR, PrescriptionContext, RoutingStats,
                           build_pools, route_target, run_configuration)
from .scoring import RubricJudge


class CausalDiagnoser(BaseEstimator):
    """Interventional diagnosis of a fixed agent.

    ``fit`` runs the full sweep (causal contributions and mediation) on the
    diagnosis tasks and keeps the population target, fate censuses, correction
    pools and routing statistics.  ``transform`` returns the per-task causal
    contribution matrix for any task set.
    """

    def __init__(self, agent=None, judge=None, tau=DEFAULT_TAU, tau_sweep=DEFAULT_TAU_SWEEP,
                 tau_demo=DEFAULT_TAU_DEMO, k=DEFAULT_K, seed=0, jobs=1):
        self.agent = agent
        self.judge = judge
        self.tau = tau
        self.tau_sweep = tau_sweep
        self.tau_demo = tau_demo
        self.k = k
        self.seed = seed
        self.jobs = jobs

    def _judge(self):
        return self.judge if self.judge is not None else RubricJudge()

    def fit(self, tasks, oracles: Mapping):
        if self.agent is None:
            raise ValueError("CausalDiagnoser needs an agent")
        check_positive("tau", self.tau)
        taus = check_tau_sweep(self.tau_sweep)
        check_unit_interval("tau_demo", self.tau_demo, open_ends=True)
        check_positive_int("k", self.k)
        tasks = check_tasks(tasks)
        check_oracles(tasks, oracles, self.agent.k)
        judge = self._judge()
        ds = map_tasks(lambda t: diagnose_task(t, self.agent, oracles[t.task_id], judge, self.seed),
                       tasks, self.jobs, self.agent.serial or getattr(judge, "serial", False))
        self.diagnoses_ = ds
        self.sweep_ = CausalSweepResult.from_per_task({d.task_id: d.delta_F for d in ds})
        self.mean_delta_F_ = np.asarray(self.sweep_.means)
        self.pop_target_ = self.sweep_.pop_target
        self.naive_target_ = naive_severity_target([d.severities for d in ds])
        self.triples_ = [t for d in ds for t in d.triples]
        self.census_ = fate_census(self.triples_, self.tau)
        self.censuses_ = tau_sensitivity(self.triples_, taus)
        self.pools_ = build_pools(ds, {t.task_id: t for t in tasks}, oracles, self.tau_demo, self.k)
        self.routing_stats_ = RoutingStats.from_triples(self.triples_)
        self.task_ids_ = [t.task_id for t in tasks]
        return self

    def transform(self, tasks, oracles: Mapping) -> np.ndarray:
        check_is_fitted(self, "pop_target_")
        tasks = check_tasks(tasks)
        check_oracles(tasks, oracles, self.agent.k)
        judge = self._judge()

        def one(t):
            base = run_pipeline(t, self.agent, seed=self.seed)
            return causal_contribution(t, self.agent, oracles[t.task_id], judge, base, self.seed)

        return np.asarray(map_tasks(one, tasks, self.jobs, self.agent.serial), dtype=float)

    def context(self, routing_oracle=None) -> PrescriptionContext:
        check_is_fitted(self, "pop_target_")
        return PrescriptionContext(self.pools_, self.pop_target_, self.naive_target_, self.routing_stats_,
                                   self.tau, routing_oracle)


class AdaptiveRouter(BaseEstimator):
    """Per-task patch target from NIE against a cheap routing oracle.

    ``fit`` takes mediation triples from the diagnosis split (for the z-score
    rule's per-module mean and spread); ``predict`` returns one module index or
    None per task.
    """

    def __init__(self, agent=None, routing_oracle=None, judge=None, rule="zscore", tau=DEFAULT_TAU,
                 z_thr=DEFAULT_Z_THR, seed=0):
        self.agent = agent
        self.routing_oracle = routing_oracle
        self.judge = judge
        self.rule = rule
        self.tau = tau
        self.z_thr = z_thr
        self.seed = seed

    def fit(self, triples, y=None):
        if self.rule not in ("zscore", "absolute"):
            raise ValueError(f"rule must be 'zscore' or 'absolute', got {self.rule!r}")
        check_positive("tau", self.tau)
        triples = list(triples)
        if not triples:
            raise ValueError("no mediation triples to fit on")
        self.stats_ = RoutingStats.from_triples(triples, self.z_thr)
        return self

    def predict(self, tasks, baselines: Optional[Mapping] = None) -> list:
        check_is_fitted(self, "stats_")
        if self.agent is None or self.routing_oracle is None:
            raise ValueError("AdaptiveRouter needs an agent and a routing oracle")
        judge = self.judge if self.judge is not None else RubricJudge()
        out = []
        for t in check_tasks(tasks):
            base = (baselines or {}).get(t.task_id) or run_pipeline(t, self.agent, seed=self.seed)
            target, _, _ = route_target(t, self.agent, self.routing_oracle, judge, base, self.rule, self.stats_,
                                        self.tau, self.z_thr, self.seed)
            out.append(target)
        return out


class PatchPrescriber(BaseEstimator):
    """Runs one prescription configuration on held-out tasks.

    ``fit`` takes a fitted :class:`CausalDiagnoser`; ``predict`` returns the
    ConfigurationResult for the given tasks.
    """

    def __init__(self, configuration="popccp@pop", routing_oracle=None, seed=0, jobs=1):
        self.configuration = configuration
        self.routing_oracle = routing_oracle
        self.seed = seed
        self.jobs = jobs

    def fit(self, diagnoser: CausalDiagnoser, y=None):
        check_is_fitted(diagnoser, "pop_target_")
        self.diagnoser_ = diagnoser
        self.context_ = diagnoser.context(self.routing_oracle)
        return self

    def predict(self, tasks, oracles: Mapping, baselines: Optional[Mapping] = None):
        check_is_fitted(self, "context_")
        d = self.diagnoser_
        tasks = check_tasks(tasks)
        check_oracles(tasks, oracles, d.agent.k)
        if baselines is None:
            baselines = {t.task_id: run_pipeline(t, d.agent, seed=self.seed) for t in tasks}
        return run_configuration(self.configuration, tasks, d.agent, oracles, d._judge(), baselines,
                                 self.context_, self.seed, self.jobs)

    def score(self, tasks, oracles: Mapping, baselines: Optional[Mapping] = None) -> float:
        """Negative mean change in F (higher is better)."""
        return -self.predict(tasks, oracles, baselines).mean_delta


__all__: Sequence[str] = ("AdaptiveRouter", "CausalDiagnoser", "PatchPrescriber")
