"""Interventional diagnosis and correction patching for modular agent pipelines."""

from .diagnosis import (Fate, MediationTriple, causal_contribution, classify_fate, diagnose_task, fate_census,
                        mediation, population_target, tau_sensitivity)
from .payloads import Intent, Text, ToolCall
from .pipeline import Agent, Episode, InterventionSpec, Task, run_pipeline
from .prescription import CorrectionPool, adaptive_route, build_pools, render_patch, run_configuration
from .scoring import RubricJudge, SeverityVector, failure_index
from .stats import (bow_cosine, cascade_shift, cohens_dz, correlation, holm_correction, krippendorff_alpha_interval,
                    wilcoxon_signed_rank)

__version__ = "0.1.0"

__all__ = ["Agent", "CorrectionPool", "Episode", "Fate", "Intent", "InterventionSpec", "MediationTriple",
           "RubricJudge", "SeverityVector", "Task", "Text", "ToolCall", "adaptive_route", "bow_cosine",
           "build_pools", "cascade_shift", "causal_contribution", "classify_fate", "cohens_dz", "correlation",
           "diagnose_task", "failure_index", "fate_census", "holm_correction", "krippendorff_alpha_interval",
           "mediation", "population_target", "render_patch", "run_configuration", "run_pipeline",
           "tau_sensitivity", "wilcoxon_signed_rank"]
