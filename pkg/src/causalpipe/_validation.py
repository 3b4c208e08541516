"""Small input checks shared by the estimators and the CLI."""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence


def check_unit_interval(name: str, value, open_ends: bool = False) -> float:
    v = float(value)
    ok = (0.0 < v < 1.0) if open_ends else (0.0 <= v <= 1.0)
    if math.isnan(v) or not ok:
        raise ValueError(f"{name} must lie in {'(0, 1)' if open_ends else '[0, 1]'}, got {value!r}")
    return v


def check_positive(name: str, value) -> float:
    v = float(value)
    if not v > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return v


def check_positive_int(name: str, value) -> int:
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_tau_sweep(taus: Iterable[float]) -> tuple:
    taus = tuple(float(t) for t in taus)
    if not taus or any(t <= 0 for t in taus) or list(taus) != sorted(taus):
        raise ValueError("tau sweep must be a non-empty ascending list of positive values")
    return taus


def check_tasks(tasks: Sequence) -> list:
    tasks = list(tasks)
    if not tasks:
        raise ValueError("no tasks given")
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate task_id in task list")
    return tasks


def check_oracles(tasks: Sequence, oracles: Mapping, k: int) -> None:
    for t in tasks:
        o = oracles.get(t.task_id)
        if o is None:
            raise KeyError(f"no oracle for task {t.task_id!r}")
        missing = [i for i in range(1, k + 1) if i not in o]
        if missing:
            raise KeyError(f"oracle for {t.task_id!r} lacks modules {missing}")
