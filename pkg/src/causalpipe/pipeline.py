"""k-module chain execution with do-interventions and frozen modules."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Protocol, Sequence

from .payloads import INTENT, TEXT, TOOL_CALL, Payload, payload_from_json, payload_key

logger = logging.getLogger(__name__)

EXECUTED = "executed"
REPLACED = "replaced"
FROZEN = "frozen"

# Per-stage gold outputs for one task, keyed by module index.
OracleSet = Mapping[int, Payload]


class PipelineError(Exception):
    pass


class InterventionError(PipelineError, ValueError):
    pass


class ModuleExecutionError(PipelineError, RuntimeError):
    def __init__(self, module_index: int, cause: BaseException):
        super().__init__(f"module {module_index} failed: {cause!r}")
        self.module_index = module_index
        self.cause = cause


@dataclass(frozen=True)
class Task:
    task_id: str
    user_query: str
    domain_tag: str = "generic"
    meta: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.user_query:
            raise ValueError(f"task {self.task_id!r} has an empty user_query")

    def to_json(self) -> dict:
        return {"task_id": self.task_id, "user_query": self.user_query,
                "domain_tag": self.domain_tag, **({"meta": dict(self.meta)} if self.meta else {})}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Task":
        return cls(data["task_id"], data["user_query"], data.get("domain_tag", "generic"), data.get("meta", {}))


@dataclass(frozen=True)
class ModuleSlot:
    index: int
    name: str
    output_kind: str


DEFAULT_SLOTS = (
    ModuleSlot(1, "query-rewrite", TEXT),
    ModuleSlot(2, "planner", INTENT),
    ModuleSlot(3, "router", TOOL_CALL),
    ModuleSlot(4, "response", TEXT),
)


def check_slots(slots: Sequence[ModuleSlot]) -> tuple:
    slots = tuple(slots)
    if [s.index for s in slots] != list(range(1, len(slots) + 1)):
        raise ValueError("slot indices must be contiguous from 1")
    return slots


@dataclass(frozen=True)
class ModuleOutput:
    module_index: int
    payload: Payload
    provenance: str = EXECUTED

    def to_json(self) -> dict:
        return {"index": self.module_index, "kind": self.payload.kind,
                "payload": self.payload.to_json(), "provenance": self.provenance}


@dataclass(frozen=True)
class InterventionSpec:
    replacements: Mapping[int, Payload] = field(default_factory=dict)
    frozen: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "frozen", frozenset(self.frozen))
        both = set(self.replacements) & self.frozen
        if both:
            raise InterventionError(f"modules {sorted(both)} both replaced and frozen")

    @property
    def empty(self) -> bool:
        return not self.replacements and not self.frozen

    @property
    def indices(self) -> set:
        return set(self.replacements) | set(self.frozen)

    def to_json(self) -> dict:
        return {"replacements": {str(i): p.to_json() for i, p in sorted(self.replacements.items())},
                "frozen": sorted(self.frozen)}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "InterventionSpec":
        return cls({int(i): payload_from_json(p) for i, p in data.get("replacements", {}).items()},
                   frozenset(int(i) for i in data.get("frozen", [])))


NO_INTERVENTION = InterventionSpec()


@dataclass(frozen=True)
class Episode:
    task_id: str
    outputs: tuple
    intervention: InterventionSpec = NO_INTERVENTION
    seed: int = 0
    backend_tag: str = ""
    patched: tuple = ()  # (module_index, pool_hash) pairs

    def payload(self, index: int) -> Payload:
        return self.outputs[index - 1].payload

    @property
    def payloads(self) -> list:
        return [o.payload for o in self.outputs]

    def to_json(self) -> dict:
        return {"task_id": self.task_id, "seed": self.seed, "backend_tag": self.backend_tag,
                "intervention": self.intervention.to_json(),
                "patched": [list(p) for p in self.patched],
                "outputs": [o.to_json() for o in self.outputs]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Episode":
        outputs = tuple(ModuleOutput(o["index"], payload_from_json(o["payload"]), o["provenance"])
                        for o in data["outputs"])
        return cls(data["task_id"], outputs, InterventionSpec.from_json(data.get("intervention", {})),
                   data.get("seed", 0), data.get("backend_tag", ""),
                   tuple(tuple(p) for p in data.get("patched", [])))


@dataclass(frozen=True)
class ModuleCall:
    """Everything a backend sees when asked to produce one module's output."""

    task: Task
    slot: ModuleSlot
    upstream: tuple  # payloads of modules 1..index-1 in this run
    seed: int
    patch: Any = None  # PatchSpec or None


class ModuleBackend(Protocol):
    serial: bool

    def __call__(self, call: ModuleCall) -> Payload: ...


@dataclass
class Agent:
    """A fixed-arity chain of module backends."""

    backends: Mapping[int, Callable[[ModuleCall], Payload]]
    slots: tuple = DEFAULT_SLOTS
    tag: str = "agent"

    def __post_init__(self):
        self.slots = check_slots(self.slots)
        missing = [s.index for s in self.slots if s.index not in self.backends]
        if missing:
            raise ValueError(f"no backend for modules {missing}")

    @property
    def k(self) -> int:
        return len(self.slots)

    @property
    def serial(self) -> bool:
        return any(getattr(b, "serial", False) for b in self.backends.values())


def module_seed(seed: int, task_id: str, index: int) -> int:
    """Per-module seed, so an intervention never perturbs another module's randomness."""
    digest = hashlib.blake2b(f"{seed}|{task_id}|{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _check_payload(slot: ModuleSlot, payload: Payload):
    if getattr(payload, "kind", None) != slot.output_kind:
        raise InterventionError(
            f"payload kind {getattr(payload, 'kind', type(payload).__name__)!r} "
            f"does not match slot {slot.index} ({slot.output_kind})")


def run_pipeline(task: Task, agent: Agent, intervention: InterventionSpec = NO_INTERVENTION,
                 baseline: Optional[Episode] = None, seed: int = 0,
                 patches: Optional[Mapping[int, Any]] = None) -> Episode:
    """Run ``agent`` on ``task`` under ``intervention``.

    Modules strictly upstream of the lowest intervened (or patched) index copy
    the baseline outputs when a baseline is given.  Replaced modules emit the
    supplied payload, frozen ones the baseline payload, and everything else at
    or below the frontier is executed on the (possibly intervened) upstream.
    """
    patches = dict(patches or {})
    for i, payload in intervention.replacements.items():
        if not 1 <= i <= agent.k:
            raise InterventionError(f"replacement index {i} outside 1..{agent.k}")
        _check_payload(agent.slots[i - 1], payload)
    if intervention.frozen:
        if baseline is None:
            raise InterventionError("frozen modules need a baseline episode")
        bad = [i for i in intervention.frozen if not 1 <= i <= len(baseline.outputs)]
        if bad:
            raise InterventionError(f"frozen indices {bad} have no baseline payload")
    if baseline is not None and baseline.task_id != task.task_id:
        raise InterventionError("baseline episode belongs to another task")

    touched = intervention.indices | set(patches)
    frontier = min(touched) if touched else agent.k + 1

    outputs = []
    for slot in agent.slots:
        i = slot.index
        if i < frontier and baseline is not None:
            outputs.append(baseline.outputs[i - 1])
        elif i in intervention.replacements:
            outputs.append(ModuleOutput(i, intervention.replacements[i], REPLACED))
        elif i in intervention.frozen:
            outputs.append(ModuleOutput(i, baseline.outputs[i - 1].payload, FROZEN))
        else:
            call = ModuleCall(task, slot, tuple(o.payload for o in outputs),
                              module_seed(seed, task.task_id, i), patches.get(i))
            try:
                payload = agent.backends[i](call)
            except Exception as exc:
                raise ModuleExecutionError(i, exc) from exc
            if getattr(payload, "kind", None) != slot.output_kind:
                raise ModuleExecutionError(i, TypeError(f"backend returned {payload!r}"))
            outputs.append(ModuleOutput(i, payload, EXECUTED))

    patched = tuple(sorted((i, getattr(p, "pool_hash", "")) for i, p in patches.items()))
    return Episode(task.task_id, tuple(outputs), intervention, seed, agent.tag, patched)


def world_pair(task: Task, agent: Agent, oracle: OracleSet, i: int, baseline: Episode,
               seed: int = 0) -> tuple:
    """Refresh world A and frozen world B for mediation through module ``i``.

    Both worlds replace every module upstream of ``i`` with its oracle payload;
    B additionally holds module ``i`` at its baseline output.
    """
    if i < 2:
        raise InterventionError("mediation needs an upstream: module index must be >= 2")
    missing = [j for j in range(1, i) if j not in oracle]
    if missing:
        raise InterventionError(f"oracle is missing modules {missing}")
    upstream = {j: oracle[j] for j in range(1, i)}
    a = run_pipeline(task, agent, InterventionSpec(upstream), baseline, seed)
    b = run_pipeline(task, agent, InterventionSpec(upstream, frozenset({i})), baseline, seed)
    return a, b


def same_payload(a: Payload, b: Payload) -> bool:
    return payload_key(a) == payload_key(b)


def map_tasks(fn: Callable, items: Iterable, jobs: int = 1, serial: bool = False) -> list:
    """Apply ``fn`` over independent tasks, in order, optionally on a thread pool."""
    items = list(items)
    if jobs <= 1 or serial or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def write_episodes(path, episodes: Iterable[Episode]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(ep.dumps() + "\n")


def read_episodes(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [Episode.from_json(json.loads(line)) for line in fh if line.strip()]


def write_tasks(path, tasks: Iterable[Task]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write(json.dumps(t.to_json(), sort_keys=True, ensure_ascii=False) + "\n")


def read_tasks(path) -> list:
    tasks, seen = [], set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        task = Task.from_json(json.loads(line))
        if task.task_id in seen:
            raise ValueError(f"duplicate task_id {task.task_id!r} in {path}")
        seen.add(task.task_id)
        tasks.append(task)
    return tasks
