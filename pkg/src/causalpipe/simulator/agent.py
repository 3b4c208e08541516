"""Synthetic four-module agent with a tunable co-adaptation coupling.

The coupling lives at one interface: the router's argument convention and
the response generator's decoder.  A *keyed* response generator (probability
``kappa`` per task) has co-adapted to the router's habit of passing item
names instead of catalog ids; it resolves those names against the rewrite it
saw upstream.  That compensation works as long as the whole chain shares the
same noisy convention and breaks when one module is moved off it.

Correction patching changes module behaviour only through the error modes
the pool actually demonstrates; each demonstrated mode is adopted on a task
with probability ``p_adopt``.  A name-habit router that adopts the oracle's
id schema copies the schema but not the catalog lookup, so it emits names
in id fields.
"""

from __future__ import annotations

import random
import re
from dataclasses import asdict, dataclass, fields

from ..payloads import Intent, Text, ToolCall
from ..pipeline import Agent, DEFAULT_SLOTS, ModuleCall, module_seed
from ..scoring import tokenize
from .domain import FALLBACK_RESPONSE, SyntheticTask, gold_oracle, response_text, rewrite_text

_REWRITE = re.compile(r"^For (\w+) (\S+), I want to (\w+) the (.+)\.$")


@dataclass(frozen=True)
class SyntheticAgentConfig:
    m1_surface_rate: float = 0.9
    m2_intent_flip_rate: float = 0.2
    m3_tool_confusion_rate: float = 0.15
    m3_arg_format_rate: float = 0.8
    m4_omission_rate: float = 0.2
    kappa: float = 0.9
    p_adopt: float = 0.8
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name == "seed":
                continue
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ValueError(f"{f.name} must lie in [0, 1], got {v!r}")

    def replace(self, **changes) -> "SyntheticAgentConfig":
        return SyntheticAgentConfig(**{**asdict(self), **changes})

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data) -> "SyntheticAgentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown agent config fields: {sorted(unknown)}")
        return cls(**data)


def _draws(seed: int, n: int) -> list:
    rng = random.Random(seed)
    return [rng.random() for _ in range(n)]


def patch_modes(patch, module_index: int) -> set:
    """Error modes demonstrated by the corrections in a patch."""
    if patch is None:
        return set()
    modes = set()
    for t in patch.triples:
        w, c = t.wrong, t.correct
        if module_index == 1:
            modes.add("surface")
        elif module_index == 2:
            if w.intent != c.intent:
                modes.add("intent")
            if dict(w.slots) != dict(c.slots):
                modes.add("slots")
        elif module_index == 3:
            if w.tool != c.tool:
                modes.add("tool")
            if set(w.args) != set(c.args):
                modes.add("format")
            ref_keys = [k for k in c.args if k != "item_id"]
            if any(w.args.get(k) != c.args[k] for k in ref_keys):
                modes.add("value")
        elif module_index == 4:
            modes.add("decode" if w.text == FALLBACK_RESPONSE else "omission")
    return modes


def execute_tool(call: ToolCall, task: SyntheticTask) -> dict:
    """Simulated tool between router and responder: resolves catalog ids only."""
    item = task.domain.item_by_id(call.args.get("item_id", ""))
    if item is None:
        return {"status": "error", "reason": "unknown item"}
    return {"status": "ok", "item_id": item[0], "item_name": item[1]}


class _Module:
    serial = False

    def __init__(self, config: SyntheticAgentConfig):
        self.config = config

    def draws(self, call: ModuleCall, n: int) -> list:
        # a nonzero agent seed salts every call; seed 0 keeps the run-seeded stream
        s = call.seed if not self.config.seed else module_seed(self.config.seed, str(call.seed), 0)
        return _draws(s, n)

    def adopted(self, call: ModuleCall, mode: str, u: float) -> bool:
        return mode in patch_modes(call.patch, call.slot.index) and u < self.config.p_adopt


class QueryRewriter(_Module):
    """Keeps the '#' sigil and copies adjectives verbatim when noisy."""

    def __call__(self, call: ModuleCall) -> Text:
        t: SyntheticTask = call.task
        u = self.draws(call, 2)
        noisy = u[0] < self.config.m1_surface_rate and not self.adopted(call, "surface", u[1])
        spec = t.domain
        ref = ("#" if noisy else "") + t.ref
        phrase = (" ".join(t.adjectives) + " " + t.item_name) if noisy else t.item_name
        return Text(rewrite_text(spec, ref, spec.verb(t.gold_intent), phrase))


class Planner(_Module):
    def __call__(self, call: ModuleCall) -> Intent:
        t: SyntheticTask = call.task
        spec = t.domain
        u = self.draws(call, 4)
        m = _REWRITE.match(call.upstream[0].render())
        if m is None:
            return Intent("unknown", {})
        _, ref, verb, phrase = m.groups()
        intent = spec.intent_for_verb(verb) or "unknown"
        flip_rate = min(1.0, self.config.m2_intent_flip_rate * spec.difficulty)
        if intent in spec.confusions and u[0] < flip_rate and not self.adopted(call, "intent", u[2]):
            options = spec.confusions[intent]
            intent = options[int(u[1] * len(options))]
        item = phrase.lower()
        if self.adopted(call, "slots", u[3]):
            ref = ref.lstrip("#")
            hit = spec.item_by_phrase(item)
            item = hit[1].lower() if hit else item
        return Intent(intent, {f"{spec.ref_label}_id": ref, "item": item})


class Router(_Module):
    def __call__(self, call: ModuleCall) -> ToolCall:
        t: SyntheticTask = call.task
        spec = t.domain
        u = self.draws(call, 6)
        plan = call.upstream[1]
        intent = plan.intent if plan.intent in spec.intents else next(iter(spec.intents))
        tool = spec.tool(intent)
        confusion = min(1.0, self.config.m3_tool_confusion_rate * spec.difficulty)
        if u[0] < confusion and not self.adopted(call, "tool", u[1]):
            options = spec.tool_confusions(tool)
            tool = options[int(u[2] * len(options))]
        ref_key = f"{spec.ref_label}_id"
        ref = plan.slots.get(ref_key, "")
        if self.adopted(call, "value", u[5]):
            ref = ref.lstrip("#")
        phrase = plan.slots.get("item", "")
        name_habit = u[3] < self.config.m3_arg_format_rate
        if name_habit and self.adopted(call, "format", u[4]):
            args = {ref_key: ref, "item_id": phrase}  # schema copied, lookup not
        elif name_habit:
            args = {ref_key: ref, "item_name": phrase}
        else:
            hit = spec.item_by_phrase(phrase)
            args = {ref_key: ref, "item_id": hit[0] if hit else "unknown"}
        return ToolCall(tool, args)


class Responder(_Module):
    def __call__(self, call: ModuleCall) -> Text:
        t: SyntheticTask = call.task
        spec = t.domain
        u = self.draws(call, 4)
        keyed = u[0] < self.config.kappa
        can_read_names = keyed or self.adopted(call, "decode", u[1])
        omit = u[2] < self.config.m4_omission_rate and not self.adopted(call, "omission", u[3])
        rewrite, tool_call = call.upstream[0].render(), call.upstream[2]
        ref = tool_call.args.get(f"{spec.ref_label}_id", "")
        result = execute_tool(tool_call, t)
        item = None
        if result["status"] == "ok":
            item = (result["item_id"], result["item_name"])
        elif "item_name" in tool_call.args and can_read_names:
            phrase = tool_call.args["item_name"]
            if set(tokenize(phrase)) <= set(tokenize(rewrite)):
                hit = spec.item_by_phrase(phrase)
                item = (hit[0], hit[1]) if hit else None
        if item is None:
            return Text(FALLBACK_RESPONSE)
        return Text(response_text(spec, tool_call.tool, ref, None if omit else item[0], item[1]))


def make_agent(config: SyntheticAgentConfig = SyntheticAgentConfig(), tag: str = "") -> Agent:
    backends = {1: QueryRewriter(config), 2: Planner(config), 3: Router(config), 4: Responder(config)}
    return Agent(backends, DEFAULT_SLOTS, tag or f"sim-kappa{config.kappa:g}")


class DegradedOracle:
    """Gold outputs with each stage corrupted independently (cheap routing oracle)."""

    def __init__(self, corruption: float = 0.15, seed: int = 0):
        if not 0.0 <= corruption <= 1.0:
            raise ValueError("corruption must lie in [0, 1]")
        self.corruption = corruption
        self.seed = seed

    def __call__(self, task: SyntheticTask, baseline=None) -> dict:
        spec = task.domain
        gold = gold_oracle(task)
        u = _draws(module_seed(self.seed, task.task_id, -1), 5)
        out = dict(gold)
        if u[0] < self.corruption:
            out[1] = Text(rewrite_text(spec, "#" + task.ref, spec.verb(task.gold_intent),
                                       " ".join(task.adjectives) + " " + task.item_name))
        if u[1] < self.corruption:
            alt = spec.confusions[task.gold_intent][0]
            out[2] = Intent(alt, dict(gold[2].slots))
        if u[2] < self.corruption:
            out[3] = ToolCall(spec.tool_confusions(task.gold_tool)[0], dict(gold[3].args))
        if u[3] < self.corruption:
            out[4] = Text(response_text(spec, task.gold_tool, task.ref, None, task.item_name))
        return out
