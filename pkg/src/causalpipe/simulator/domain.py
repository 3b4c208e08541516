"""Synthetic task catalogs for retail-like and airline-like domains."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping

from ..payloads import Intent, Text, ToolCall
from ..pipeline import Task


@dataclass(frozen=True)
class DomainSpec:
    name: str
    ref_label: str  # "order" / "reservation"
    ref_prefix: str
    # intent -> (tool, verb used in rewrites, past tense used in responses)
    intents: Mapping[str, tuple]
    # adjacent intents / tools for planner flips and router confusion
    confusions: Mapping[str, tuple]
    items: tuple  # (item_id, name, adjectives)
    # multiplier on intrinsic planner/router error rates
    difficulty: float = 1.0

    def tool(self, intent: str) -> str:
        return self.intents[intent][0]

    def verb(self, intent: str) -> str:
        return self.intents[intent][1]

    def past(self, tool: str) -> str:
        for t, _, p in self.intents.values():
            if t == tool:
                return p
        return "handled"

    def intent_for_verb(self, verb: str):
        for intent, (_, v, _) in self.intents.items():
            if v == verb:
                return intent
        return None

    def tool_confusions(self, tool: str) -> tuple:
        for intent, (t, _, _) in self.intents.items():
            if t == tool:
                return tuple(self.tool(i) for i in self.confusions[intent])
        return ()

    def item_by_id(self, item_id: str):
        for item in self.items:
            if item[0] == item_id:
                return item
        return None

    def item_by_phrase(self, phrase: str):
        """Catalog item whose name is contained in ``phrase`` (longest name wins)."""
        phrase = " " + " ".join(phrase.lower().split()) + " "
        hits = [it for it in self.items if f" {it[1].lower()} " in phrase]
        return max(hits, key=lambda it: len(it[1])) if hits else None


RETAIL = DomainSpec(
    name="retail-like",
    ref_label="order",
    ref_prefix="W",
    intents={
        "cancel": ("cancel_pending_order", "cancel", "cancelled"),
        "modify-items": ("modify_pending_order_items", "modify", "modified"),
        "modify-address": ("modify_pending_order_address", "redirect", "redirected"),
        "exchange": ("exchange_delivered_order_items", "exchange", "exchanged"),
        "return": ("return_delivered_order_items", "return", "returned"),
    },
    confusions={
        "cancel": ("modify-items",),
        "modify-items": ("modify-address",),
        "modify-address": ("modify-items",),
        "exchange": ("return",),
        "return": ("exchange",),
    },
    items=(
        ("5649301876", "Gaming Mouse", ("black", "wireless")),
        ("7782651034", "Luggage Set", ("red", "hardshell")),
        ("2217340965", "Makeup Kit", ("dark", "matte")),
        ("9023114587", "Espresso Machine", ("silver", "compact")),
        ("3348876120", "Desk Lamp", ("white", "adjustable")),
        ("6631209948", "Water Bottle", ("blue", "insulated")),
        ("1187463302", "Running Shoes", ("green", "lightweight")),
        ("8890432215", "Office Chair", ("grey", "ergonomic")),
    ),
)

AIRLINE = DomainSpec(
    name="airline-like",
    ref_label="reservation",
    ref_prefix="R",
    intents={
        "cancel-reservation": ("cancel_reservation", "cancel", "cancelled"),
        "update-flights": ("update_reservation_flights", "rebook", "rebooked"),
        "update-baggage": ("update_reservation_baggages", "check", "checked"),
        "update-passengers": ("update_reservation_passengers", "rename", "renamed"),
        "book": ("book_reservation", "book", "booked"),
    },
    confusions={
        "cancel-reservation": ("update-flights", "book"),
        "update-flights": ("book", "cancel-reservation"),
        "update-baggage": ("update-passengers", "update-flights"),
        "update-passengers": ("update-baggage", "update-flights"),
        "book": ("update-flights", "cancel-reservation"),
    },
    items=(
        ("HAT170", "Economy Seat", ("aisle", "refundable")),
        ("HAT041", "Business Seat", ("window", "flexible")),
        ("BAG002", "Checked Bag", ("heavy", "oversized")),
        ("BAG001", "Carry On", ("small", "soft")),
        ("PAX003", "Passenger Record", ("adult", "primary")),
        ("INS010", "Travel Insurance", ("full", "annual")),
    ),
    difficulty=1.6,
)

DOMAINS = {RETAIL.name: RETAIL, AIRLINE.name: AIRLINE, "retail": RETAIL, "airline": AIRLINE}

FIRST = ("Lucas", "Lei", "Anya", "Omar", "Mia", "Yusuf", "Sofia", "Ivan", "Noor", "Chen")
LAST = ("Muller", "Ahmed", "Patel", "Garcia", "Kim", "Rossi", "Silva", "Novak", "Haddad", "Wang")


def get_domain(name: str) -> DomainSpec:
    try:
        return DOMAINS[name]
    except KeyError:
        raise ValueError(f"unknown domain {name!r}; expected one of {sorted(DOMAINS)}") from None


@dataclass(frozen=True)
class SyntheticTask(Task):
    gold_intent: str = ""
    gold_tool: str = ""
    ref: str = ""
    item_id: str = ""
    item_name: str = ""
    adjectives: tuple = field(default=())

    @property
    def domain(self) -> DomainSpec:
        return get_domain(self.domain_tag)

    @property
    def id_args(self) -> dict:
        return {f"{self.domain.ref_label}_id": self.ref, "item_id": self.item_id}

    @property
    def name_args(self) -> dict:
        return {f"{self.domain.ref_label}_id": self.ref, "item_name": self.item_name.lower()}

    def to_json(self) -> dict:
        d = super().to_json()
        d["meta"] = {"gold_intent": self.gold_intent, "gold_tool": self.gold_tool, "ref": self.ref,
                     "item_id": self.item_id, "item_name": self.item_name, "adjectives": list(self.adjectives)}
        return d

    @classmethod
    def from_json(cls, data) -> "SyntheticTask":
        m = data["meta"]
        return cls(data["task_id"], data["user_query"], data["domain_tag"], {}, m["gold_intent"],
                   m["gold_tool"], m["ref"], m["item_id"], m["item_name"], tuple(m["adjectives"]))


def generate_tasks(n: int, domain: str = "retail-like", seed: int = 0, prefix: str = "") -> list:
    """Deterministic task catalog with intents balanced round-robin, then shuffled."""
    if n < 1:
        raise ValueError("n must be >= 1")
    spec = get_domain(domain)
    rng = random.Random(f"tasks|{spec.name}|{seed}")
    intents = [list(spec.intents)[i % len(spec.intents)] for i in range(n)]
    rng.shuffle(intents)
    short = "retail" if spec is RETAIL else "airline"
    tasks = []
    for j, intent in enumerate(intents):
        item_id, item_name, adjectives = rng.choice(spec.items)
        ref = f"{spec.ref_prefix}{rng.randrange(10**6, 10**7)}"
        who = f"{rng.choice(FIRST)} {rng.choice(LAST)}"
        query = (f"Hi, my name is {who}. For #{ref}, please {spec.verb(intent)} the "
                 f"{' '.join(adjectives)} {item_name} for me.")
        tasks.append(SyntheticTask(f"{prefix}{short}_{j:04d}", query, spec.name, {}, intent, spec.tool(intent),
                                   ref, item_id, item_name, tuple(adjectives)))
    return tasks


# -- canonical renderings shared by the oracle and the simulated modules ----

def rewrite_text(spec: DomainSpec, ref: str, verb: str, item_phrase: str) -> str:
    return f"For {spec.ref_label} {ref}, I want to {verb} the {item_phrase}."


def response_text(spec: DomainSpec, tool: str, ref: str, item_id, item_name: str) -> str:
    ref = ref.lstrip("#")
    if item_id is None:
        return f"I have {spec.past(tool)} {spec.ref_label} {ref} for your {item_name.lower()}."
    return f"I have {spec.past(tool)} {spec.ref_label} {ref} item {item_id} {item_name.lower()}."


FALLBACK_RESPONSE = "I am sorry, I could not locate that request. Let me transfer you to a human agent."


def gold_oracle(task: SyntheticTask) -> dict:
    spec = task.domain
    return {
        1: Text(rewrite_text(spec, task.ref, spec.verb(task.gold_intent), task.item_name)),
        2: Intent(task.gold_intent, {f"{spec.ref_label}_id": task.ref, "item": task.item_name.lower()}),
        3: ToolCall(task.gold_tool, task.id_args),
        4: Text(response_text(spec, task.gold_tool, task.ref, task.item_id, task.item_name)),
    }
