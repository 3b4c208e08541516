"""Tagged module payloads.

Every module in a pipeline emits one of three payload kinds.  Keeping them
structured (instead of raw strings) lets the judge and the cascade analysis
compare intents and tool names directly, while ``render()`` keeps a plain-text
view for bag-of-words comparisons.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Union

TEXT = "text"
INTENT = "intent"
TOOL_CALL = "tool_call"

PAYLOAD_KINDS = (TEXT, INTENT, TOOL_CALL)


@dataclass(frozen=True)
class Text:
    text: str
    kind = TEXT

    def render(self) -> str:
        return self.text

    def to_json(self) -> dict:
        return {"kind": TEXT, "text": self.text}


@dataclass(frozen=True)
class Intent:
    intent: str
    slots: Mapping[str, str] = field(default_factory=dict)
    kind = INTENT

    def render(self) -> str:
        parts = [f"intent: {self.intent}"]
        parts += [f"{k}: {v}" for k, v in self.slots.items()]
        return "; ".join(parts)

    def to_json(self) -> dict:
        return {"kind": INTENT, "intent": self.intent, "slots": dict(self.slots)}


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: Mapping[str, str] = field(default_factory=dict)
    kind = TOOL_CALL

    def render(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in self.args.items())
        return f"{self.tool}({inner})"

    def to_json(self) -> dict:
        return {"kind": TOOL_CALL, "tool": self.tool, "args": dict(self.args)}


Payload = Union[Text, Intent, ToolCall]


def payload_from_json(data: Mapping[str, Any]) -> Payload:
    kind = data.get("kind")
    if kind == TEXT:
        return Text(str(data["text"]))
    if kind == INTENT:
        return Intent(str(data["intent"]), {str(k): str(v) for k, v in data.get("slots", {}).items()})
    if kind == TOOL_CALL:
        return ToolCall(str(data["tool"]), {str(k): str(v) for k, v in data.get("args", {}).items()})
    raise ValueError(f"unknown payload kind: {kind!r}")


def payload_key(payload: Payload) -> str:
    """Canonical serialization, used for equality checks and hashing."""
    return json.dumps(payload.to_json(), sort_keys=True, ensure_ascii=False)
