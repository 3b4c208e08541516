"""Backend contract: simulated or chat-completion endpoints, plus the oracle cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Mapping, Optional

from .payloads import INTENT, TEXT, TOOL_CALL, Intent, Payload, Text, ToolCall, payload_from_json, payload_key
from .pipeline import ModuleCall, Task
from .scoring import SeverityVector, clamp_severity

logger = logging.getLogger(__name__)

MAX_RETRIES = 3


class BackendError(RuntimeError):
    pass


class TransientBackendError(BackendError):
    pass


class AuthError(BackendError):
    pass


class MalformedResponseError(BackendError):
    pass


class RetriesExhaustedError(BackendError):
    pass


@dataclass(frozen=True)
class BackendSpec:
    kind: str = "simulated"
    endpoint_url: str = ""
    model_name: str = "echo"
    temperature: float = 0.0
    max_concurrency: int = 4
    auth_token_env: str = ""
    text_path: str = "choices.0.message.content"
    timeout: float = 60.0
    backoff: float = 0.5

    def __post_init__(self):
        if self.kind not in ("simulated", "external"):
            raise ValueError(f"kind must be 'simulated' or 'external', got {self.kind!r}")
        if self.kind == "external" and not self.endpoint_url:
            raise ValueError("external backend needs endpoint_url")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data) -> "BackendSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown backend fields: {sorted(unknown)}")
        return cls(**data)


# simulated completions: model_name -> fn(system_text, user_text, seed) -> text
SIMULATED: dict = {}


def register_simulated(name: str, fn: Callable[[str, str, int], str]) -> None:
    SIMULATED[name] = fn


def _echo(system_text: str, user_text: str, seed: int) -> str:
    digest = hashlib.blake2b(f"{seed}|{system_text}|{user_text}".encode(), digest_size=4).hexdigest()
    return f"{user_text} [{digest}]"


register_simulated("echo", _echo)

_semaphores: dict = {}
_sem_lock = threading.Lock()


def _semaphore(spec: BackendSpec) -> threading.Semaphore:
    key = (spec.endpoint_url, spec.model_name, spec.max_concurrency)
    with _sem_lock:
        if key not in _semaphores:
            _semaphores[key] = threading.BoundedSemaphore(spec.max_concurrency)
        return _semaphores[key]


def extract_path(body, path: str):
    """Follow a dotted path (list indices as integers) into a decoded JSON body."""
    cur = body
    for part in path.split("."):
        try:
            cur = cur[int(part)] if isinstance(cur, list) else cur[part]
        except (KeyError, IndexError, ValueError, TypeError):
            raise MalformedResponseError(f"response has no field at {path!r}") from None
    if not isinstance(cur, str):
        raise MalformedResponseError(f"field at {path!r} is not text")
    return cur


def _post(spec: BackendSpec, payload: dict) -> dict:
    headers = {"Content-Type": "application/json"}
    if spec.auth_token_env:
        token = os.environ.get(spec.auth_token_env)
        if not token:
            raise AuthError(f"environment variable {spec.auth_token_env} is not set")
        headers["Authorization"] = f"Bearer {token}"
    req = urllib.request.Request(spec.endpoint_url, json.dumps(payload).encode("utf-8"), headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=spec.timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        if exc.code in (401, 403):
            raise AuthError(f"endpoint rejected credentials (HTTP {exc.code})") from None
        if exc.code == 429 or exc.code >= 500:
            raise TransientBackendError(f"HTTP {exc.code}") from None
        raise BackendError(f"HTTP {exc.code}") from None
    except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
        raise TransientBackendError(str(exc)) from None
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise MalformedResponseError("response body is not JSON") from None


def complete(spec: BackendSpec, system_text: str, user_text: str, seed: int = 0,
             sleep: Callable[[float], None] = time.sleep) -> str:
    if spec.kind == "simulated":
        fn = SIMULATED.get(spec.model_name)
        if fn is None:
            raise BackendError(f"no simulated backend named {spec.model_name!r}")
        return fn(system_text, user_text, seed)
    body = {"model": spec.model_name, "temperature": spec.temperature, "seed": seed,
            "messages": [{"role": "system", "content": system_text}, {"role": "user", "content": user_text}]}
    with _semaphore(spec):
        for attempt in range(MAX_RETRIES + 1):
            try:
                return extract_path(_post(spec, body), spec.text_path)
            except TransientBackendError as exc:
                if attempt == MAX_RETRIES:
                    raise RetriesExhaustedError(f"gave up after {MAX_RETRIES} retries: {exc}") from None
                delay = spec.backoff * 2 ** attempt
                logger.warning("transient failure from %s (%s); retry %d in %.2fs",
                               spec.endpoint_url, exc, attempt + 1, delay)
                sleep(delay)
    raise AssertionError("unreachable")


# -- payload parsing for structured modules ---------------------------------

_JSON_OBJ = re.compile(r"\{.*\}", re.S)


def parse_payload(text: str, kind: str) -> Payload:
    """Interpret completion text as a payload of the slot's kind."""
    if kind == TEXT:
        return Text(text.strip())
    m = _JSON_OBJ.search(text)
    if m is None:
        raise MalformedResponseError(f"expected a JSON object for a {kind} payload")
    try:
        data = json.loads(m.group(0))
    except json.JSONDecodeError:
        raise MalformedResponseError(f"unparseable JSON for a {kind} payload") from None
    if kind == INTENT:
        return Intent(str(data.get("intent", "")), {str(k): str(v) for k, v in dict(data.get("slots", {})).items()})
    if kind == TOOL_CALL:
        return ToolCall(str(data.get("tool", "")), {str(k): str(v) for k, v in dict(data.get("args", {})).items()})
    raise ValueError(f"unknown payload kind {kind!r}")


class ExternalModuleBackend:
    """One pipeline module served by ``complete``.

    The patch block, if any, is appended to the system text; instructions and
    schema stay as given.
    """

    serial = False

    def __init__(self, spec: BackendSpec, system_text: str):
        self.spec = spec
        self.system_text = system_text

    def __call__(self, call: ModuleCall) -> Payload:
        system = self.system_text
        if call.patch is not None and call.patch.rendered_block:
            system = f"{system}\n\nCorrections from past failures:\n\n{call.patch.rendered_block}"
        lines = [f"User query: {call.task.user_query}"]
        lines += [f"M{j} output: {p.render()}" for j, p in enumerate(call.upstream, start=1)]
        text = complete(self.spec, system, "\n".join(lines), call.seed)
        return parse_payload(text, call.slot.output_kind)


_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


class ExternalJudge:
    """Severity judge served by ``complete``; reads the first number in the reply."""

    serial = False

    def __init__(self, spec: BackendSpec, system_text: str = "Rate the severity of the error in [0, 1].",
                 tag: str = "external"):
        self.spec = spec
        self.system_text = system_text
        self.tag = tag

    def score(self, payload: Payload, gold: Payload, seed: int = 0) -> float:
        reply = complete(self.spec, self.system_text,
                         f"Output: {payload.render()}\nReference: {gold.render()}", seed)
        m = _NUMBER.search(reply)
        if m is None:
            raise MalformedResponseError("judge reply has no severity number")
        return clamp_severity(float(m.group(0)))

    def __call__(self, episode, oracle) -> SeverityVector:
        return SeverityVector(tuple(self.score(o.payload, oracle[o.module_index], episode.seed)
                                    for o in episode.outputs), self.tag)


# -- oracle cache ------------------------------------------------------------

class OracleCacheSealedError(RuntimeError):
    pass


class OracleCache:
    """Write-once JSONL store of oracle payloads keyed by (task_id, module_index).

    Sealing writes a sidecar file with the content hash; a sealed cache refuses
    every write, and reopening it from disk keeps it sealed.
    """

    def __init__(self, path, source_tag: str = "oracle"):
        self.path = Path(path)
        self.source_tag = source_tag
        self._data: dict = {}
        self._lock = threading.Lock()
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._data[(rec["task_id"], int(rec["module_index"]))] = payload_from_json(rec["payload"])
                    self.source_tag = rec.get("source_tag", self.source_tag)
        self._sealed_hash = None
        if self.seal_path.exists():
            self._sealed_hash = json.loads(self.seal_path.read_text(encoding="utf-8"))["content_hash"]

    @property
    def seal_path(self) -> Path:
        return self.path.with_name(self.path.name + ".seal")

    @property
    def sealed(self) -> bool:
        return self._sealed_hash is not None

    def __len__(self):
        return len(self._data)

    def __contains__(self, key) -> bool:
        return key in self._data

    def get(self, task_id: str, module_index: int) -> Optional[Payload]:
        return self._data.get((task_id, module_index))

    def put(self, task_id: str, module_index: int, payload: Payload) -> None:
        with self._lock:
            if self.sealed:
                raise OracleCacheSealedError("oracle cache sealed")
            key = (task_id, module_index)
            old = self._data.get(key)
            if old is not None:
                if payload_key(old) != payload_key(payload):
                    raise ValueError(f"oracle cache is write-once; {key} already holds a different payload")
                return
            self._data[key] = payload
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"task_id": task_id, "module_index": module_index,
                                     "source_tag": self.source_tag, "payload": payload.to_json()},
                                    sort_keys=True, ensure_ascii=False) + "\n")

    def oracle_set(self, task_id: str, k: int) -> dict:
        out = {i: self.get(task_id, i) for i in range(1, k + 1)}
        missing = [i for i, p in out.items() if p is None]
        if missing:
            raise KeyError(f"oracle cache has no entry for {task_id!r} modules {missing}")
        return out

    @property
    def content_hash(self) -> str:
        h = hashlib.sha256()
        for (tid, i), p in sorted(self._data.items()):
            h.update(f"{tid}\t{i}\t{payload_key(p)}\n".encode("utf-8"))
        return h.hexdigest()

    def seal(self) -> str:
        with self._lock:
            digest = self.content_hash
            self.seal_path.write_text(json.dumps({"content_hash": digest, "entries": len(self._data),
                                                  "source_tag": self.source_tag}, sort_keys=True),
                                      encoding="utf-8")
            self._sealed_hash = digest
            return digest

    def verify(self) -> None:
        """Raise if a sealed cache's content no longer matches its seal."""
        if self.sealed and self.content_hash != self._sealed_hash:
            raise OracleCacheSealedError("oracle cache content changed after sealing")


def oracle_get_or_fill(cache: OracleCache, task: Task, module_index: int,
                       oracle_backend: Callable[[Task, int], Payload]) -> Payload:
    hit = cache.get(task.task_id, module_index)
    if hit is not None:
        return hit
    if cache.sealed:
        raise OracleCacheSealedError(f"oracle cache sealed: no entry for ({task.task_id!r}, {module_index})")
    payload = oracle_backend(task, module_index)
    cache.put(task.task_id, module_index, payload)
    return payload


def fill_oracles(cache: OracleCache, tasks, oracle_backend: Callable[[Task, int], Payload], k: int) -> dict:
    return {t.task_id: {i: oracle_get_or_fill(cache, t, i, oracle_backend) for i in range(1, k + 1)} for t in tasks}


def gold_backend(task, module_index: int) -> Payload:
    """Oracle backend for synthetic tasks."""
    from .simulator.domain import gold_oracle

    return gold_oracle(task)[module_index]


def load_backend_spec(data: Optional[Mapping]) -> BackendSpec:
    return BackendSpec() if not data else BackendSpec.from_json(data)
