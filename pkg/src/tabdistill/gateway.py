"""Uniform completion interface: a live chat-completions client, deterministic
scripted clients for offline runs, a persistent response cache, and a usage
ledger with per-token pricing.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import ConfigError, GatewayError, ScriptError
from .serialize import CURRENT_QUESTION_START, PromptText, estimate_tokens

SUMMARIZER = "summarizer"
PREDICTOR = "predictor"


class _NoAnswer:
    """Sentinel for model output containing no valid answer choice."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NoAnswer"

    def __bool__(self):
        return False


NO_ANSWER = _NoAnswer()


@dataclass(frozen=True)
class CompletionRequest:
    prompt: PromptText
    model_name: str
    role: str  # SUMMARIZER or PREDICTOR
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if self.role not in (SUMMARIZER, PREDICTOR):
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    input_tokens: int
    output_tokens: int
    cached: bool
    model_name: str
    role: str


def cache_key(req: CompletionRequest) -> str:
    """Stable digest of (model, temperature, prompt bytes)."""
    h = hashlib.sha256()
    h.update(req.model_name.encode("utf-8"))
    h.update(b"\x1f")
    h.update(repr(float(req.temperature)).encode("ascii"))
    h.update(b"\x1f")
    h.update(req.prompt.text.encode("utf-8"))
    return h.hexdigest()


def parse_answer(text: str, answer_choices: Sequence[str]):
    """Map raw model text to an answer choice or NO_ANSWER.

    Whole-word, case-insensitive scan. The earliest match position wins;
    matches starting at the same position prefer the longer choice, so
    "Very Good" beats its substring "Good".
    """
    best = None  # (position, -len, declared order, choice)
    for order, choice in enumerate(answer_choices):
        pattern = r"(?<!\w)" + re.escape(choice) + r"(?!\w)"
        m = re.search(pattern, text, flags=re.IGNORECASE)
        if m is None:
            continue
        key = (m.start(), -len(choice), order)
        if best is None or key < best[0]:
            best = (key, choice)
    return NO_ANSWER if best is None else best[1]


# --- scripted clients -------------------------------------------------------

_SENTENCE = re.compile(r"The (.+?) is (.+?)\.(?= The |$)")


def parse_query_features(prompt_text: str) -> dict[str, str]:
    """Recover feature name/value pairs from a classification prompt's
    current-question section. Raises ScriptError on template drift."""
    marker = prompt_text.find(CURRENT_QUESTION_START)
    if marker < 0:
        raise ScriptError("prompt has no current-question section")
    tail = prompt_text[marker + len(CURRENT_QUESTION_START) :].lstrip("\n")
    serialized = tail.split("\n\n", 1)[0].strip()
    pairs = {m.group(1): m.group(2) for m in _SENTENCE.finditer(serialized)}
    if not pairs:
        raise ScriptError(f"no feature sentences found in {serialized!r}")
    return pairs


_OPS: dict[str, Callable[[float, float], bool]] = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


@dataclass(frozen=True)
class ScriptedPolicy:
    """Deterministic response policy for offline runs.

    modes:
      fixed_text          -- always return ``text``.
      keyed_by_prompt_hash -- pick from ``texts`` by prompt digest (position
                              sensitive by construction).
      rule_on_features    -- evaluate ``rules`` against the feature values
                              parsed back out of the query section; first
                              matching rule answers, else ``default``.
    """

    mode: str
    text: str = ""
    texts: tuple[str, ...] = ()
    rules: tuple[dict, ...] = ()
    default: str = ""

    def __post_init__(self):
        if self.mode not in ("fixed_text", "keyed_by_prompt_hash", "rule_on_features"):
            raise ConfigError(f"unknown scripted mode {self.mode!r}")
        if self.mode == "keyed_by_prompt_hash" and not self.texts:
            raise ConfigError("keyed_by_prompt_hash needs a non-empty texts list")
        if self.mode == "rule_on_features" and not self.default:
            raise ConfigError("rule_on_features needs a default answer (must be total)")

    @classmethod
    def from_dict(cls, obj: dict) -> "ScriptedPolicy":
        return cls(
            mode=obj.get("mode", ""),
            text=obj.get("text", ""),
            texts=tuple(obj.get("texts", ())),
            rules=tuple(obj.get("rules", ())),
            default=obj.get("default", ""),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedPolicy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def respond(self, prompt_text: str) -> str:
        if self.mode == "fixed_text":
            return self.text
        if self.mode == "keyed_by_prompt_hash":
            digest = int(hashlib.sha256(prompt_text.encode("utf-8")).hexdigest(), 16)
            return self.texts[digest % len(self.texts)]
        features = parse_query_features(prompt_text)
        for rule in self.rules:
            name = rule["feature"]
            if name not in features:
                raise ScriptError(f"rule feature {name!r} absent from query features")
            if self._matches(rule, features[name]):
                return rule["answer"]
        return self.default

    @staticmethod
    def _matches(rule: dict, raw: str) -> bool:
        op = _OPS.get(rule.get("op", "=="))
        if op is None:
            raise ConfigError(f"unknown rule op {rule.get('op')!r}")
        target = rule["value"]
        try:
            return op(float(raw), float(target))
        except (TypeError, ValueError):
            if rule.get("op", "==") not in ("==", "!="):
                raise ScriptError(
                    f"non-numeric value {raw!r} under numeric op {rule.get('op')!r}"
                )
            return (raw == str(target)) == (rule.get("op", "==") == "==")


class ScriptedClient:
    """Pure deterministic client; counts calls for test instrumentation."""

    def __init__(self, policy: ScriptedPolicy):
        self.policy = policy
        self.call_count = 0
        self.calls_by_role: dict[str, int] = {}

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        self.call_count += 1
        self.calls_by_role[req.role] = self.calls_by_role.get(req.role, 0) + 1
        text = self.policy.respond(req.prompt.text)
        return CompletionResponse(
            text=text,
            input_tokens=req.prompt.token_estimate,
            output_tokens=estimate_tokens(text),
            cached=False,
            model_name=req.model_name,
            role=req.role,
        )


class LiveClient:
    """Chat-completions JSON over HTTPS; single user message, first choice.

    ``transport`` is injectable for tests: a callable (url, headers, payload)
    -> response dict. The default posts with ``requests``. Transient failures
    retry with exponential backoff up to ``max_retries`` attempts.
    """

    def __init__(
        self,
        endpoint: str,
        api_key_env: str = "LLM_API_KEY",
        max_retries: int = 3,
        backoff_seconds: float = 1.0,
        timeout_seconds: float = 60.0,
        transport: Callable[[str, dict, dict], dict] | None = None,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self.timeout_seconds = timeout_seconds
        self._transport = transport or self._post

    def _post(self, url: str, headers: dict, payload: dict) -> dict:
        import requests

        resp = requests.post(url, headers=headers, json=payload, timeout=self.timeout_seconds)
        if resp.status_code >= 500:
            raise GatewayError(f"server error {resp.status_code}")
        resp.raise_for_status()
        return resp.json()

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise ConfigError(f"environment variable {self.api_key_env} not set")
        headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
        payload = {
            "model": req.model_name,
            "messages": [{"role": "user", "content": req.prompt.text}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                body = self._transport(self.endpoint, headers, payload)
                text = body["choices"][0]["message"]["content"]
                usage = body.get("usage", {})
                return CompletionResponse(
                    text=text,
                    input_tokens=int(usage.get("prompt_tokens", req.prompt.token_estimate)),
                    output_tokens=int(usage.get("completion_tokens", estimate_tokens(text))),
                    cached=False,
                    model_name=req.model_name,
                    role=req.role,
                )
            except (GatewayError, OSError, KeyError, ValueError) as e:
                last_error = e
                if attempt + 1 < self.max_retries:
                    time.sleep(self.backoff_seconds * (2**attempt))
        raise GatewayError(f"completion failed after {self.max_retries} attempts: {last_error}")


# --- usage accounting -------------------------------------------------------


@dataclass
class RoleUsage:
    requests: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    cost_usd: float = 0.0
    cache_hits: int = 0


@dataclass
class UsageLedger:
    roles: dict[str, RoleUsage] = field(default_factory=dict)

    def usage(self, role: str) -> RoleUsage:
        return self.roles.setdefault(role, RoleUsage())

    @property
    def total_cost_usd(self) -> float:
        return sum(u.cost_usd for u in self.roles.values())

    def to_json(self) -> dict:
        return {
            role: {
                "requests": u.requests,
                "input_tokens": u.input_tokens,
                "output_tokens": u.output_tokens,
                "cost_usd": u.cost_usd,
                "cache_hits": u.cache_hits,
            }
            for role, u in sorted(self.roles.items())
        }


def tally(ledger: UsageLedger, response: CompletionResponse, price_table: dict) -> UsageLedger:
    """Record one response. Cache hits add a request and a hit but no tokens
    or cost; live responses cost input*p_in + output*p_out."""
    usage = ledger.usage(response.role)
    usage.requests += 1
    if response.cached:
        usage.cache_hits += 1
        return ledger
    prices = price_table.get(response.model_name)
    if prices is None:
        raise ConfigError(f"no price table entry for model {response.model_name!r}")
    usage.input_tokens += response.input_tokens
    usage.output_tokens += response.output_tokens
    usage.cost_usd += (
        response.input_tokens * float(prices["input"])
        + response.output_tokens * float(prices["output"])
    )
    return ledger


# --- cache + gateway --------------------------------------------------------


class Gateway:
    """Client wrapper adding an optional on-disk response cache and ledger
    accounting. Cache records are one JSON file per key, written atomically;
    cached responses carry their original token counts."""

    def __init__(
        self,
        client,
        ledger: UsageLedger | None = None,
        price_table: dict | None = None,
        cache_dir: str | Path | None = None,
    ):
        self.client = client
        self.ledger = ledger
        self.price_table = price_table or {}
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _cache_path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        key = cache_key(req)
        if self.cache_dir:
            path = self._cache_path(key)
            if path.exists():
                record = json.loads(path.read_text(encoding="utf-8"))
                response = CompletionResponse(
                    text=record["text"],
                    input_tokens=record["input_tokens"],
                    output_tokens=record["output_tokens"],
                    cached=True,
                    model_name=record["model_name"],
                    role=req.role,
                )
                if self.ledger is not None:
                    tally(self.ledger, response, self.price_table)
                return response
        response = self.client.complete(req)
        if self.cache_dir:
            record = {
                "key": key,
                "text": response.text,
                "input_tokens": response.input_tokens,
                "output_tokens": response.output_tokens,
                "model_name": response.model_name,
            }
            tmp = self._cache_path(key).with_suffix(".tmp")
            tmp.write_text(json.dumps(record, ensure_ascii=False), encoding="utf-8")
            os.replace(tmp, self._cache_path(key))
        if self.ledger is not None:
            tally(self.ledger, response, self.price_table)
        return response
