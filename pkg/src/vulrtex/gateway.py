"""Chat-completion access with token logprobs, plus a deterministic stub.

The stub backend answers from a rule table (regex over the prompt) so the
whole pipeline can run offline and byte-reproducibly; the HTTP backend talks
a generic chat-completion JSON protocol and is configured, never hard-coded.
"""

from __future__ import annotations

import json
import math
import os
import re
import threading
import time
import urllib.error
import urllib.request
import zlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    BackendRejected,
    GatewayExhausted,
    LogprobsUnavailable,
    NoLabelToken,
    RateLimited,
    TransportError,
)

DEFAULT_TEMPERATURE = 0.3


@dataclass
class LlmRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = 512
    want_logprobs: bool = False
    seed: int | None = None


@dataclass
class LlmResponse:
    text: str
    top_token_logprobs: list[dict[str, float]] | None
    backend: str
    latency_seconds: float = 0.0


@dataclass
class StubRule:
    pattern: str
    response_text: str
    first_token_logprobs: dict[str, float] | None = None

    def __post_init__(self):
        self._compiled = re.compile(self.pattern, re.DOTALL)


class StubBackend:
    """Rule-table backend: first regex matching the prompt wins.

    Responses may use backreferences (\\1 etc.) into the matched pattern.
    With jitter > 0 the logprobs get a deterministic perturbation derived
    from (seed, prompt), which lets repeated-run averaging exercise distinct
    scores while staying reproducible.
    """

    name = "stub"

    def __init__(self, rules: list[StubRule], jitter: float = 0.0):
        self.rules = list(rules)
        self.jitter = float(jitter)

    @classmethod
    def from_file(cls, path: str | Path, jitter: float = 0.0) -> "StubBackend":
        rules = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            rules.append(StubRule(d["pattern"], d["response_text"],
                                  d.get("first_token_logprobs")))
        return cls(rules, jitter=jitter)

    def complete(self, req: LlmRequest) -> LlmResponse:
        prompt = req.system_prompt + "\n" + req.user_prompt
        for rule in self.rules:
            m = rule._compiled.search(prompt)
            if m is None:
                continue
            text = m.expand(rule.response_text)
            logprobs = None
            if req.want_logprobs:
                if rule.first_token_logprobs is None:
                    raise LogprobsUnavailable(f"stub rule {rule.pattern!r} has no logprobs")
                first = dict(rule.first_token_logprobs)
                if self.jitter > 0.0:
                    first = {t: lp + self._jitter_for(req.seed, prompt, t)
                             for t, lp in first.items()}
                logprobs = [first]
            return LlmResponse(text=text, top_token_logprobs=logprobs, backend=self.name)
        raise BackendRejected("no stub rule matches the prompt")

    def _jitter_for(self, seed: int | None, prompt: str, token: str) -> float:
        basis = f"{seed}\x00{token}\x00{prompt}".encode("utf-8")
        # crc32 -> uniform in [-jitter, +jitter], stable across runs/platforms
        u = zlib.crc32(basis) / 0xFFFFFFFF
        return (2.0 * u - 1.0) * self.jitter


class HttpBackend:
    """Generic chat-completion JSON endpoint (messages array + logprobs flag)."""

    name = "http"

    def __init__(self, endpoint_url: str, model_name: str,
                 api_key_env_var: str = "", timeout: float = 60.0):
        self.endpoint_url = endpoint_url
        self.model_name = model_name
        self.api_key_env_var = api_key_env_var
        self.timeout = timeout

    def complete(self, req: LlmRequest) -> LlmResponse:
        payload: dict = {
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.want_logprobs:
            payload["logprobs"] = True
            payload["top_logprobs"] = 20
        if req.seed is not None:
            payload["seed"] = req.seed
        headers = {"Content-Type": "application/json"}
        if self.api_key_env_var:
            key = os.environ.get(self.api_key_env_var, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        request = urllib.request.Request(
            self.endpoint_url, data=json.dumps(payload).encode("utf-8"),
            headers=headers, method="POST")
        start = time.monotonic()
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code == 429:
                raise RateLimited(f"backend returned 429: {exc.reason}") from exc
            if 400 <= exc.code < 500:
                raise BackendRejected(f"backend returned {exc.code}: {exc.reason}") from exc
            raise TransportError(f"backend returned {exc.code}: {exc.reason}") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise TransportError(str(exc)) from exc
        elapsed = time.monotonic() - start
        choice = body["choices"][0]
        text = choice["message"]["content"]
        logprobs = None
        if req.want_logprobs:
            try:
                content = choice["logprobs"]["content"]
                logprobs = [{alt["token"]: float(alt["logprob"])
                             for alt in pos["top_logprobs"]} for pos in content]
            except (KeyError, TypeError) as exc:
                raise LogprobsUnavailable("response carries no logprobs") from exc
        return LlmResponse(text=text, top_token_logprobs=logprobs,
                           backend=self.name, latency_seconds=elapsed)


@dataclass
class GatewayConfig:
    backend: str = "stub"
    endpoint_url: str = ""
    api_key_env_var: str = "VULRTEX_API_KEY"
    model_name: str = ""
    temperature: float = DEFAULT_TEMPERATURE
    max_retries: int = 3
    deadline_seconds: float = 120.0
    concurrency_limit: int = 4
    stub_rules_path: str = ""
    stub_jitter: float = 0.0


class Gateway:
    """Retrying, concurrency-limited front over one backend."""

    def __init__(self, backend, max_retries: int = 3, deadline_seconds: float = 120.0,
                 concurrency_limit: int = 4, backoff_base: float = 0.5):
        self.backend = backend
        self.max_retries = max_retries
        self.deadline_seconds = deadline_seconds
        self.backoff_base = backoff_base
        self._sem = threading.BoundedSemaphore(concurrency_limit)
        self.calls = 0

    def complete(self, req: LlmRequest) -> LlmResponse:
        start = time.monotonic()
        last_error: Exception | None = None
        with self._sem:
            for attempt in range(self.max_retries + 1):
                if time.monotonic() - start > self.deadline_seconds:
                    break
                try:
                    self.calls += 1
                    return self.backend.complete(req)
                except (TransportError, RateLimited) as exc:
                    last_error = exc
                    if attempt < self.max_retries:
                        time.sleep(min(self.backoff_base * 2 ** attempt,
                                       self.deadline_seconds / 4))
        raise GatewayExhausted(f"gave up after retries: {last_error}")


def make_gateway(cfg: GatewayConfig) -> Gateway:
    if cfg.backend == "stub":
        if not cfg.stub_rules_path:
            raise BackendRejected("stub backend needs stub_rules_path")
        backend = StubBackend.from_file(cfg.stub_rules_path, jitter=cfg.stub_jitter)
    elif cfg.backend == "http":
        backend = HttpBackend(cfg.endpoint_url, cfg.model_name, cfg.api_key_env_var)
    else:
        raise BackendRejected(f"unknown backend {cfg.backend!r}")
    return Gateway(backend, max_retries=cfg.max_retries,
                   deadline_seconds=cfg.deadline_seconds,
                   concurrency_limit=cfg.concurrency_limit)


_YES = "yes"
_NO = "no"


def yes_probability(resp: LlmResponse) -> float:
    """Two-way softmax over the Yes/No tokens at the first output position.

    Token matching is case-insensitive and ignores surrounding whitespace, so
    " Yes" and "yes" both count. When only one label token is present, the
    other side falls back to the smallest logprob in the map.
    """
    if not resp.top_token_logprobs:
        raise NoLabelToken("response carries no first-position logprobs")
    first = resp.top_token_logprobs[0]
    if not first:
        raise NoLabelToken("empty logprob map at position 0")
    lp_yes: float | None = None
    lp_no: float | None = None
    for token, lp in first.items():
        label = token.strip().lower()
        if label == _YES:
            lp_yes = lp if lp_yes is None else max(lp_yes, lp)
        elif label == _NO:
            lp_no = lp if lp_no is None else max(lp_no, lp)
    if lp_yes is None and lp_no is None:
        raise NoLabelToken("neither label token present at position 0")
    floor = min(first.values())
    if lp_yes is None:
        lp_yes = floor
    if lp_no is None:
        lp_no = floor
    # numerically stable two-way softmax; exactly shift-invariant in exact
    # arithmetic and well within 1e-9 in floats
    return 1.0 / (1.0 + math.exp(lp_no - lp_yes))
