"""Client for a completions-style text generation endpoint, plus the text
evaluation pipeline it powers.

The wire shape is OpenAI-completions compatible (POST /v1/completions, API
key via Authorization: Bearer, per-token log-probabilities via echo +
logprobs) because that is the de-facto interop surface. A bundled mock
transport implements the same shape in-process, a recording transport
writes request/response pairs to an ndjson replay log, and a replay
transport serves a recorded log with zero network calls.

NLL values are in nats, matching single-word next-token losses of a few
nats.
"""

from __future__ import annotations

import datetime
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autocot import train_policy_logits
from .errors import (
    ConfigError,
    ContractError,
    EmptyPrunedPoolError,
    RequestError,
    ServiceError,
    TransportError,
    UnsupportedFeatureError,
)
from .rng import RngState

COMPLETIONS_PATH = "/v1/completions"

BACKOFF_BASE_S = 0.5
BACKOFF_FACTOR = 2.0
MAX_RETRIES_CAP = 5


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "ICLCOT_API_KEY"
    timeout_s: float = 30.0
    max_retries: int = 3
    in_flight: int = 4

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ContractError("timeout_s must be positive")
        if not 0 <= self.max_retries <= MAX_RETRIES_CAP:
            raise ContractError(f"max_retries must be in [0, {MAX_RETRIES_CAP}]")
        if self.in_flight < 1:
            raise ContractError("in_flight must be >= 1")


@dataclass(frozen=True)
class ScoredContinuation:
    text: str
    token_logprobs: tuple[float, ...]
    nll: float  # nats; equals -(sum of token log-probs)


# -- transports ----------------------------------------------------------------


class HttpTransport:
    """Live HTTP transport; constructed lazily so offline paths never need
    the requests import or the API key."""

    def __init__(self, cfg: LlmEndpointConfig):
        self.cfg = cfg
        self.api_key = os.environ.get(cfg.api_key_env)
        if not self.api_key:
            raise ConfigError(cfg.api_key_env, "environment variable not set")

    def send(self, payload: dict) -> tuple[int, dict]:
        import requests

        url = self.cfg.base_url.rstrip("/") + COMPLETIONS_PATH
        try:
            resp = requests.post(
                url,
                json=payload,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.cfg.timeout_s,
            )
        except requests.RequestException as exc:
            raise ConnectionError(str(exc)) from exc
        try:
            body = resp.json()
        except ValueError:
            body = {"raw": resp.text}
        return resp.status_code, body


_TOKEN_RE = re.compile(r"\S+")


def _mock_tokenize(text: str) -> list[tuple[str, int]]:
    """Whitespace tokens with their character offsets."""
    return [(m.group(0), m.start()) for m in _TOKEN_RE.finditer(text)]


class MockCompletionsTransport:
    """In-process endpoint implementing the completions wire shape.

    `logprob_for` maps a token string to its log-probability (default a
    constant -0.5, which makes chains carry no information). `statuses`
    scripts the HTTP status of successive calls; once exhausted, calls
    succeed.
    """

    def __init__(
        self,
        completion_text: str = "step: apply the layers in order.",
        logprob_for: Callable[[str], float] | None = None,
        statuses: Sequence[int] = (),
    ):
        self.completion_text = completion_text
        self.logprob_for = logprob_for or (lambda tok: -0.5)
        self._statuses = list(statuses)
        self.calls = 0

    def send(self, payload: dict) -> tuple[int, dict]:
        self.calls += 1
        if self._statuses:
            status = self._statuses.pop(0)
            if status != 200:
                return status, {"error": {"message": f"scripted status {status}"}}
        if payload.get("echo") and payload.get("logprobs") is not None:
            prompt = payload["prompt"]
            toks = _mock_tokenize(prompt)
            body = {
                "choices": [
                    {
                        "text": "",
                        "logprobs": {
                            "tokens": [t for t, _ in toks],
                            "token_logprobs": [self.logprob_for(t) for t, _ in toks],
                            "text_offset": [off for _, off in toks],
                        },
                    }
                ]
            }
            return 200, body
        return 200, {"choices": [{"text": self.completion_text}]}


class RecordingTransport:
    """Wraps a transport and appends {request, response, timestamp} lines
    to an ndjson replay log."""

    def __init__(self, inner, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")

    def send(self, payload: dict) -> tuple[int, dict]:
        status, body = self.inner.send(payload)
        entry = {
            "request": payload,
            "response": {"status": status, "body": body},
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
        return status, body


class ReplayTransport:
    """Serves a recorded replay log in order; any divergence from the
    recorded requests is an error. Makes zero network calls."""

    def __init__(self, path: str | Path):
        self.entries = [
            json.loads(line)
            for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        self._next = 0

    def send(self, payload: dict) -> tuple[int, dict]:
        if self._next >= len(self.entries):
            raise TransportError("replay log exhausted")
        entry = self.entries[self._next]
        self._next += 1
        if entry["request"] != payload:
            raise TransportError(
                f"replay mismatch at entry {self._next - 1}: request differs from log"
            )
        return entry["response"]["status"], entry["response"]["body"]


# -- client ----------------------------------------------------------------------


class LlmClient:
    """Thread-safe completions client with retry/backoff.

    Timeouts/connection failures and HTTP 5xx are retried with exponential
    backoff (base 0.5 s, factor 2, optional jitter from `jitter_rng`);
    HTTP 4xx fails immediately. At most `in_flight` requests run
    concurrently.
    """

    def __init__(
        self,
        cfg: LlmEndpointConfig,
        transport=None,
        sleeper: Callable[[float], None] = time.sleep,
        jitter_rng: RngState | None = None,
    ):
        self.cfg = cfg
        self.transport = transport if transport is not None else HttpTransport(cfg)
        self.sleeper = sleeper
        self.jitter_rng = jitter_rng
        self._gate = threading.Semaphore(cfg.in_flight)

    def _backoff(self, attempt: int) -> None:
        delay = BACKOFF_BASE_S * (BACKOFF_FACTOR ** attempt)
        if self.jitter_rng is not None:
            delay += 0.1 * delay * float(self.jitter_rng.uniform(1)[0])
        self.sleeper(delay)

    def _send_with_retry(self, payload: dict) -> dict:
        attempts = 0
        last_status: int | None = None
        while True:
            try:
                with self._gate:
                    status, body = self.transport.send(payload)
            except (ConnectionError, OSError) as exc:
                attempts += 1
                if attempts > self.cfg.max_retries:
                    raise TransportError(
                        f"transport failed after {attempts} attempts: {exc}"
                    ) from exc
                self._backoff(attempts - 1)
                continue
            if 200 <= status < 300:
                return body
            if 400 <= status < 500:
                raise RequestError(status, json.dumps(body)[:200])
            attempts += 1
            last_status = status
            if attempts > self.cfg.max_retries:
                raise ServiceError(attempts, last_status)
            self._backoff(attempts - 1)

    def complete(
        self, prompt: str, max_tokens: int = 64, temperature: float = 0.0
    ) -> str:
        """First completion choice for `prompt`, verbatim."""
        body = self._send_with_retry(
            {
                "model": self.cfg.model,
                "prompt": prompt,
                "max_tokens": max_tokens,
                "temperature": temperature,
            }
        )
        try:
            return body["choices"][0]["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise UnsupportedFeatureError(f"malformed completion response: {exc}") from exc

    def score_nll(self, context: str, continuation: str) -> ScoredContinuation:
        """NLL (nats) of `continuation` conditioned on `context`."""
        body = self._send_with_retry(
            {
                "model": self.cfg.model,
                "prompt": context + continuation,
                "max_tokens": 0,
                "echo": True,
                "logprobs": 0,
                "temperature": 0.0,
            }
        )
        try:
            choice = body["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise UnsupportedFeatureError(f"malformed scoring response: {exc}") from exc
        lp = choice.get("logprobs")
        if lp is None:
            raise UnsupportedFeatureError(
                "endpoint returned no log-probabilities (logprobs unsupported)"
            )
        boundary = len(context)
        picked = [
            p
            for p, off in zip(lp["token_logprobs"], lp["text_offset"])
            if off >= boundary
        ]
        if any(p is None for p in picked):
            raise UnsupportedFeatureError("endpoint withheld continuation log-probs")
        nll = -float(sum(picked)) if picked else 0.0
        return ScoredContinuation(
            text=continuation, token_logprobs=tuple(float(p) for p in picked), nll=nll
        )


# -- dataset & text pipeline -------------------------------------------------------


@dataclass(frozen=True)
class TextRecord:
    context: str
    target: str


def load_dataset(path: str | Path) -> list[TextRecord]:
    """UTF-8 file, one record per line: context_text<TAB>target_word."""
    records = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ConfigError(
                f"{path}:{lineno}",
                f"expected 'context<TAB>target', got {len(parts)} field(s)",
            )
        records.append(TextRecord(context=parts[0], target=parts[1]))
    return records


@dataclass
class TextEvalRow:
    context_len: int
    autocot_nll: float
    baseline_nll: float


def _plain_demo(r: TextRecord) -> str:
    return f"{r.context} {r.target}"


def _chained_demo(r: TextRecord, chain: str) -> str:
    return f"{r.context}\nreasoning: {chain}\nanswer: {r.target}"


def _chain_request(r: TextRecord) -> str:
    return (
        f"{r.context}\n"
        f"Explain step by step why the passage ends with '{r.target}'.\n"
        f"reasoning:"
    )


def text_pipeline_eval(
    client: LlmClient,
    records: Sequence[TextRecord],
    context_lengths: Sequence[int],
    epsilon: float,
    rng: RngState,
    pool_size: int = 8,
    batch_size: int = 4,
    epochs: int = 20,
    policy_lr: float = 0.5,
    chain_max_tokens: int = 48,
) -> list[TextEvalRow]:
    """Augment/prune/select over text demonstrations, then mean query NLL
    per context length for Auto-CoT vs the plain-demonstration baseline.

    The first `pool_size` records form the demonstration pool; the rest are
    queries (the pool doubles as queries when nothing is left). Pruning
    keeps demonstrations whose own-target NLL under their chain-augmented
    context is <= epsilon; the selection policy is the same machinery as
    the numeric pipeline with NLL as the loss.
    """
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    if not records:
        return []
    pool = list(records[: min(pool_size, len(records))])
    queries = list(records[len(pool):]) or pool

    chains = [
        client.complete(_chain_request(r), max_tokens=chain_max_tokens) for r in pool
    ]
    demo_losses = np.array(
        [
            client.score_nll(
                f"{r.context}\nreasoning: {chains[i]}\nanswer:", f" {r.target}"
            ).nll
            for i, r in enumerate(pool)
        ]
    )
    kept = [i for i, l in enumerate(demo_losses) if l <= epsilon]
    if not kept:
        raise EmptyPrunedPoolError(float(demo_losses.min()))
    logits, _ = train_policy_logits(
        demo_losses[kept],
        np.zeros(len(kept)),
        epochs,
        batch_size,
        policy_lr,
        rng.named("policy"),
    )
    ranked = [kept[i] for i in np.argsort(-logits, kind="stable")]

    rows = []
    for c in context_lengths:
        base_ctx = "\n\n".join(_plain_demo(r) for r in pool[:c])
        selected = ranked[: min(c, len(ranked))]
        auto_ctx = "\n\n".join(_chained_demo(pool[i], chains[i]) for i in selected)
        base_nlls = []
        auto_nlls = []
        for q in queries:
            base_nlls.append(
                client.score_nll(f"{base_ctx}\n\n{q.context}", f" {q.target}").nll
            )
            auto_nlls.append(
                client.score_nll(f"{auto_ctx}\n\n{q.context}", f" {q.target}").nll
            )
        rows.append(
            TextEvalRow(
                context_len=int(c),
                autocot_nll=float(np.mean(auto_nlls)),
                baseline_nll=float(np.mean(base_nlls)),
            )
        )
    return rows


def text_rows_to_markdown(rows: Sequence[TextEvalRow]) -> str:
    lines = [
        "| context_len | autocot_nll | baseline_nll |",
        "|---|---|---|",
    ]
    for r in rows:
        lines.append(f"| {r.context_len} | {r.autocot_nll:.4f} | {r.baseline_nll:.4f} |")
    return "\n".join(lines)
