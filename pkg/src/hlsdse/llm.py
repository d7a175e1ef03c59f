"""Chat-completion wire client with schema-checked replies and canned replay.

Requests use the common chat shape::

    {"model": ..., "messages": [{"role": "system", ...}, {"role": "user", ...}],
     "temperature": ...}

and responses are read from ``choices[0].message.content`` with token counts
from ``usage.prompt_tokens`` / ``usage.completion_tokens`` when present.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import SchemaViolation, TransportError

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "HLSDSE_API_KEY"

_FENCE_RE = re.compile(r"```[ \t]*([A-Za-z]*)[ \t]*\n(.*?)```", re.S)


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


def request_key(request: dict) -> str:
    blob = json.dumps(request, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:24]


class HttpTransport:
    """POST requests to an OpenAI-compatible chat completions endpoint."""

    def __init__(self, endpoint: str, api_key_env: str = DEFAULT_API_KEY_ENV,
                 timeout: float = 120.0):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout

    def send(self, request: dict) -> dict:
        import httpx

        key = os.environ.get(self.api_key_env)
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = httpx.post(self.endpoint, json=request, headers=headers, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise TransportError(f"request to {self.endpoint} failed: {exc}") from exc
        if resp.status_code >= 400:
            raise TransportError(f"{self.endpoint} answered {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError("response body is not JSON") from exc


class CannedTransport:
    """Replay responses stored as ``<request_key>.json`` files in a directory."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def send(self, request: dict) -> dict:
        path = self.directory / f"{request_key(request)}.json"
        if not path.exists():
            raise TransportError(f"no canned response {path.name}")
        return json.loads(path.read_text(encoding="utf-8"))


class RecordingTransport:
    """Forward to another transport and store every response for later replay."""

    def __init__(self, inner, directory):
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def send(self, request: dict) -> dict:
        response = self.inner.send(request)
        with self._lock:
            path = self.directory / f"{request_key(request)}.json"
            path.write_text(json.dumps(response, indent=1, sort_keys=True), encoding="utf-8")
        return response


def extract_block(text: str) -> dict:
    """The single fenced JSON block of a reply; prose around it is ignored."""
    blocks = _FENCE_RE.findall(text or "")
    if len(blocks) != 1:
        raise SchemaViolation(f"expected exactly one fenced block, found {len(blocks)}")
    try:
        data = json.loads(blocks[0][1])
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"fenced block is not JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise SchemaViolation("fenced block must hold an object")
    return data


def fence(data: dict) -> str:
    return "```json\n" + json.dumps(data, sort_keys=True) + "\n```"


@dataclass
class CallOutcome:
    reply: dict | None
    input_tokens: int
    output_tokens: int
    attempts: int
    fallback: bool
    error: str = ""


class ReasonerClient:
    """One request per attempt; up to ``retries`` extra attempts on bad replies."""

    def __init__(self, transport, model: str = "gpt-4o", temperature: float = 0.0,
                 retries: int = 2):
        self.transport = transport
        self.model = model
        self.temperature = temperature
        self.retries = retries

    def build_request(self, system: str, user: str) -> dict:
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.temperature,
        }

    def call(self, system: str, user: str, validate=None) -> CallOutcome:
        tokens_in = tokens_out = 0
        error = ""
        for attempt in range(1, self.retries + 2):
            prompt = user
            if attempt > 1:
                prompt = (f"{user}\n\nAttempt {attempt}: the previous reply was rejected "
                          f"({error}). Answer with exactly one fenced JSON block.")
            request = self.build_request(system, prompt)
            try:
                response = self.transport.send(request)
                content = response["choices"][0]["message"]["content"] or ""
            except TransportError as exc:
                error = str(exc)
                tokens_in += estimate_tokens(system + prompt)
                continue
            except (KeyError, IndexError, TypeError) as exc:
                error = f"malformed response envelope: {exc!r}"
                tokens_in += estimate_tokens(system + prompt)
                continue
            usage = response.get("usage") or {}
            tokens_in += int(usage.get("prompt_tokens", estimate_tokens(system + prompt)))
            tokens_out += int(usage.get("completion_tokens", estimate_tokens(content)))
            try:
                data = extract_block(content)
                reply = validate(data) if validate is not None else data
            except SchemaViolation as exc:
                error = str(exc)
                continue
            return CallOutcome(reply, tokens_in, tokens_out, attempt, False)
        log.warning("reasoner gave no usable reply after %d attempts: %s", self.retries + 1, error)
        return CallOutcome(None, tokens_in, tokens_out, self.retries + 1, True, error)
