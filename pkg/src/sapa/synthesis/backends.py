"""Chat backends: OpenAI-compatible HTTP and a deterministic mock.

A backend exposes ``kind``, ``backend_id`` (part of every cache key) and
``chat(prompt, person_id=None) -> str``.  ``person_id`` is only consumed by
test doubles that need to know whose record they are answering for.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from typing import Protocol

import httpx

from sapa.dimensions import LATENT_DIMENSIONS, PROMPT_NAMES
from sapa.synthesis.prompts import PromptPair

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """Transport-level failure after the backend's own retries."""


class SynthesisBackend(Protocol):
    kind: str
    backend_id: str

    def chat(self, prompt: PromptPair, person_id: str | None = None) -> str: ...


class HttpBackend:
    """Chat-completions client (``POST {base_url}/chat/completions``) with bearer auth."""

    kind = "http"

    def __init__(self, model, base_url="https://api.openai.com/v1", api_key_env="OPENAI_API_KEY",
                 timeout=60.0, max_retries=3, backoff=1.0, transport=None):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff = backoff
        self._client = httpx.Client(timeout=timeout, transport=transport)

    @property
    def backend_id(self):
        return f"http:{self.base_url}:{self.model}"

    def payload(self, prompt: PromptPair):
        messages = []
        if prompt.system_text:
            messages.append({"role": "system", "content": prompt.system_text})
        messages.append({"role": "user", "content": prompt.user_text})
        return {"model": self.model, "messages": messages, "temperature": prompt.temperature}

    def chat(self, prompt: PromptPair, person_id=None) -> str:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.post(f"{self.base_url}/chat/completions", json=self.payload(prompt),
                                         headers=headers)
                if resp.status_code in (429, 500, 502, 503, 504):
                    raise httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last = exc
                log.warning("chat request failed (attempt %d): %s", attempt + 1, exc)
                if attempt < self.max_retries and self.backoff > 0:
                    time.sleep(self.backoff * 2**attempt)
        raise BackendError(f"chat request failed after {self.max_retries + 1} attempts: {last}")

    def close(self):
        self._client.close()


_MOCK_TAGS = (
    "tech-savvy", "cost-conscious", "urban", "time-efficient", "flexible", "car-dependent",
    "eco-minded", "planner", "spontaneous", "comfort-seeking", "transit-rider", "active-traveler",
)
_MOCK_MOTIVATIONS = (
    "Time-sensitive professional", "Budget-minded commuter", "Comfort and convenience driven",
    "Environmentally conscious explorer", "Flexible urban traveler",
)


class MockBackend:
    """Deterministic pseudo-responses derived from a hash of (seed, prompt)."""

    kind = "mock"

    def __init__(self, seed=0):
        self.seed = seed

    @property
    def backend_id(self):
        return f"mock:{self.seed}"

    def _digest(self, prompt: PromptPair):
        return hashlib.sha256(str(self.seed).encode() + b"\x00" + prompt.digest_bytes()).digest()

    def chat(self, prompt: PromptPair, person_id=None) -> str:
        h = self._digest(prompt)
        if prompt.purpose == "persona":
            n_tags = 3 + h[0] % 3
            tags = []
            for i in range(1, 40):
                tag = _MOCK_TAGS[h[i % len(h)] % len(_MOCK_TAGS)]
                if tag not in tags:
                    tags.append(tag)
                if len(tags) == n_tags:
                    break
            return json.dumps({
                "primary_motivation": _MOCK_MOTIVATIONS[h[1] % len(_MOCK_MOTIVATIONS)],
                "behavioral_tags": tags,
                "brief_justification": "Inferred from the household and neighborhood profile.",
            })
        body = {
            PROMPT_NAMES[dim]: {"score": 1 + h[i] % 10, "justification": "Derived from the persona."}
            for i, dim in enumerate(LATENT_DIMENSIONS)
        }
        return json.dumps(body)
