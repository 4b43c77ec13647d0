"""HTTP client for a chat-style inference server.

Wire format (POST, JSON)::

    {"model": ..., "messages": [{"role": ..., "content": [
        {"type": "text", "text": ...} | {"type": "image", "data": <base64 or URL>}]}],
     "max_tokens": ..., "temperature": ..., "logprobs": bool}

Response: ``{"text": ..., "logprobs": [[token, logprob], ...]}`` (logprobs optional).
"""

from __future__ import annotations

import base64
import logging
import os
import threading
import time
from pathlib import Path
from typing import Any, Optional

import httpx

from ..promptseq import ImagePart, TextPart
from .base import (BackendError, BackendTimeout, FrameSource, GenerationRequest, GenerationResult,
                   MalformedResponse, RequestRejected, TransportError)

log = logging.getLogger(__name__)

ENV_URL = "GROUND_BACKEND_URL"
ENV_KEY = "GROUND_BACKEND_KEY"
ENV_MODEL = "GROUND_BACKEND_MODEL"


def encode_image(source: FrameSource) -> str:
    if isinstance(source, (bytes, bytearray)):
        return base64.b64encode(bytes(source)).decode("ascii")
    if source.startswith(("http://", "https://", "data:")):
        return source
    return base64.b64encode(Path(source).read_bytes()).decode("ascii")


def build_payload(request: GenerationRequest, model: str) -> dict[str, Any]:
    missing = request.missing_sources()
    if missing:
        raise ValueError(f"request lacks frame sources for frames {missing[:5]}")
    messages = []
    for msg in request.chat():
        content = []
        for part in msg.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            elif isinstance(part, ImagePart):
                content.append({"type": "image", "data": encode_image(request.frame_sources[part.frame])})
        messages.append({"role": msg.role, "content": content})
    dec = request.decoding
    return {
        "model": model,
        "messages": messages,
        "max_tokens": dec.max_new_tokens,
        "temperature": dec.temperature,
        "logprobs": dec.logprobs,
    }


def parse_response(body: Any) -> tuple[str, Optional[tuple[tuple[str, float], ...]]]:
    if not isinstance(body, dict) or not isinstance(body.get("text"), str):
        raise MalformedResponse("response lacks a string 'text' field")
    raw = body.get("logprobs")
    if raw is None:
        return body["text"], None
    try:
        pairs = []
        for item in raw:
            if isinstance(item, dict):
                pairs.append((str(item["token"]), float(item["logprob"])))
            else:
                tok, lp = item
                pairs.append((str(tok), float(lp)))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResponse(f"unreadable logprobs: {exc}") from exc
    return body["text"], tuple(pairs)


class RemoteBackend:
    """Posts requests to ``url``; retries transport failures with exponential backoff."""

    def __init__(self, url: str, api_key: Optional[str] = None, model: str = "default",
                 timeout: float = 60.0, max_retries: int = 2, backoff: float = 0.5,
                 max_connections: int = 4, client: Optional[httpx.Client] = None):
        self.url = url
        self.model = model
        self.max_retries = max_retries
        self.backoff = backoff
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(
            timeout=timeout, headers=headers,
            limits=httpx.Limits(max_connections=max_connections))
        self._slots = threading.BoundedSemaphore(max_connections)
        self.attempts = 0

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteBackend":
        url = os.environ.get(ENV_URL)
        if not url:
            raise BackendError(f"{ENV_URL} is not set")
        kwargs.setdefault("model", os.environ.get(ENV_MODEL, "default"))
        return cls(url, api_key=os.environ.get(ENV_KEY), **kwargs)

    def close(self) -> None:
        self._client.close()

    def _post_once(self, payload: dict) -> httpx.Response:
        self.attempts += 1
        try:
            resp = self._client.post(self.url, json=payload)
        except httpx.TimeoutException as exc:
            raise BackendTimeout(str(exc)) from exc
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransportError(f"server returned {resp.status_code}")
        if resp.status_code >= 400:
            raise RequestRejected(f"server returned {resp.status_code}: {resp.text[:200]}")
        return resp

    def complete(self, request: GenerationRequest) -> GenerationResult:
        payload = build_payload(request, self.model)
        t0 = time.perf_counter()
        with self._slots:
            for attempt in range(self.max_retries + 1):
                try:
                    resp = self._post_once(payload)
                    break
                except BackendError as exc:
                    if not exc.retryable or attempt == self.max_retries:
                        raise
                    delay = self.backoff * (2 ** attempt)
                    log.warning("transport failure (%s); retry %d in %.2fs", exc, attempt + 1, delay)
                    time.sleep(delay)
        try:
            body = resp.json()
        except ValueError as exc:
            raise MalformedResponse("response body is not JSON") from exc
        text, logprobs = parse_response(body)
        return GenerationResult(text, logprobs, (time.perf_counter() - t0) * 1000)
