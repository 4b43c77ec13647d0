"""Replay recorded completions keyed by request fingerprint."""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Optional, Union

from .base import Backend, GenerationRequest, GenerationResult, MissingFixture


def _entry(key: str, result: GenerationResult, request: Optional[GenerationRequest] = None) -> dict:
    entry = {"key": key, "text": result.text}
    if result.per_token_logprobs is not None:
        entry["logprobs"] = [[tok, lp] for tok, lp in result.per_token_logprobs]
    if request is not None and request.metadata.get("query_id") is not None:
        entry["query_id"] = request.metadata["query_id"]
    return entry


class FixtureBackend:
    def __init__(self, entries: Optional[dict[str, dict]] = None):
        self._entries = dict(entries or {})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FixtureBackend":
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    entries[obj["key"]] = obj
        return cls(entries)

    def __len__(self) -> int:
        return len(self._entries)

    def add(self, request: GenerationRequest, text: str, logprobs=None) -> str:
        key = request.fingerprint()
        lp = tuple((t, float(v)) for t, v in logprobs) if logprobs is not None else None
        self._entries[key] = _entry(key, GenerationResult(text, lp), request)
        return key

    def complete(self, request: GenerationRequest) -> GenerationResult:
        key = request.fingerprint()
        try:
            entry = self._entries[key]
        except KeyError:
            raise MissingFixture(f"no recorded completion for request {key[:12]}") from None
        lp = entry.get("logprobs")
        return GenerationResult(entry["text"], tuple((t, float(v)) for t, v in lp) if lp else None)


class RecordingBackend:
    """Wraps another backend and keeps every completion for later replay."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()

    def complete(self, request: GenerationRequest) -> GenerationResult:
        result = self.inner.complete(request)
        key = request.fingerprint()
        with self._lock:
            self._entries[key] = _entry(key, result, request)
        return result

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key in sorted(self._entries):
                fh.write(json.dumps(self._entries[key], sort_keys=True) + "\n")
