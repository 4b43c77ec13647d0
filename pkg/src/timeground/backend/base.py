from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Protocol, Union

from ..promptseq import ImagePart, Message, PromptSequence, render_messages

FrameSource = Union[str, bytes]


class BackendError(RuntimeError):
    """Base class for backend failures. ``retryable`` marks transient ones."""

    retryable = False


class TransportError(BackendError):
    retryable = True


class BackendTimeout(TransportError):
    pass


class MalformedResponse(BackendError):
    pass


class RequestRejected(BackendError):
    """Server answered with a non-retryable client error status."""


class MissingFixture(BackendError, KeyError):
    pass


@dataclass(frozen=True)
class Decoding:
    max_new_tokens: int = 256
    temperature: float = 0.0
    logprobs: bool = False


@dataclass(frozen=True, eq=False)
class GenerationRequest:
    """One call to a generative backend.

    Grounding requests carry a ``sequence``; free-form requests (query
    decomposition, multiple-choice QA) carry explicit ``messages``.
    """

    sequence: Optional[PromptSequence] = None
    messages: Optional[tuple[Message, ...]] = None
    frame_sources: Mapping[int, FrameSource] = field(default_factory=dict)
    decoding: Decoding = Decoding()
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.sequence is None and self.messages is None:
            raise ValueError("request needs a sequence or explicit messages")

    def chat(self) -> tuple[Message, ...]:
        if self.messages is not None:
            return self.messages
        return self.sequence.to_messages()

    def image_frames(self) -> list[int]:
        return [p.frame for m in self.chat() for p in m.parts if isinstance(p, ImagePart)]

    def missing_sources(self) -> list[int]:
        return [i for i in self.image_frames() if i not in self.frame_sources]

    def fingerprint(self) -> str:
        """Stable key over everything that could change a model's answer."""
        payload = {
            "prompt": render_messages(self.chat()),
            "frames": self.image_frames(),
            "decoding": [self.decoding.max_new_tokens, self.decoding.temperature],
            "video_id": self.metadata.get("video_id"),
            "query_id": self.metadata.get("query_id"),
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class GenerationResult:
    text: str
    per_token_logprobs: Optional[tuple[tuple[str, float], ...]] = None
    latency_ms: float = 0.0


class Backend(Protocol):
    def complete(self, request: GenerationRequest) -> GenerationResult: ...
