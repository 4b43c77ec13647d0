"""Robustness harnesses: event time-shift resampling and query decomposition."""

from __future__ import annotations

import logging
import math
import random
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import templates
from .backend.base import Backend, Decoding, GenerationRequest
from .metrics import iog
from .promptseq import Message, TextPart
from .timeline import Moment

log = logging.getLogger(__name__)

MIN_CROP_SECONDS = 30.0


@dataclass(frozen=True)
class ShiftedSample:
    source_video_id: str
    crop: Moment
    event: Moment  # in crop coordinates
    seed: int


def default_crop_len(duration: float, event: Moment) -> float:
    return min(max(2 * event.length, MIN_CROP_SECONDS), duration)


def crop_start_bounds(duration: float, event: Moment, crop_len: float) -> tuple[float, float]:
    return max(0.0, event.end - crop_len), min(event.start, duration - crop_len)


def time_shift_sample(duration: float, event: Moment, crop_len: Optional[float] = None,
                      seed: int = 0, *, video_id: str = "",
                      grid_fps: Optional[float] = None) -> ShiftedSample:
    """Crop a window holding ``event`` at a uniformly random position.

    With ``grid_fps`` the crop start is drawn uniformly from the grid steps
    inside the admissible range, so an on-grid event stays on-grid in the crop.
    """
    if event.end > duration:
        raise ValueError(f"event {event} exceeds the {duration}s video")
    if crop_len is None:
        crop_len = default_crop_len(duration, event)
    if crop_len < event.length:
        raise ValueError("crop_len must be at least the event length")
    crop_len = min(crop_len, duration)
    lo, hi = crop_start_bounds(duration, event, crop_len)
    rng = random.Random(seed)
    if grid_fps is not None:
        k_lo, k_hi = math.ceil(lo * grid_fps - 1e-9), math.floor(hi * grid_fps + 1e-9)
        start = rng.randint(k_lo, k_hi) / grid_fps if k_hi >= k_lo else lo
    else:
        start = rng.uniform(lo, hi) if hi > lo else lo
    crop = Moment(start, start + crop_len)
    return ShiftedSample(video_id, crop, Moment(event.start - start, event.end - start), seed)


@dataclass
class Decomposition:
    query: str
    questions: list[str] = field(default_factory=list)
    raw_text: str = ""

    @property
    def empty(self) -> bool:
        """No groundable object was found; flagged rather than treated as an error."""
        return not self.questions


_QUESTION_RE = re.compile(r"When does (.+?) appear\?", re.IGNORECASE)


def decomposition_request(query: str, decoding: Decoding = Decoding()) -> GenerationRequest:
    messages = (
        Message("system", (TextPart(templates.DECOMPOSE_SYSTEM_TEXT),)),
        Message("system", (TextPart(templates.DECOMPOSE_INSTRUCTIONS),)),
        Message("user", (TextPart(templates.DECOMPOSE_USER.format(query=query)),)),
    )
    return GenerationRequest(messages=messages, decoding=decoding, metadata={"task": "decompose"})


def parse_object_questions(text: str) -> list[str]:
    out: list[str] = []
    for m in _QUESTION_RE.finditer(text or ""):
        q = f"When does {m.group(1).strip()} appear?"
        if q not in out:
            out.append(q)
    return out


def decompose_query(query: str, backend: Backend, decoding: Decoding = Decoding()) -> Decomposition:
    if not query.strip():
        raise ValueError("query is empty")
    text = backend.complete(decomposition_request(query, decoding)).text
    questions = parse_object_questions(text)
    if not questions:
        log.warning("no object questions parsed for query %r", query)
    return Decomposition(query, questions, text)


def iog_of_decomposition(predictions: Sequence[Sequence[Moment]], gt: Moment) -> float:
    """Mean IoG of each object question's top-1 prediction against the original truth."""
    if not predictions:
        raise ValueError("need at least one object-question result")
    scores = [iog(p[0], gt) if p else 0.0 for p in predictions]
    return math.fsum(scores) / len(scores)
