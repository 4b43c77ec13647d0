"""Retrieval-augmented multiple-choice VideoQA on top of grounding predictions."""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from typing import IO, Callable, Mapping, Optional, Sequence

from . import templates
from .backend.base import Backend, Decoding, FrameSource, GenerationRequest
from .metrics import EvalRecord, MetricReport, evaluate
from .promptseq import ImagePart, Message, TextPart
from .timeline import FrameGrid, Moment, make_grid

N_QA_FRAMES = 32
MIN_WINDOW_SECONDS = 32.0


@dataclass(frozen=True)
class QAItem:
    id: str
    video_id: str
    question: str
    options: tuple[str, ...]
    answer: str
    duration: float
    gt: Optional[Moment] = None

    def __post_init__(self) -> None:
        if not 2 <= len(self.options) <= 26:
            raise ValueError("a QA item needs between 2 and 26 options")
        if self.answer not in self.labels:
            raise ValueError(f"correct label {self.answer!r} is not among the options")

    @property
    def labels(self) -> str:
        return string.ascii_uppercase[:len(self.options)]


def extend_window(pred: Moment, min_len: float = MIN_WINDOW_SECONDS,
                  duration: float = float("inf")) -> Moment:
    """Grow ``pred`` about its center to ``min_len``, shifting it back inside the video."""
    if duration < min_len:
        return Moment(0.0, duration)
    # Tolerance keeps the map idempotent: start + min_len - start can round below min_len.
    if pred.length >= min_len - 1e-9:
        return pred
    start = pred.center - min_len / 2
    start = min(max(start, 0.0), duration - min_len)
    return Moment(start, start + min_len)


def sample_times(window: Moment, n: int = N_QA_FRAMES) -> list[float]:
    """``n`` bin-center timestamps spread evenly across ``window``."""
    step = window.length / n
    return [window.start + (k + 0.5) * step for k in range(n)]


def qa_request(item: QAItem, frames: Sequence[int], frame_sources: Mapping[int, FrameSource],
               decoding: Decoding = Decoding(max_new_tokens=16)) -> GenerationRequest:
    options = "\n".join(f"({label}) {text}" for label, text in zip(item.labels, item.options))
    tail = templates.QA_TAIL.format(question=item.question, options=options)
    parts = tuple(ImagePart(i) for i in frames) + (TextPart(tail),)
    messages = (Message("system", (TextPart(templates.QA_SYSTEM_TEXT),)), Message("user", parts))
    return GenerationRequest(messages=messages, frame_sources=dict(frame_sources), decoding=decoding,
                             metadata={"task": "qa", "query_id": item.id, "video_id": item.video_id,
                                       "qa_answer": item.answer})


_ECHO_RE = re.compile(r"best\s+option\s*:", re.IGNORECASE)


def parse_label(text: str, labels: str) -> Optional[str]:
    """First standalone option letter in ``text``, with or without parentheses."""
    body = _ECHO_RE.sub(" ", text or "")
    m = re.search(rf"(?<![A-Za-z])([{labels}])(?![A-Za-z])", body)
    return m.group(1) if m else None


@dataclass(frozen=True)
class QAOutcome:
    item_id: str
    label: Optional[str]
    raw_text: str
    window: Moment

    @property
    def unanswered(self) -> bool:
        return self.label is None

    def to_dict(self, correct: Optional[str] = None) -> dict:
        out = {"id": self.item_id, "label": self.label, "raw_text": self.raw_text,
               "window": self.window.to_dict(), "unanswered": self.unanswered}
        if correct is not None:
            out["correct"] = self.label == correct
        return out


def answer(item: QAItem, window: Moment, qa_backend: Backend, *,
           grid: Optional[FrameGrid] = None,
           frame_source: Optional[Callable[[int], FrameSource]] = None) -> QAOutcome:
    grid = grid or make_grid(item.duration, 2.0)
    frames = [grid.index_of(t) for t in sample_times(window)]
    # Short windows map several sample times onto one frame; show each frame once.
    frames = sorted(set(frames))
    sources = {i: frame_source(i) for i in frames} if frame_source else {}
    text = qa_backend.complete(qa_request(item, frames, sources)).text
    return QAOutcome(item.id, parse_label(text, item.labels), text, window)


@dataclass
class QAReport:
    accuracy: float
    n: int
    unanswered: int
    grounding: Optional[MetricReport] = None

    def to_dict(self) -> dict:
        out = {"accuracy": self.accuracy, "n": self.n, "unanswered": self.unanswered}
        if self.grounding is not None:
            out["grounding"] = self.grounding.to_dict()
        return out


def window_for(item: QAItem, predictions: Sequence[Moment]) -> Moment:
    """Extended window around the top-1 prediction; the whole video when there is none."""
    if predictions:
        return extend_window(predictions[0], MIN_WINDOW_SECONDS, item.duration)
    return Moment(0.0, item.duration)


def summarize_qa(items: Sequence[QAItem], labels: Mapping[str, Optional[str]],
                 grounding: Mapping[str, Sequence[Moment]]) -> QAReport:
    correct = sum(labels.get(it.id) == it.answer for it in items)
    unanswered = sum(labels.get(it.id) is None for it in items)
    report = QAReport(correct / len(items), len(items), unanswered)
    records = [EvalRecord(it.id, list(grounding.get(it.id, ())), [it.gt]) for it in items if it.gt is not None]
    if records:
        report.grounding = evaluate(records, thresholds=(0.3, 0.5))
    return report


def evaluate_qa(items: Sequence[QAItem], grounding: Mapping[str, Sequence[Moment]],
                qa_backend: Backend, *, fps: float = 2.0,
                frame_source_for: Optional[Callable[[QAItem], Callable[[int], FrameSource]]] = None,
                log_fh: Optional[IO[str]] = None) -> QAReport:
    """Answer each item from frames of its grounded window and score accuracy.

    When items carry ground-truth moments, grounding quality is reported alongside.
    """
    if not items:
        raise ValueError("no QA items")
    unknown = set(grounding) - {it.id for it in items}
    if unknown:
        raise ValueError(f"grounding predictions for unknown items: {sorted(unknown)[:5]}")
    labels: dict[str, Optional[str]] = {}
    for item in items:
        window = window_for(item, list(grounding.get(item.id, ())))
        resolver = frame_source_for(item) if frame_source_for else None
        out = answer(item, window, qa_backend, grid=make_grid(item.duration, fps), frame_source=resolver)
        labels[item.id] = out.label
        if log_fh is not None:
            log_fh.write(json.dumps(out.to_dict(item.answer), sort_keys=True) + "\n")
    return summarize_qa(items, labels, grounding)
