"""Timestamp-interleaved prompt sequences and the answer grammar.

A fine sequence puts one timestamp text before every frame; a coarse sequence
puts one timestamp text before each run of ``segment_length`` frames. Both end
with the task instruction and the query.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from . import templates
from .timeline import FrameGrid, Moment, TimestampSet, nearest_index, snap, timestamp_decimals


class ParseFailure(ValueError):
    """Model output contained nothing the answer grammar recognises."""

    def __init__(self, message: str, text: str = ""):
        super().__init__(message)
        self.text = text


class Granularity(str, enum.Enum):
    FINE = "fine"
    COARSE = "coarse"


# --- chat message parts -----------------------------------------------------

@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    frame: int


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple[Part, ...]


IMAGE_PLACEHOLDER = "<image>"


def render_messages(messages: Iterable[Message], image_token: str = IMAGE_PLACEHOLDER) -> str:
    """Flatten chat messages to one string; images become ``image_token``.

    This is the canonical text form used for fixture keys and wire checks.
    """
    out = []
    for msg in messages:
        body = "\n".join(p.text if isinstance(p, TextPart) else image_token for p in msg.parts)
        out.append(f"{msg.role}:\n{body}")
    return "\n".join(out)


# --- sequence elements ------------------------------------------------------

@dataclass(frozen=True)
class TimestampText:
    seconds: float


@dataclass(frozen=True)
class FrameRef:
    index: int
    timestamp: float
    tokens: int


Element = Union[TimestampText, FrameRef]


@dataclass(frozen=True)
class PromptSequence:
    elements: tuple[Element, ...]
    query: str
    granularity: Granularity
    segment_length: Optional[int] = None
    system_text: str = templates.SYSTEM_TEXT
    task_text: str = templates.FINE_TASK
    decimals: int = 1

    def __post_init__(self) -> None:
        _check_layout(self)

    @property
    def frame_refs(self) -> list[FrameRef]:
        return [e for e in self.elements if isinstance(e, FrameRef)]

    @property
    def timestamp_values(self) -> list[float]:
        return [e.seconds for e in self.elements if isinstance(e, TimestampText)]

    @property
    def frame_timestamps(self) -> list[float]:
        return [e.timestamp for e in self.elements if isinstance(e, FrameRef)]

    def parts(self) -> tuple[Part, ...]:
        parts: list[Part] = []
        for e in self.elements:
            if isinstance(e, TimestampText):
                parts.append(TextPart(render_timestamp(e.seconds, self.decimals)))
            else:
                parts.append(ImagePart(e.index))
        parts.append(TextPart(templates.GROUNDING_TAIL.format(task=self.task_text, query=self.query)))
        return tuple(parts)

    def to_messages(self) -> tuple[Message, ...]:
        return (
            Message("system", (TextPart(self.system_text),)),
            Message("user", self.parts()),
        )

    def render_text(self, image_token: str = IMAGE_PLACEHOLDER) -> str:
        return render_messages(self.to_messages(), image_token)


def _check_layout(seq: PromptSequence) -> None:
    groups: list[int] = []
    last_index = -1
    for e in seq.elements:
        if isinstance(e, TimestampText):
            groups.append(0)
        else:
            if not groups:
                raise ValueError("sequence must open with a timestamp text")
            if e.index <= last_index:
                raise ValueError("frame indices must be strictly increasing")
            last_index = e.index
            groups[-1] += 1
    if any(g == 0 for g in groups):
        raise ValueError("every timestamp text must precede at least one frame")
    if seq.granularity is Granularity.FINE:
        if any(g != 1 for g in groups):
            raise ValueError("fine sequences carry exactly one frame per timestamp")
    else:
        size = seq.segment_length
        if size is None or size < 1:
            raise ValueError("coarse sequences need segment_length >= 1")
        if any(g != size for g in groups[:-1]) or (groups and groups[-1] > size):
            raise ValueError(f"coarse groups must hold {size} frames (last may be shorter)")


@dataclass(frozen=True)
class Segment:
    index: int
    start_frame: int
    start_timestamp: float
    frame_count: int
    frames: tuple[int, ...] = field(repr=False)
    end_timestamp: float = 0.0


@dataclass(frozen=True)
class SegmentCatalog:
    segments: tuple[Segment, ...]

    def __len__(self) -> int:
        return len(self.segments)

    def __getitem__(self, i: int) -> Segment:
        return self.segments[i]

    @property
    def start_timestamps(self) -> list[float]:
        return [s.start_timestamp for s in self.segments]


def _validated_frames(grid: FrameGrid, frames: Sequence[int]) -> list[int]:
    frames = list(frames)
    if not frames:
        raise ValueError("frame range is empty")
    if frames[0] < 0 or frames[-1] >= len(grid):
        raise ValueError(f"frame range {frames[0]}..{frames[-1]} is outside a {len(grid)}-frame grid")
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise ValueError("frame indices must be strictly increasing")
    return frames


def build_fine_sequence(grid: FrameGrid, frames: Sequence[int], query: str, budget: int,
                        *, task_text: str = templates.FINE_TASK,
                        system_text: str = templates.SYSTEM_TEXT) -> PromptSequence:
    frames = _validated_frames(grid, frames)
    elements: list[Element] = []
    for i in frames:
        t = grid[i]
        elements.append(TimestampText(t))
        elements.append(FrameRef(i, t, budget))
    return PromptSequence(tuple(elements), query, Granularity.FINE, None, system_text,
                          task_text, timestamp_decimals(grid.fps))


def build_coarse_sequence(grid: FrameGrid, frames: Sequence[int], segment_length: int,
                          query: str, budget: int, *, task_text: str = templates.COARSE_TASK,
                          system_text: str = templates.SYSTEM_TEXT,
                          ) -> tuple[PromptSequence, SegmentCatalog]:
    if segment_length < 1:
        raise ValueError("segment_length must be >= 1")
    frames = _validated_frames(grid, frames)
    elements: list[Element] = []
    segments = []
    for j, s in enumerate(range(0, len(frames), segment_length)):
        chunk = tuple(frames[s:s + segment_length])
        head = grid[chunk[0]]
        elements.append(TimestampText(head))
        elements.extend(FrameRef(i, grid[i], budget) for i in chunk)
        segments.append(Segment(j, chunk[0], head, len(chunk), chunk, grid[chunk[-1]]))
    seq = PromptSequence(tuple(elements), query, Granularity.COARSE, segment_length,
                         system_text, task_text, timestamp_decimals(grid.fps))
    return seq, SegmentCatalog(tuple(segments))


# --- rendering --------------------------------------------------------------

def format_seconds(t: float, decimals: int = 1) -> str:
    return f"{t:.{decimals}f}"


def render_timestamp(t: float, decimals: int = 1) -> str:
    return f"timestamp: {format_seconds(t, decimals)} seconds"


def render_answer(moments: Sequence[Moment], decimals: int = 1) -> str:
    if not moments:
        raise ValueError("cannot render an empty answer")
    return "; ".join(
        f"From {format_seconds(m.start, decimals)} seconds to {format_seconds(m.end, decimals)} seconds"
        for m in moments
    )


def render_segment_answer(starts: Sequence[float], decimals: int = 1) -> str:
    """Coarse-stage answer naming segment start times, e.g. ``"16.0 seconds, 32.0 seconds"``."""
    if not starts:
        raise ValueError("cannot render an empty segment answer")
    return ", ".join(f"{format_seconds(t, decimals)} seconds" for t in starts)


# --- parsing ----------------------------------------------------------------

_NUM = r"(\d+(?:\.\d*)?|\.\d+)"
_UNIT = r"(?:seconds?|secs?|s)\b"
_CLAUSE_RE = re.compile(rf"\bfrom\s+{_NUM}(?:\s*{_UNIT})?\s+to\s+{_NUM}(?:\s*{_UNIT})?", re.IGNORECASE)
_SECONDS_RE = re.compile(rf"{_NUM}\s*(?:seconds?|secs?)\b", re.IGNORECASE)


def parse_fine_answer(text: str, grid: TimestampSet) -> list[Moment]:
    """Extract ``From X seconds to Y seconds`` clauses, snapped onto ``grid``."""
    out: list[Moment] = []
    for m in _CLAUSE_RE.finditer(text or ""):
        a, b = snap(float(m.group(1)), grid), snap(float(m.group(2)), grid)
        if a > b:
            a, b = b, a
        moment = Moment(a, b)
        if moment not in out:
            out.append(moment)
    if not out:
        raise ParseFailure("no 'From X seconds to Y seconds' clause found", text)
    return out


def _mentioned_seconds(text: str) -> list[float]:
    found: dict[int, float] = {}
    for m in _CLAUSE_RE.finditer(text):
        found[m.start(1)] = float(m.group(1))
        found[m.start(2)] = float(m.group(2))
    for m in _SECONDS_RE.finditer(text):
        found.setdefault(m.start(1), float(m.group(1)))
    return [found[k] for k in sorted(found)]


def coarse_answer_order(text: str, catalog: SegmentCatalog) -> list[int]:
    """Segment indices in order of first mention in ``text``."""
    if not len(catalog):
        raise ValueError("segment catalog is empty")
    starts = catalog.start_timestamps
    order: list[int] = []
    for t in _mentioned_seconds(text or ""):
        j = nearest_index(t, starts)
        if j not in order:
            order.append(j)
    if not order:
        raise ParseFailure("no timestamps found in coarse answer", text)
    return order


def parse_coarse_answer(text: str, catalog: SegmentCatalog) -> list[int]:
    return sorted(coarse_answer_order(text, catalog))
