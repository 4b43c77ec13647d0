"""Coarse-to-fine grounding over videos of any length.

Short inputs get one fine pass. Longer inputs go through rounds of segment
retrieval: the candidate frames are cut into clips of at most
``long_threshold`` frames, each clip is shown to the model as a coarse
sequence, and only the segments it names survive. Rounds repeat until the
candidates fit the short threshold (or the stage budget runs out), then a
fine pass localizes the moment among the surviving frames.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from . import templates
from .backend.base import Backend, Decoding, FrameSource, GenerationRequest
from .promptseq import (ParseFailure, SegmentCatalog, build_coarse_sequence, build_fine_sequence,
                        coarse_answer_order, parse_fine_answer)
from .scaling import ScalingConfig, plan
from .timeline import FrameGrid, Moment

log = logging.getLogger(__name__)

FrameResolver = Callable[[int], FrameSource]


@dataclass(frozen=True)
class GroundingConfig:
    scaling: ScalingConfig = ScalingConfig()
    segment_length: int = 32
    max_stages: int = 4
    max_kept_segments: int = 4
    max_workers: int = 1
    decoding: Decoding = Decoding()
    system_text: str = templates.SYSTEM_TEXT
    fine_task: str = templates.FINE_TASK
    coarse_task: str = templates.COARSE_TASK

    def __post_init__(self) -> None:
        if self.segment_length < 1:
            raise ValueError("segment_length must be >= 1")
        if self.max_stages < 1:
            raise ValueError("max_stages must be >= 1")
        if self.max_kept_segments < 1:
            raise ValueError("max_kept_segments must be >= 1")


@dataclass
class StageRecord:
    stage: int
    kind: str
    frames: int
    text: str
    segments: list[int] = field(default_factory=list)
    spans: list[tuple[float, float]] = field(default_factory=list)
    fallback: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "kind": self.kind,
            "frames": self.frames,
            "segments": list(self.segments),
            "spans": [[a, b] for a, b in self.spans],
            "text": self.text,
            "fallback": self.fallback,
        }


@dataclass
class GroundingResult:
    moments: list[Moment]
    stage_trace: list[StageRecord]
    fallback_used: bool = False

    @property
    def n_stages(self) -> int:
        return len({r.stage for r in self.stage_trace})


def _sources(frames: Sequence[int], resolver: Optional[FrameResolver]) -> dict[int, FrameSource]:
    return {i: resolver(i) for i in frames} if resolver is not None else {}


def _budget(n_frames: int, config: GroundingConfig) -> int:
    return plan(n_frames, config.scaling).clip_tokens[0]


def coarse_request(grid: FrameGrid, frames: Sequence[int], query: str, config: GroundingConfig,
                   *, frame_source: Optional[FrameResolver] = None,
                   metadata: Optional[dict] = None) -> tuple[GenerationRequest, SegmentCatalog]:
    seq, catalog = build_coarse_sequence(grid, frames, config.segment_length, query,
                                         _budget(len(frames), config),
                                         task_text=config.coarse_task, system_text=config.system_text)
    req = GenerationRequest(seq, None, _sources(frames, frame_source), config.decoding,
                            dict(metadata or {}, stage="coarse"))
    return req, catalog


def fine_request(grid: FrameGrid, frames: Sequence[int], query: str, config: GroundingConfig,
                 *, frame_source: Optional[FrameResolver] = None,
                 metadata: Optional[dict] = None) -> GenerationRequest:
    seq = build_fine_sequence(grid, frames, query, _budget(len(frames), config),
                              task_text=config.fine_task, system_text=config.system_text)
    return GenerationRequest(seq, None, _sources(frames, frame_source), config.decoding,
                             dict(metadata or {}, stage="fine"))


def _retrieve(grid, frames, query, config, backend, frame_source, metadata):
    req, catalog = coarse_request(grid, frames, query, config,
                                  frame_source=frame_source, metadata=metadata)
    text = backend.complete(req).text
    try:
        picked = sorted(coarse_answer_order(text, catalog)[:config.max_kept_segments])
    except ParseFailure as exc:
        return None, catalog, text, exc
    return picked, catalog, text, None


def retrieve_segments(grid: FrameGrid, frames: Sequence[int], query: str, config: GroundingConfig,
                      backend: Backend, *, frame_source: Optional[FrameResolver] = None,
                      metadata: Optional[dict] = None) -> list[int]:
    """Indices of the segments the model names, capped at ``max_kept_segments``."""
    picked, _, _, exc = _retrieve(grid, frames, query, config, backend, frame_source, metadata)
    if exc is not None:
        raise exc
    return picked


def _refine(grid, frames, query, config, backend, frame_source, metadata):
    req = fine_request(grid, frames, query, config, frame_source=frame_source, metadata=metadata)
    text = backend.complete(req).text
    candidate_ts = [grid[i] for i in frames]
    try:
        return parse_fine_answer(text, candidate_ts), text, False
    except ParseFailure:
        log.info("fine answer unparseable; falling back to the candidate span")
        return [Moment(candidate_ts[0], candidate_ts[-1])], text, True


def refine(grid: FrameGrid, candidates: Sequence[int], query: str, config: GroundingConfig,
           backend: Backend, *, frame_source: Optional[FrameResolver] = None,
           metadata: Optional[dict] = None) -> list[Moment]:
    """Fine grounding over ``candidates`` (frame indices, possibly non-contiguous)."""
    moments, _, _ = _refine(grid, list(candidates), query, config, backend, frame_source, metadata)
    return moments


def _chunks(frames: list[int], size: int) -> list[list[int]]:
    return [frames[i:i + size] for i in range(0, len(frames), size)]


def ground(grid: FrameGrid, query: str, config: GroundingConfig, backend: Backend, *,
           frame_source: Optional[FrameResolver] = None,
           metadata: Optional[dict] = None) -> GroundingResult:
    short = config.scaling.short_threshold
    long = config.scaling.long_threshold
    frames = list(range(len(grid)))
    trace: list[StageRecord] = []
    fallback = False
    stage = 0

    def run_chunks(fn, chunks):
        if config.max_workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(config.max_workers) as pool:
                return list(pool.map(fn, chunks))
        return [fn(c) for c in chunks]

    # The final fine pass needs one stage of the budget.
    while len(frames) > short and stage < config.max_stages - 1:
        stage += 1
        outcomes = run_chunks(
            lambda c: _retrieve(grid, c, query, config, backend, frame_source, metadata),
            _chunks(frames, long))
        survivors: list[int] = []
        for picked, catalog, text, exc in outcomes:
            if exc is not None:
                fallback = True
                picked = list(range(len(catalog)))
            for j in picked:
                survivors.extend(catalog[j].frames)
            trace.append(StageRecord(
                stage, "coarse", sum(s.frame_count for s in catalog.segments), text, list(picked),
                [(catalog[j].start_timestamp, catalog[j].end_timestamp) for j in picked],
                exc is not None))
        frames = survivors

    stage += 1
    moments: list[Moment] = []
    for chunk in _chunks(frames, long):
        found, text, fb = _refine(grid, chunk, query, config, backend, frame_source, metadata)
        fallback = fallback or fb
        trace.append(StageRecord(stage, "fine", len(chunk), text, fallback=fb,
                                 spans=[(grid[chunk[0]], grid[chunk[-1]])]))
        moments.extend(m for m in found if m not in moments)
    return GroundingResult(moments, trace, fallback)
