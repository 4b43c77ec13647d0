"""Deterministic backend that answers from a hidden ground truth."""

from __future__ import annotations

import time
from typing import Mapping, Optional, Union

from ..promptseq import (FrameRef, Granularity, PromptSequence, TimestampText, render_answer,
                         render_segment_answer)
from ..timeline import Moment, nearest_index, snap
from .base import BackendError, GenerationRequest, GenerationResult


def _segment_groups(seq: PromptSequence) -> list[tuple[float, list[float]]]:
    groups: list[tuple[float, list[float]]] = []
    for e in seq.elements:
        if isinstance(e, TimestampText):
            groups.append((e.seconds, []))
        elif isinstance(e, FrameRef):
            groups[-1][1].append(e.timestamp)
    return groups


def oracle_text(seq: PromptSequence, hidden_truth: Moment, offset: float = 0.0) -> str:
    s, e = hidden_truth.start + offset, hidden_truth.end + offset
    frame_ts = seq.frame_timestamps
    lo, hi = max(s, frame_ts[0]), min(e, frame_ts[-1])

    if seq.granularity is Granularity.FINE:
        if lo > hi:
            first = frame_ts[0]
            return render_answer([Moment(first, first)], seq.decimals)
        return render_answer([Moment(snap(lo, frame_ts), snap(hi, frame_ts))], seq.decimals)

    groups = _segment_groups(seq)
    heads = [head for head, ts in groups if ts[0] <= e and ts[-1] >= s]
    if not heads:
        # Truth falls between frames or outside the range: name the segment
        # holding the frame nearest to it.
        center = (min(max(s, frame_ts[0]), frame_ts[-1]) + min(max(e, frame_ts[0]), frame_ts[-1])) / 2
        target = frame_ts[nearest_index(center, frame_ts)]
        heads = [head for head, ts in groups if ts[0] <= target <= ts[-1]]
    return render_segment_answer(heads, seq.decimals)


def oracle_complete(request: GenerationRequest, hidden_truth: Optional[Moment],
                    offset: float = 0.0) -> GenerationResult:
    t0 = time.perf_counter()
    qa_answer = request.metadata.get("qa_answer")
    if request.sequence is None:
        if qa_answer is None:
            raise BackendError("oracle backend only answers grounding and QA requests")
        text = f"({qa_answer})"
    else:
        if hidden_truth is None:
            raise BackendError("oracle backend has no hidden truth for this request")
        text = oracle_text(request.sequence, hidden_truth, offset)
    return GenerationResult(text, None, (time.perf_counter() - t0) * 1000)


class OracleBackend:
    """Answers grounding requests from known ground truth.

    ``truths`` is either one moment used for every request or a mapping keyed
    by ``metadata["query_id"]`` (falling back to the query text). ``offset``
    shifts every endpoint, which yields predictions with a known IoU.
    """

    def __init__(self, truths: Union[Moment, Mapping[str, Moment], None] = None,
                 offset: float = 0.0):
        self.truths = truths
        self.offset = offset

    def truth_for(self, request: GenerationRequest) -> Optional[Moment]:
        if self.truths is None or isinstance(self.truths, Moment):
            return self.truths
        qid = request.metadata.get("query_id")
        if qid is not None and qid in self.truths:
            return self.truths[qid]
        if request.sequence is not None:
            return self.truths.get(request.sequence.query)
        return None

    def complete(self, request: GenerationRequest) -> GenerationResult:
        return oracle_complete(request, self.truth_for(request), self.offset)
