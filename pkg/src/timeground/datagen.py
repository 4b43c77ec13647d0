"""Training-data construction and video-centric sequence packing."""

from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .promptseq import Granularity, render_answer, render_segment_answer
from .scaling import ScalingConfig
from .timeline import FrameGrid, Moment, snap, timestamp_decimals


@dataclass(frozen=True)
class TrainingSample:
    video_id: str
    frame_range: tuple[int, int]  # half-open [start, stop)
    granularity: Granularity
    query: str
    answer: str
    is_long: bool
    crop: Optional[Moment] = None

    def to_dict(self) -> dict:
        out = {
            "video_id": self.video_id,
            "frame_range": list(self.frame_range),
            "granularity": self.granularity.value,
            "query": self.query,
            "answer": self.answer,
            "is_long": self.is_long,
        }
        if self.crop is not None:
            out["crop"] = self.crop.to_dict()
        return out


def _floor_index(t: float, ts: Sequence[float]) -> int:
    return max(0, bisect.bisect_right(ts, t) - 1)


def _ceil_index(t: float, ts: Sequence[float]) -> int:
    return min(len(ts) - 1, bisect.bisect_left(ts, t))


def coarse_answer(gt: Moment, grid: FrameGrid, frames: range, segment_length: int) -> Optional[str]:
    """Start times of the segments of ``frames`` that overlap ``gt``; None if none do."""
    heads = []
    for s in range(frames.start, frames.stop, segment_length):
        last = min(s + segment_length, frames.stop) - 1
        if grid[s] <= gt.end and grid[last] >= gt.start:
            heads.append(grid[s])
    if not heads:
        return None
    return render_segment_answer(heads, timestamp_decimals(grid.fps))


def build_training_samples(grid: FrameGrid, annotations: Sequence[tuple[str, Moment]],
                           config: ScalingConfig = ScalingConfig(), *, segment_length: int = 32,
                           seed: int = 0, video_id: str = "") -> list[TrainingSample]:
    """Coarse samples over the whole video (per clip when it exceeds the long threshold)
    plus one fine sample per annotation over a random crop containing the truth."""
    if not annotations:
        raise ValueError("no annotations")
    rng = random.Random(seed)
    ts = grid.timestamps
    n = len(grid)
    duration = grid.duration
    is_long = n > config.short_threshold
    decimals = timestamp_decimals(grid.fps)
    max_crop = config.short_threshold / config.fps
    samples: list[TrainingSample] = []
    for query, gt in annotations:
        if gt.end > duration:
            raise ValueError(f"annotation {gt} lies outside the {duration}s video")
        if is_long:
            for c in range(0, n, config.long_threshold):
                clip = range(c, min(c + config.long_threshold, n))
                answer = coarse_answer(gt, grid, clip, segment_length)
                if answer is not None:
                    samples.append(TrainingSample(video_id, (clip.start, clip.stop),
                                                  Granularity.COARSE, query, answer, True))
        crop_len = rng.uniform(gt.length, max(gt.length, min(max_crop, duration)))
        lo, hi = max(0.0, gt.end - crop_len), min(gt.start, duration - crop_len)
        start = rng.uniform(lo, hi) if hi > lo else lo
        crop = Moment(start, min(duration, start + crop_len))
        first = _floor_index(min(crop.start, gt.start), ts)
        last = _ceil_index(max(crop.end, gt.end), ts)
        crop_ts = ts[first:last + 1]
        answer = render_answer([Moment(snap(gt.start, crop_ts), snap(gt.end, crop_ts))], decimals)
        samples.append(TrainingSample(video_id, (first, last + 1), Granularity.FINE, query,
                                      answer, is_long, crop))
    return samples


def replicate_long(samples: Sequence[TrainingSample], n_rep: int) -> list[TrainingSample]:
    """Repeat long-video samples ``n_rep`` times; keep samples grouped by video."""
    if n_rep < 1:
        raise ValueError("n_rep must be >= 1")
    groups: dict[str, list[TrainingSample]] = {}
    for s in samples:
        groups.setdefault(s.video_id, []).append(s)
    out = []
    for group in groups.values():
        for s in group:
            out.extend([s] * (n_rep if s.is_long else 1))
    return out


@dataclass(frozen=True)
class QASpan:
    query_start: int
    query_len: int
    answer_start: int
    answer_len: int

    @property
    def start(self) -> int:
        return self.query_start

    @property
    def stop(self) -> int:
        return self.answer_start + self.answer_len


@dataclass(frozen=True)
class PackedBatch:
    """Layout ``[video][Q1 A1][Q2 A2]...`` with per-pair attention isolation.

    Every pair sees the whole video and its own earlier tokens only, and
    every pair's positions restart right after the video.
    """

    n_video: int
    pairs: tuple[QASpan, ...]

    @property
    def n_tokens(self) -> int:
        return self.pairs[-1].stop

    def pair_of(self, i: int) -> int:
        """Pair index owning token ``i``, or -1 for video tokens."""
        if i < self.n_video:
            return -1
        starts = [p.start for p in self.pairs]
        return bisect.bisect_right(starts, i) - 1

    def attention_allowed(self, i: int, j: int) -> bool:
        if j > i:
            return False
        if j < self.n_video:
            return True
        return self.pair_of(i) == self.pair_of(j)

    @property
    def position_index(self) -> list[int]:
        pos = list(range(self.n_video))
        for p in self.pairs:
            pos.extend(range(self.n_video, self.n_video + p.stop - p.start))
        return pos

    @property
    def target_mask(self) -> list[bool]:
        mask = [False] * self.n_tokens
        for p in self.pairs:
            mask[p.answer_start:p.stop] = [True] * p.answer_len
        return mask

    def mask_intervals(self) -> list[dict]:
        """Block-sparse form: each row block lists allowed key intervals.

        An interval ``[a, "row"]`` ends at the query row itself (inclusive).
        """
        blocks = [{"rows": [0, self.n_video], "keys": [[0, "row"]]}]
        for p in self.pairs:
            blocks.append({"rows": [p.start, p.stop], "keys": [[0, self.n_video], [p.start, "row"]]})
        return blocks

    def dense_mask(self) -> np.ndarray:
        n = self.n_tokens
        owner = np.full(n, -1, dtype=np.int64)
        for k, p in enumerate(self.pairs):
            owner[p.start:p.stop] = k
        causal = np.tril(np.ones((n, n), dtype=bool))
        same_pair = owner[:, None] == owner[None, :]
        key_is_video = (owner == -1)[None, :]
        return causal & (same_pair | key_is_video)

    def to_dict(self) -> dict:
        return {
            "n_video": self.n_video,
            "n_tokens": self.n_tokens,
            "spans": {
                "video": [0, self.n_video],
                "qa": [{"query": [p.query_start, p.query_start + p.query_len],
                        "answer": [p.answer_start, p.stop]} for p in self.pairs],
            },
            "mask_intervals": self.mask_intervals(),
            # Runs of [first_token, stop_token, first_position].
            "position_runs": [[0, self.n_video, 0]] + [[p.start, p.stop, self.n_video] for p in self.pairs],
            "target_spans": [[p.answer_start, p.stop] for p in self.pairs],
        }


def pack_video_centric(n_video: int, qa_pairs: Sequence[tuple[int, int]]) -> PackedBatch:
    if n_video < 1:
        raise ValueError("need at least one video token")
    if not qa_pairs:
        raise ValueError("need at least one query-answer pair")
    cursor = n_video
    spans = []
    for q, a in qa_pairs:
        if q < 1 or a < 1:
            raise ValueError(f"query and answer spans must be non-empty, got ({q}, {a})")
        spans.append(QASpan(cursor, q, cursor + q, a))
        cursor += q + a
    return PackedBatch(n_video, tuple(spans))


def nll_loss(per_token_logprobs: Sequence[float], target_mask: Sequence[bool]) -> float:
    """Negative log-likelihood summed over target tokens only."""
    if len(per_token_logprobs) != len(target_mask):
        raise ValueError(f"length mismatch: {len(per_token_logprobs)} logprobs vs "
                         f"{len(target_mask)} mask entries")
    return 0.0 - math.fsum(lp for lp, t in zip(per_token_logprobs, target_mask) if t)
