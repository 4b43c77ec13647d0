"""Adaptive frame scaling: per-frame token budget, processing mode and clip partition."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

# Upper bound on patch counts considered by the resolution search.
MAX_SEARCH_PATCHES = 4096


class Mode(str, enum.Enum):
    RESIZE = "resize"
    COMPRESS = "compress"
    PARTITION = "partition"


@dataclass(frozen=True)
class ScalingConfig:
    total_token_budget: int = 16384
    short_threshold: int = 128
    long_threshold: int = 1024
    patch_size: int = 14
    fps: float = 2.0

    def __post_init__(self) -> None:
        if not 0 < self.short_threshold < self.long_threshold:
            raise ValueError("need 0 < short_threshold < long_threshold")
        if self.total_token_budget < self.long_threshold:
            raise ValueError("total_token_budget must be >= long_threshold")
        if self.patch_size < 1 or self.fps <= 0:
            raise ValueError("patch_size and fps must be positive")


@dataclass(frozen=True)
class ScalingPlan:
    """Budget decision for a run of frames.

    ``clips`` are half-open frame-index ranges that tile ``[0, n_frames)``;
    ``clip_tokens[i]`` is the per-frame budget inside clip ``i``.
    ``per_frame_tokens`` is the budget for a full-length clip.
    """

    mode: Mode
    per_frame_tokens: int
    clips: tuple[range, ...]
    clip_tokens: tuple[int, ...]
    target_resolution: Optional[tuple[int, int]] = None

    @property
    def frames_per_clip(self) -> int:
        return max(len(c) for c in self.clips)


def plan(n_frames: int, config: ScalingConfig = ScalingConfig(),
         aspect_ratio: Optional[float] = None) -> ScalingPlan:
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    total = config.total_token_budget
    if n_frames >= config.long_threshold:
        size = config.long_threshold
        clips = tuple(range(s, min(s + size, n_frames)) for s in range(0, n_frames, size))
        # The last clip may be short; it is budgeted from its own length.
        tokens = tuple(total // len(c) for c in clips)
        return ScalingPlan(Mode.PARTITION, total // size, clips, tokens)

    n_res = total // n_frames
    if n_frames < config.short_threshold:
        res = None
        if aspect_ratio is not None:
            res = target_resolution(n_res, aspect_ratio, config.patch_size)
        return ScalingPlan(Mode.RESIZE, n_res, (range(n_frames),), (n_res,), res)
    return ScalingPlan(Mode.COMPRESS, n_res, (range(n_frames),), (n_res,))


def target_resolution(n_res: int, aspect_ratio: float, patch: int = 14) -> tuple[int, int]:
    """Largest patch layout within ``n_res`` patches whose width/height best matches ``aspect_ratio``.

    Returns ``(height, width)`` in pixels, both multiples of ``patch``.
    """
    if n_res < 1:
        raise ValueError("n_res must be >= 1")
    if not aspect_ratio > 0:
        raise ValueError("aspect_ratio must be positive")
    budget = min(n_res, MAX_SEARCH_PATCHES)
    target = math.log(aspect_ratio)
    best = None
    for rows in range(1, budget + 1):
        cols = budget // rows
        key = (-(rows * cols), abs(math.log(cols / rows) - target), rows)
        if best is None or key < best[0]:
            best = (key, rows, cols)
    _, rows, cols = best
    return rows * patch, cols * patch
