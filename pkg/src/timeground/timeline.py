"""Interval algebra and sampled timestamp grids."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence, Union

# Guards floor(duration * fps) against products like 2.9999999999.
_GRID_EPS = 1e-9


@dataclass(frozen=True, order=True)
class Moment:
    """A closed time interval ``[start, end]`` in seconds."""

    start: float
    end: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "end", float(self.end))
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValueError(f"moment endpoints must be finite, got {self}")
        if self.start < 0:
            raise ValueError(f"moment start must be non-negative, got {self}")
        if self.start > self.end:
            raise ValueError(f"moment start exceeds end: {self}")

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return (self.start + self.end) / 2

    def shifted(self, offset: float) -> "Moment":
        return Moment(self.start + offset, self.end + offset)

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end}

    @classmethod
    def from_obj(cls, obj) -> "Moment":
        """Accept ``{"start": s, "end": e}``, ``[s, e]`` or an existing Moment."""
        if isinstance(obj, Moment):
            return obj
        if isinstance(obj, dict):
            return cls(float(obj["start"]), float(obj["end"]))
        s, e = obj
        return cls(float(s), float(e))


@dataclass(frozen=True)
class FrameGrid:
    """Ordered sampling timestamps of one video."""

    timestamps: tuple[float, ...]
    fps: float
    duration: float

    def __post_init__(self) -> None:
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        ts = self.timestamps
        if not ts:
            raise ValueError("a frame grid needs at least one timestamp")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("grid timestamps must be strictly increasing")
        if ts[0] < 0 or ts[-1] > self.duration + _GRID_EPS:
            raise ValueError("grid timestamps must lie within [0, duration]")

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i: int) -> float:
        return self.timestamps[i]

    @property
    def n_frames(self) -> int:
        return len(self.timestamps)

    @property
    def step(self) -> float:
        return 1.0 / self.fps

    def index_of(self, t: float) -> int:
        """Index of the grid frame nearest to ``t`` (ties toward the earlier frame)."""
        return nearest_index(t, self.timestamps)


def make_grid(duration: float, fps: float) -> FrameGrid:
    """Uniform grid ``0, 1/fps, 2/fps, ...`` clipped to ``[0, duration]``."""
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if not fps > 0:
        raise ValueError(f"fps must be positive, got {fps}")
    n = math.floor(duration * fps + _GRID_EPS) + 1
    # k / fps rather than accumulated steps, so values stay exact for 2 fps.
    ts = tuple(k / fps for k in range(n))
    if ts[-1] > duration:
        ts = ts[:-1] + (float(duration),)
    return FrameGrid(ts, float(fps), float(duration))


def intersect_len(a: Moment, b: Moment) -> float:
    return max(0.0, min(a.end, b.end) - max(a.start, b.start))


def union_len(a: Moment, b: Moment) -> float:
    # Overlapping or touching: the hull, computed directly to avoid cancellation.
    if min(a.end, b.end) >= max(a.start, b.start):
        return max(a.end, b.end) - min(a.start, b.start)
    return a.length + b.length


TimestampSet = Union[FrameGrid, Sequence[float]]


def _as_timestamps(grid: TimestampSet) -> Sequence[float]:
    return grid.timestamps if isinstance(grid, FrameGrid) else grid


def nearest_index(t: float, timestamps: Sequence[float]) -> int:
    if not timestamps:
        raise ValueError("cannot snap onto an empty timestamp set")
    i = bisect.bisect_left(timestamps, t)
    if i == 0:
        return 0
    if i == len(timestamps):
        return len(timestamps) - 1
    lo, hi = timestamps[i - 1], timestamps[i]
    # Ties go to the earlier timestamp.
    return i - 1 if t - lo <= hi - t else i


def snap(t: float, grid: TimestampSet) -> float:
    """Nearest timestamp in ``grid``; out-of-range values clamp to the ends."""
    ts = _as_timestamps(grid)
    return ts[nearest_index(t, ts)]


def timestamp_decimals(fps: float) -> int:
    """Decimal places needed so rendered timestamps snap back to their grid step."""
    step = 1.0 / fps
    return max(1, math.ceil(math.log10(2.0 / step) - 1e-12))
