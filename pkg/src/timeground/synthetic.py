"""Synthetic benchmark suites with on-grid ground truth, for oracle end-to-end runs."""

from __future__ import annotations

import math
import random

from .manifest import Manifest, QueryEntry, VideoEntry
from .timeline import Moment


def synthetic_manifest(n_videos: int = 200, seed: int = 0, *, min_duration: float = 10.0,
                       max_duration: float = 3600.0, fps: float = 2.0,
                       max_moment: float = 40.0, tail_margin: float = 0.0) -> Manifest:
    """Videos with log-uniform durations and one on-grid moment each.

    ``tail_margin`` keeps moments that far from the video end (room for
    offset oracles).
    """
    rng = random.Random(seed)
    manifest = Manifest()
    for k in range(n_videos):
        duration = round(math.exp(rng.uniform(math.log(min_duration), math.log(max_duration))), 3)
        last = math.floor((duration - tail_margin) * fps)
        steps = rng.randint(1, max(1, min(int(max_moment * fps), last)))
        start = rng.randint(0, last - steps)
        vid = f"v{k:04d}"
        manifest.add_video(VideoEntry(vid, duration, fps))
        gt = Moment(start / fps, (start + steps) / fps)
        manifest.queries.append(QueryEntry(f"q{k:04d}", vid, f"synthetic event {k}", [gt]))
    return manifest
