"""Timestamp-interleaved temporal grounding for long videos."""

from .metrics import MetricReport, evaluate, iog, iop, iou
from .orchestrator import GroundingConfig, GroundingResult, ground
from .promptseq import parse_fine_answer, render_answer
from .scaling import Mode, ScalingConfig, plan
from .timeline import FrameGrid, Moment, make_grid

__version__ = "0.1.0"

__all__ = [
    "FrameGrid", "GroundingConfig", "GroundingResult", "MetricReport", "Mode", "Moment",
    "ScalingConfig", "evaluate", "ground", "iog", "iop", "iou", "make_grid",
    "parse_fine_answer", "plan", "render_answer",
]
