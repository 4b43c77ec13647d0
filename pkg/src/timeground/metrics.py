"""Grounding metrics: overlap ratios, Recall@1, mIoU, segment retrieval and consistency."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import IO, Mapping, Optional, Sequence

from .timeline import Moment, intersect_len, union_len

R_AT_IOU_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)


class InvalidGroundTruth(ValueError):
    pass


def iou(pred: Moment, gt: Moment) -> float:
    if gt.length <= 0:
        raise InvalidGroundTruth(f"ground truth {gt} has zero length")
    return intersect_len(pred, gt) / union_len(pred, gt)


def iop(pred: Moment, gt: Moment) -> float:
    if gt.length <= 0:
        raise InvalidGroundTruth(f"ground truth {gt} has zero length")
    if pred.length == 0:
        # A point prediction is fully precise if it lands inside the truth.
        return 1.0 if gt.start <= pred.start <= gt.end else 0.0
    return intersect_len(pred, gt) / pred.length


def iog(pred: Moment, gt: Moment) -> float:
    if gt.length <= 0:
        raise InvalidGroundTruth(f"ground truth {gt} has zero length")
    return intersect_len(pred, gt) / gt.length


@dataclass
class EvalRecord:
    query_id: str
    predicted: list[Moment]
    ground_truth: list[Moment]
    retrieved_segments: Optional[list[int]] = None
    gt_segments: Optional[list[int]] = None

    def __post_init__(self) -> None:
        if not self.ground_truth:
            raise InvalidGroundTruth(f"record {self.query_id} has no ground truth")


@dataclass(frozen=True)
class RecordScore:
    query_id: str
    iou: float
    iop: float
    iog: float
    best_gt: Optional[Moment]


def score_record(rec: EvalRecord) -> RecordScore:
    """Score the top-1 prediction against the best-matching ground-truth moment."""
    if not rec.predicted:
        return RecordScore(rec.query_id, 0.0, 0.0, 0.0, None)
    top = rec.predicted[0]
    best = max(rec.ground_truth, key=lambda g: iou(top, g))
    return RecordScore(rec.query_id, iou(top, best), iop(top, best), iog(top, best), best)


def threshold_key(tau: float) -> str:
    return f"r1@{tau:.2f}"


@dataclass
class MetricReport:
    r1_at: dict[float, float]
    miou: float
    iop_mean: float
    iog_mean: float
    r_at_iou: float
    n: int
    seg_retrieval_r1: Optional[float] = None
    extra: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out: dict = {threshold_key(t): v for t, v in sorted(self.r1_at.items())}
        out.update(miou=self.miou, iop=self.iop_mean, iog=self.iog_mean,
                   r_at_iou=self.r_at_iou, n=self.n)
        if self.seg_retrieval_r1 is not None:
            out["seg_retrieval_r1"] = self.seg_retrieval_r1
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _r1(ious: Sequence[float], tau: float) -> float:
    return sum(1 for v in ious if v >= tau) / len(ious)


def evaluate(records: Sequence[EvalRecord], thresholds: Sequence[float] = (0.3, 0.5, 0.7)) -> MetricReport:
    if not records:
        raise ValueError("cannot evaluate an empty record set")
    scores = [score_record(r) for r in records]
    ious = [s.iou for s in scores]
    seg = None
    if all(r.retrieved_segments is not None and r.gt_segments is not None for r in records):
        seg = segment_retrieval_r1(records)
    return MetricReport(
        r1_at={float(t): _r1(ious, t) for t in thresholds},
        miou=_mean(ious),
        iop_mean=_mean([s.iop for s in scores]),
        iog_mean=_mean([s.iog for s in scores]),
        r_at_iou=r_at_iou(records, _ious=ious),
        n=len(records),
        seg_retrieval_r1=seg,
    )


def r_at_iou(records: Sequence[EvalRecord], *, _ious: Optional[Sequence[float]] = None) -> float:
    """Mean Recall@1 over IoU thresholds 0.1, 0.2, ..., 0.5."""
    if not records:
        raise ValueError("cannot evaluate an empty record set")
    ious = _ious if _ious is not None else [score_record(r).iou for r in records]
    return _mean([_r1(ious, t) for t in R_AT_IOU_THRESHOLDS])


def segment_retrieval_r1(records: Sequence[EvalRecord]) -> float:
    if not records:
        raise ValueError("cannot evaluate an empty record set")
    hits = 0
    for r in records:
        if r.retrieved_segments is None or r.gt_segments is None:
            raise ValueError(f"record {r.query_id} lacks segment annotations")
        hits += bool(set(r.retrieved_segments) & set(r.gt_segments))
    return hits / len(records)


def segments_overlapping(gt: Moment, spans: Sequence[tuple[float, float]]) -> list[int]:
    """Indices of ``(start, end)`` segment spans that share any time with ``gt``."""
    return [j for j, (a, b) in enumerate(spans) if a <= gt.end and b >= gt.start]


@dataclass
class ConsistencyReport:
    ground: float
    r_ground: Optional[float] = None
    r_ground_relative: Optional[float] = None
    r_ground_iou: Optional[float] = None
    s_ground: Optional[float] = None
    s_ground_relative: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def _prediction_iou(a: Optional[Moment], b: Optional[Moment]) -> float:
    """IoU between two predictions; missing predictions never match, equal points do."""
    if a is None or b is None:
        return 0.0
    u = union_len(a, b)
    if u == 0:
        return 1.0 if a == b else 0.0
    return intersect_len(a, b) / u


def _relative(score: float, ground: float) -> Optional[float]:
    return score / ground * 100 if ground > 0 else None


def consistency_scores(original: Sequence[EvalRecord],
                       rephrased: Optional[Mapping[str, Sequence[Sequence[Moment]]]] = None,
                       shifted: Optional[Sequence[EvalRecord]] = None,
                       threshold: float = 0.5) -> ConsistencyReport:
    """Grounding consistency under query rephrasing and temporal shifting.

    ``ground`` is R1@threshold of the original predictions. For each original
    query and each rephrased variant, the variant counts as consistent when
    the original prediction is correct and the variant's prediction overlaps
    it with IoU >= threshold; ``r_ground`` averages that over variants, then
    over queries. ``r_ground_iou`` is the plain mean IoU between original and
    variant predictions. ``s_ground`` is R1@threshold on records whose truth
    was moved to a new position. Relative scores are ``score / ground * 100``.
    """
    if not original:
        raise ValueError("no original records")
    by_id = {r.query_id: r for r in original}
    base = [score_record(r) for r in original]
    ground = _r1([s.iou for s in base], threshold)
    report = ConsistencyReport(ground)
    correct = {s.query_id: s.iou >= threshold for s in base}

    if rephrased is not None:
        unknown = set(rephrased) - set(by_id)
        if unknown:
            raise ValueError(f"rephrased variants for unknown ids: {sorted(unknown)[:5]}")
        per_query, per_query_iou = [], []
        for qid, rec in by_id.items():
            variants = rephrased.get(qid)
            if not variants:
                continue
            m = rec.predicted[0] if rec.predicted else None
            hits, overlaps = [], []
            for v in variants:
                ov = _prediction_iou(m, v[0] if v else None)
                overlaps.append(ov)
                hits.append(1.0 if correct[qid] and ov >= threshold else 0.0)
            per_query.append(_mean(hits))
            per_query_iou.append(_mean(overlaps))
        if per_query:
            report.r_ground = _mean(per_query)
            report.r_ground_iou = _mean(per_query_iou)
            report.r_ground_relative = _relative(report.r_ground, ground)

    if shifted is not None:
        unknown = {r.query_id for r in shifted} - set(by_id)
        if unknown:
            raise ValueError(f"shifted records for unknown ids: {sorted(unknown)[:5]}")
        if shifted:
            report.s_ground = _r1([score_record(r).iou for r in shifted], threshold)
            report.s_ground_relative = _relative(report.s_ground, ground)
    return report


def write_records_csv(records: Sequence[EvalRecord], fh: IO[str]) -> None:
    """Per-record scores for error analysis."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["query_id", "pred_start", "pred_end", "gt_start", "gt_end", "iou", "iop", "iog"])
    for rec in records:
        s = score_record(rec)
        p = rec.predicted[0] if rec.predicted else None
        g = s.best_gt or rec.ground_truth[0]
        writer.writerow([rec.query_id,
                         "" if p is None else repr(p.start), "" if p is None else repr(p.end),
                         repr(g.start), repr(g.end), repr(s.iou), repr(s.iop), repr(s.iog)])
