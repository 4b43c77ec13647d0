import csv
import io
import random

import pytest
from hypothesis import given, strategies as st

from oracles import brute_force_report, ratios
from timeground.metrics import (EvalRecord, InvalidGroundTruth, consistency_scores, evaluate, iog, iop,
                                iou, r_at_iou, score_record, segment_retrieval_r1, segments_overlapping,
                                write_records_csv)
from timeground.timeline import Moment


def grid_pair(rng, span=7200):
    a, b = sorted(rng.sample(range(span), 2))
    return (a / 2, b / 2)


def random_records(rng, n, *, grid=True):
    out = []
    for _ in range(n):
        draw = (lambda: grid_pair(rng)) if grid else (lambda: tuple(sorted((rng.uniform(0, 3600),
                                                                              rng.uniform(0, 3600)))))
        gts = [draw() for _ in range(rng.randint(1, 3))]
        gts = [g for g in gts if g[1] > g[0]] or [(0.0, 1.0)]
        preds = [] if rng.random() < 0.05 else [draw() for _ in range(rng.randint(1, 2))]
        if grid and preds and rng.random() < 0.3:
            # On-grid predictions sitting at or next to common thresholds.
            g = gts[0]
            steps = round((g[1] - g[0]) * 2 * rng.choice([0.3, 0.5, 0.7])) + rng.choice([-1, 0, 0, 1])
            preds[0] = (g[0], g[0] + max(steps, 0) / 2)
        out.append((preds, gts))
    return out


def as_eval(records):
    return [EvalRecord(str(k), [Moment(*p) for p in preds], [Moment(*g) for g in gts])
            for k, (preds, gts) in enumerate(records)]


def test_examples():
    gt = Moment(10, 20)
    assert iou(Moment(11, 21), gt) == pytest.approx(9 / 11)
    assert iop(Moment(15, 25), gt) == 0.5
    assert iog(Moment(15, 25), gt) == 0.5
    assert iop(Moment(12, 12), gt) == 1.0
    assert iou(Moment(30, 40), gt) == 0.0
    with pytest.raises(InvalidGroundTruth):
        iou(gt, Moment(3, 3))


def test_r_at_iou_convention():
    # IoU 0.45 clears 0.1..0.4 but not 0.5.
    rec = EvalRecord("a", [Moment(0, 9)], [Moment(0, 20)])
    assert score_record(rec).iou == 0.45
    assert r_at_iou([rec]) == pytest.approx(0.8)


def test_missing_prediction_scores_zero():
    rep = evaluate([EvalRecord("a", [], [Moment(0, 1)]), EvalRecord("b", [Moment(0, 1)], [Moment(0, 1)])])
    assert rep.miou == 0.5 and rep.r1_at[0.5] == 0.5


def test_best_ground_truth_is_used():
    rec = EvalRecord("a", [Moment(10, 20)], [Moment(0, 5), Moment(10, 20)])
    assert score_record(rec).iou == 1.0


def test_only_top1_counts():
    rec = EvalRecord("a", [Moment(50, 60), Moment(10, 20)], [Moment(10, 20)])
    assert score_record(rec).iou == 0.0


def test_empty_inputs_rejected():
    with pytest.raises(ValueError):
        evaluate([])
    with pytest.raises(InvalidGroundTruth):
        EvalRecord("a", [], [])


@given(st.integers(0, 2**32))
def test_matches_exact_scorer_on_grid(seed):
    recs = random_records(random.Random(seed), 40)
    ref = brute_force_report(recs, (0.3, 0.5, 0.7))
    rep = evaluate(as_eval(recs), (0.3, 0.5, 0.7))
    assert [score_record(r).iou for r in as_eval(recs)] == ref["ious"]
    assert rep.r1_at == ref["r1"]
    assert rep.miou == ref["miou"]
    assert rep.iop_mean == ref["iop"] and rep.iog_mean == ref["iog"]
    assert rep.r_at_iou == ref["r_at_iou"]


@given(st.integers(0, 2**32))
def test_ratios_close_on_continuous_endpoints(seed):
    recs = random_records(random.Random(seed), 30, grid=False)
    for rec, (preds, gts) in zip(as_eval(recs), recs):
        s = score_record(rec)
        ref = brute_force_report([(preds, gts)], ())
        assert s.iou == pytest.approx(ref["ious"][0], abs=1e-12)
        assert s.iop == pytest.approx(ref["iops"][0], abs=1e-12)
        assert s.iog == pytest.approx(ref["iogs"][0], abs=1e-12)


@given(st.tuples(st.integers(0, 100), st.integers(0, 100)), st.tuples(st.integers(0, 100), st.integers(1, 100)))
def test_ratio_invariants(p, g):
    pred = Moment(*sorted(p))
    gt = Moment(min(g), min(g) + max(g) if g[0] == g[1] else max(g))
    v = iou(pred, gt)
    assert 0 <= v <= 1
    assert v <= iog(pred, gt) + 1e-15
    if pred.length > 0:
        assert v <= iop(pred, gt) + 1e-15
    assert (v == 1.0) == (pred == gt)
    assert v == pytest.approx(float(ratios(tuple(pred.__dict__.values()), (gt.start, gt.end))[0]), abs=1e-15)


def test_segment_retrieval():
    spans = [(0, 15.5), (16, 31.5), (32, 47.5)]
    assert segments_overlapping(Moment(15.5, 17), spans) == [0, 1]
    recs = [EvalRecord("a", [], [Moment(0, 1)], [1, 2], [2]), EvalRecord("b", [], [Moment(0, 1)], [0], [2])]
    assert segment_retrieval_r1(recs) == 0.5
    assert evaluate(recs).seg_retrieval_r1 == 0.5


def test_consistency_scores():
    orig = [EvalRecord("a", [Moment(10, 20)], [Moment(10, 20)]),
            EvalRecord("b", [Moment(0, 5)], [Moment(30, 40)])]
    rephrased = {"a": [[Moment(10, 20)], [Moment(40, 50)]], "b": [[Moment(0, 5)]]}
    shifted = [EvalRecord("a", [Moment(1, 11)], [Moment(1, 11)]),
               EvalRecord("b", [Moment(0, 1)], [Moment(5, 15)])]
    rep = consistency_scores(orig, rephrased, shifted)
    assert rep.ground == 0.5
    # a: one of two variants agrees; b: original wrong so never consistent.
    assert rep.r_ground == 0.25
    assert rep.r_ground_relative == 50.0
    assert rep.r_ground_iou == pytest.approx((0.5 + 1.0) / 2)
    assert rep.s_ground == 0.5 and rep.s_ground_relative == 100.0
    with pytest.raises(ValueError):
        consistency_scores(orig, {"zzz": [[Moment(0, 1)]]})


def test_report_json_and_csv():
    recs = as_eval([([(0, 1)], [(0, 2)])])
    d = evaluate(recs, (0.5,)).to_dict()
    assert d["r1@0.50"] == 1.0 and d["miou"] == 0.5 and d["n"] == 1
    buf = io.StringIO()
    write_records_csv(recs, buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0][:3] == ["query_id", "pred_start", "pred_end"]
    assert [float(x) for x in rows[1][1:]] == [0.0, 1.0, 0.0, 2.0, 0.5, 1.0, 0.5]
