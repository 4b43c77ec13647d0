import logging

import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from timeground import templates
from timeground.backend import FixtureBackend, OracleBackend
from timeground.metrics import EvalRecord, consistency_scores
from timeground.orchestrator import GroundingConfig, ground
from timeground.perturb import (crop_start_bounds, decompose_query, decomposition_request,
                                default_crop_len, iog_of_decomposition, parse_object_questions,
                                time_shift_sample)
from timeground.timeline import Moment, make_grid


def test_default_crop_len():
    assert default_crop_len(600, Moment(10, 20)) == 30.0
    assert default_crop_len(600, Moment(10, 50)) == 80.0
    assert default_crop_len(25, Moment(10, 20)) == 25.0


@given(st.integers(0, 10**6), st.floats(1, 3000), st.floats(0, 1), st.floats(0.01, 1))
def test_shift_invariants(seed, duration, pos, frac):
    length = frac * min(duration, 60)
    start = pos * (duration - length)
    event = Moment(start, min(duration, start + length))
    s = time_shift_sample(duration, event, seed=seed)
    assert s.crop.start >= 0 and s.crop.end <= duration + 1e-9
    assert s.crop.start <= event.start + 1e-9 and s.crop.end >= event.end - 1e-9
    assert s.event.length == pytest.approx(event.length, abs=1e-9)
    assert s.event.start >= -1e-9 and s.event.end <= s.crop.length + 1e-9


def test_shift_preserves_length_exactly_on_grid():
    for seed in range(500):
        s = time_shift_sample(1800, Moment(700.5, 712.0), seed=seed, grid_fps=2)
        assert s.event.length == 11.5
        assert (s.crop.start * 2).is_integer()


def test_shift_uniformity():
    duration, event = 600.0, Moment(300, 310)
    lo, hi = crop_start_bounds(duration, event, 30.0)
    starts = [time_shift_sample(duration, event, seed=k).crop.start for k in range(10_000)]
    counts = [0] * 10
    for x in starts:
        counts[min(9, int((x - lo) / (hi - lo) * 10))] += 1
    assert chisquare(counts).pvalue > 0.01


def test_shift_rejects_bad_inputs():
    with pytest.raises(ValueError):
        time_shift_sample(100, Moment(10, 50), crop_len=20)
    with pytest.raises(ValueError):
        time_shift_sample(100, Moment(90, 110))


def test_oracle_s_ground_relative_is_100():
    rng_ids = [f"q{k}" for k in range(30)]
    orig, shifted = [], []
    for k, qid in enumerate(rng_ids):
        duration = 200.0 + 37 * k
        gt = Moment(50 + k, 60 + k)
        grid = make_grid(duration, 2)
        res = ground(grid, "q", GroundingConfig(), OracleBackend(gt))
        orig.append(EvalRecord(qid, res.moments, [gt]))
        s = time_shift_sample(duration, gt, seed=k, grid_fps=2)
        res = ground(make_grid(s.crop.length, 2), "q", GroundingConfig(), OracleBackend(s.event))
        shifted.append(EvalRecord(qid, res.moments, [s.event]))
    rep = consistency_scores(orig, shifted=shifted)
    assert rep.ground == 1.0 and rep.s_ground_relative == 100.0


def test_decomposition_request_layout():
    req = decomposition_request("A man puts the cup on the table")
    roles = [m.role for m in req.chat()]
    assert roles == ["system", "system", "user"]
    assert req.chat()[1].parts[0].text == templates.DECOMPOSE_INSTRUCTIONS
    assert req.chat()[2].parts[0].text == "Analyze: A man puts the cup on the table"


def test_parse_object_questions():
    text = "Output:\n-When does the cup appear?\n-When does the table appear?\n-When does the cup appear?"
    assert parse_object_questions(text) == ["When does the cup appear?", "When does the table appear?"]
    assert parse_object_questions("No objects.") == []


def test_decompose_with_fixture(caplog):
    fx = FixtureBackend()
    fx.add(decomposition_request("he waves"), "No valid objects.")
    fx.add(decomposition_request("the dog catches a ball"),
           "-When does the dog appear?\n-When does a ball appear?")
    d = decompose_query("the dog catches a ball", fx)
    assert d.questions == ["When does the dog appear?", "When does a ball appear?"] and not d.empty
    with caplog.at_level(logging.WARNING):
        assert decompose_query("he waves", fx).empty
    assert "no object questions" in caplog.text
    with pytest.raises(Exception):
        decompose_query("he waves", OracleBackend(Moment(0, 1)))


def test_iog_of_decomposition():
    gt = Moment(10, 20)
    assert iog_of_decomposition([[Moment(10, 15)], [Moment(0, 30)], []], gt) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        iog_of_decomposition([], gt)
