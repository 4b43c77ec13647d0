import json
import subprocess
import sys

import pytest

from cli_runs import DECODER, prepare_inputs, run, run_all
from timeground.cli import main
from timeground.manifest import Manifest, read_predictions


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("inputs")
    prepare_inputs(d)
    return d


@pytest.fixture(scope="module")
def outputs(inputs, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    run_all(inputs, out)
    return out


def test_oracle_predictions_are_perfect(inputs, outputs):
    rep = json.loads((outputs / "report.json").read_text())
    assert rep["miou"] == 1.0 and rep["r1@0.50"] == 1.0 and rep["missing_predictions"] == 0


def test_shift_relative_score(outputs):
    rep = json.loads((outputs / "shift_report.json").read_text())
    assert rep["r1@0.50"] == 1.0 and rep["r1@0.50_relative"] == 100.0


def test_shift_manifest_shape(inputs, outputs):
    m = Manifest.read(outputs / "shift.jsonl")
    base = Manifest.read(inputs / "m.jsonl")
    shifted = [q for q in m.queries]
    assert len(shifted) == 2 * len(base.queries)
    for q in shifted:
        v = m.videos[q.video_id]
        src = base.videos[v.source["video_id"]]
        orig = next(b for b in base.queries if b.id == q.extra["shift_of"])
        assert q.gt[0].length == orig.gt[0].length
        assert v.source["start"] + q.gt[0].start == orig.gt[0].start
        assert v.source["start"] + v.duration <= src.duration + 1e-9


def test_decompose_outputs(inputs, outputs):
    m = Manifest.read(outputs / "decomp.jsonl")
    assert {q.parent for q in m.queries} == {f"q{k:04d}" for k in range(1, 12, 2)}
    report = [json.loads(x) for x in (outputs / "decomp_report.jsonl").read_text().splitlines()]
    assert sum(r["empty"] for r in report) == 6


def test_decomposition_iog_in_eval(inputs, outputs, tmp_path):
    run("ground", "--manifest", outputs / "decomp.jsonl", "--out", tmp_path / "p.jsonl")
    run("eval", "--manifest", outputs / "decomp.jsonl", "--predictions", tmp_path / "p.jsonl",
        "--out", tmp_path / "r.json")
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["decomposition_iog"] == 1.0


def test_vqa_report(outputs):
    rep = json.loads((outputs / "qa.json").read_text())
    assert rep["accuracy"] == 1.0 and rep["n"] == 4 and rep["grounding"]["miou"] == 1.0


def test_pack_and_datagen_outputs(outputs):
    lines = (outputs / "packed.jsonl").read_text().splitlines()
    assert json.loads(lines[0]) == {"schema": "timeground/packed", "version": 1}
    assert len(lines) == 4
    samples = [json.loads(x) for x in (outputs / "samples.jsonl").read_text().splitlines()[1:]]
    assert {s["granularity"] for s in samples} == {"coarse", "fine"}


def test_every_command_is_deterministic(inputs, outputs, tmp_path):
    again = run_all(inputs, tmp_path / "again")
    first = sorted(p for p in outputs.rglob("*") if p.is_file() and "cache" not in p.parts)
    assert [p.relative_to(outputs) for p in first] == [p.relative_to(tmp_path / "again") for p in again]
    for a, b in zip(first, again):
        if a.name == "ingested.jsonl":
            # Frame directories live under each run's own cache.
            a_txt = a.read_text().replace(str(outputs), "<root>")
            b_txt = b.read_text().replace(str(tmp_path / "again"), "<root>")
            assert a_txt == b_txt
        else:
            assert a.read_bytes() == b.read_bytes(), a.name


def test_resume_skips_done_queries(inputs, tmp_path):
    out = tmp_path / "p.jsonl"
    run("ground", "--manifest", inputs / "m.jsonl", "--out", out)
    full = out.read_bytes()
    lines = full.decode().splitlines(keepends=True)
    out.write_text("".join(lines[:5]))
    run("ground", "--manifest", inputs / "m.jsonl", "--out", out, "--resume", "--backend", "fixture",
        "--fixtures", inputs / "fx_ground.jsonl")
    assert out.read_bytes() == full


def test_vqa_resume(inputs, tmp_path):
    log = tmp_path / "log.jsonl"
    args = ["vqa", "--manifest", inputs / "m.jsonl", "--log", log, "--out", tmp_path / "qa.json"]
    run(*args)
    full = log.read_text()
    log.write_text("".join(full.splitlines(keepends=True)[:2]))
    run(*args, "--resume")
    assert log.read_text() == full


def test_parallel_ground_matches_serial(inputs, tmp_path):
    run("ground", "--manifest", inputs / "m.jsonl", "--out", tmp_path / "a.jsonl")
    run("ground", "--manifest", inputs / "m.jsonl", "--out", tmp_path / "b.jsonl", "--workers", 4)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_offset_oracle(inputs, tmp_path):
    run("ground", "--manifest", inputs / "m.jsonl", "--out", tmp_path / "p.jsonl", "--oracle-offset", 1.0)
    preds = read_predictions(tmp_path / "p.jsonl")
    assert any(p["moments"] for p in preds.values())


def test_errors_are_json_records(inputs, tmp_path, capsys):
    assert main(["eval", "--manifest", str(tmp_path / "none.jsonl"), "--predictions", "x"]) == 1
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["command"] == "eval" and rec["error"] == "FileNotFoundError"
    code = main(["ground", "--manifest", str(inputs / "m.jsonl"), "--backend", "fixture",
                 "--fixtures", str(tmp_path / "empty.jsonl"), "--out", str(tmp_path / "p.jsonl")])
    assert code == 1


def test_missing_fixture_names_request(inputs, tmp_path, capsys):
    (tmp_path / "empty.jsonl").write_text("")
    code = main(["ground", "--manifest", str(inputs / "m.jsonl"), "--backend", "fixture",
                 "--fixtures", str(tmp_path / "empty.jsonl"), "--out", str(tmp_path / "p.jsonl")])
    assert code == 1
    assert json.loads(capsys.readouterr().err.strip())["error"] == "MissingFixture"


def test_remote_requires_frames(inputs, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GROUND_BACKEND_URL", "http://127.0.0.1:9/x")
    code = main(["ground", "--manifest", str(inputs / "m.jsonl"), "--backend", "remote",
                 "--out", str(tmp_path / "p.jsonl")])
    assert code == 1
    assert "ingest" in json.loads(capsys.readouterr().err.strip())["message"]


def test_config_file(inputs, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[grounding]\nmax_stages = 1\n[scaling]\nshort_threshold = 64\n')
    run("ground", "--manifest", inputs / "m.jsonl", "--config", cfg, "--out", tmp_path / "p.jsonl")
    for p in read_predictions(tmp_path / "p.jsonl").values():
        assert {r["kind"] for r in p["stage_trace"]} == {"fine"}
    bad = tmp_path / "bad.toml"
    bad.write_text("[grounding]\nnope = 1\n")
    assert main(["ground", "--manifest", str(inputs / "m.jsonl"), "--config", str(bad),
                 "--out", str(tmp_path / "q.jsonl")]) == 1


def test_console_script_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "timeground.cli", "synth", "--n", "3",
                           "--out", str(tmp_path / "s.jsonl")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "timeground.cli", "eval", "--manifest", "nope",
                           "--predictions", "nope"], capture_output=True, text=True)
    assert proc.returncode == 1 and json.loads(proc.stderr)["error"] == "FileNotFoundError"


def test_ingest_then_export(inputs, outputs):
    m = Manifest.read(outputs / "ingested.jsonl")
    assert all(v.frames for v in m.videos.values())
    svgs = list((outputs / "svg").glob("*.svg"))
    assert len(svgs) == 12 and svgs[0].read_text().startswith("<svg")
    assert DECODER


def test_vqa_with_supplied_grounding(inputs, tmp_path):
    from timeground.manifest import PREDICTIONS_SCHEMA, write_jsonl
    m = Manifest.read(inputs / "m.jsonl")
    write_jsonl(tmp_path / "g.jsonl", PREDICTIONS_SCHEMA,
                [{"query_id": q.id, "moments": [q.gt.to_dict()]} for q in m.qa])
    run("vqa", "--manifest", inputs / "m.jsonl", "--predictions", tmp_path / "g.jsonl",
        "--out", tmp_path / "qa.json")
    rep = json.loads((tmp_path / "qa.json").read_text())
    assert rep["accuracy"] == 1.0 and rep["grounding"]["miou"] == 1.0


def test_json_config(inputs, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grounding": {"segment_length": 16, "max_kept_segments": 8, "decoding": {"max_new_tokens": 32}}}))
    run("ground", "--manifest", inputs / "m.jsonl", "--config", cfg, "--out", tmp_path / "p.jsonl")
    run("eval", "--manifest", inputs / "m.jsonl", "--predictions", tmp_path / "p.jsonl",
        "--config", cfg, "--out", tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["miou"] == 1.0
