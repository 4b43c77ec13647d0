"""Command-line entry point: ``timeground <command> ...``.

Every command exits nonzero on failure and writes one JSON error record to
stderr. Outputs are written with sorted keys and no timing fields, so re-runs
over identical inputs are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from .backend import FixtureBackend, OracleBackend, RecordingBackend, RemoteBackend
from .config import grounding_config, load_config
from .datagen import build_training_samples, pack_video_centric, replicate_long
from .export import timeline_svg
from .manifest import (Manifest, QueryEntry, VideoEntry, _safe_name, dumps, frame_resolver, header,
                       ingest, prediction_record, read_predictions, write_jsonl, PREDICTIONS_SCHEMA)
from .metrics import EvalRecord, evaluate, segments_overlapping, write_records_csv
from .orchestrator import ground
from .perturb import decompose_query, iog_of_decomposition, time_shift_sample
from .scaling import plan
from .synthetic import synthetic_manifest
from .timeline import Moment
from .vqa import QAItem, answer, summarize_qa, window_for

log = logging.getLogger("timeground")

ENV_CACHE = "GROUND_CACHE"
SAMPLES_SCHEMA = "timeground/samples"
PACKED_SCHEMA = "timeground/packed"


def derive_seed(seed: int, *parts: object) -> int:
    blob = "|".join([str(seed), *map(str, parts)]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def make_backend(args, manifest: Optional[Manifest], cfg: dict):
    kind = args.backend
    if kind == "oracle":
        truths = {}
        if manifest:
            truths.update((q.id, q.gt[0]) for q in manifest.queries)
            truths.update((q.id, q.gt) for q in manifest.qa if q.gt is not None)
        backend = OracleBackend(truths, offset=getattr(args, "oracle_offset", 0.0))
    elif kind == "fixture":
        if not args.fixtures:
            raise ValueError("--backend fixture needs --fixtures")
        backend = FixtureBackend.load(args.fixtures)
    elif kind == "remote":
        backend = RemoteBackend.from_env(**cfg.get("backend", {}))
    else:
        raise ValueError(f"unknown backend {kind!r}")
    if getattr(args, "record_fixtures", None):
        backend = RecordingBackend(backend)
    return backend


def finish_backend(args, backend) -> None:
    if isinstance(backend, RecordingBackend):
        backend.save(args.record_fixtures)


def _resolver_or_none(manifest: Manifest, video_id: str, backend):
    resolver = frame_resolver(manifest, video_id)
    inner = backend.inner if isinstance(backend, RecordingBackend) else backend
    if resolver is None and isinstance(inner, RemoteBackend):
        raise ValueError(f"video {video_id!r} has no frames on disk; run `timeground ingest` first")
    return resolver


# --- commands ---------------------------------------------------------------

def cmd_synth(args) -> None:
    synthetic_manifest(args.n, args.seed, min_duration=args.min_duration,
                       max_duration=args.max_duration, tail_margin=args.tail_margin).write(args.out)


def cmd_ingest(args) -> None:
    manifest = Manifest.read(args.manifest)
    cache = args.cache_dir or os.environ.get(ENV_CACHE) or ".timeground-cache"
    resolved = ingest(manifest, cache, args.decoder, base_dir=Path(args.manifest).resolve().parent)
    resolved.write(args.out)


def cmd_ground(args) -> None:
    manifest = Manifest.read(args.manifest)
    cfg = load_config(args.config)
    gcfg = grounding_config(cfg)
    backend = make_backend(args, manifest, cfg)
    out = Path(args.out)
    done: set[str] = set()
    if args.resume and out.exists():
        done = set(read_predictions(out))
        mode = "a"
    else:
        mode = "w"
    todo = [q for q in manifest.queries if q.id not in done]

    def run(q: QueryEntry) -> str:
        grid = manifest.videos[q.video_id].grid()
        result = ground(grid, q.text, gcfg, backend,
                        frame_source=_resolver_or_none(manifest, q.video_id, backend),
                        metadata={"query_id": q.id, "video_id": q.video_id})
        return dumps(prediction_record(q.id, result))

    with open(out, mode, encoding="utf-8") as fh:
        if mode == "w":
            fh.write(dumps(header(PREDICTIONS_SCHEMA)) + "\n")
        if args.workers > 1:
            with ThreadPoolExecutor(args.workers) as pool:
                lines = pool.map(run, todo)
                for line in lines:
                    fh.write(line + "\n")
                    fh.flush()
        else:
            for q in todo:
                fh.write(run(q) + "\n")
                fh.flush()
    finish_backend(args, backend)


def _global_segments(gt, grid, segment_length: int) -> list[int]:
    n = len(grid)
    spans = [(grid[s], grid[min(s + segment_length, n) - 1]) for s in range(0, n, segment_length)]
    return segments_overlapping(gt, spans)


def cmd_eval(args) -> None:
    manifest = Manifest.read(args.manifest)
    preds = read_predictions(args.predictions)
    gcfg = grounding_config(load_config(args.config))
    seg_len = gcfg.segment_length
    records, seg_records = [], []
    missing = 0
    for q in manifest.queries:
        pred = preds.get(q.id)
        missing += pred is None
        moments = pred["moments"] if pred else []
        records.append(EvalRecord(q.id, moments, q.gt))
        first = [r for r in (pred or {}).get("stage_trace", []) if r["kind"] == "coarse" and r["stage"] == 1]
        if first:
            video = manifest.videos[q.video_id]
            grid = video.grid()
            retrieved = sorted({grid.index_of(span[0]) // seg_len for r in first for span in r["spans"]})
            gt_segs = q.segments if q.segments is not None else _global_segments(q.gt[0], grid, seg_len)
            seg_records.append(EvalRecord(q.id, moments, q.gt, retrieved, gt_segs))
    thresholds = [float(t) for t in args.thresholds.split(",")]
    report = evaluate(records, thresholds)
    report.extra["missing_predictions"] = missing
    if seg_records:
        report.extra["seg_retrieval_r1"] = evaluate(seg_records, thresholds).seg_retrieval_r1
        report.extra["seg_retrieval_n"] = len(seg_records)

    by_parent: dict[str, list] = {}
    for rec, q in zip(records, manifest.queries):
        if q.parent is not None:
            by_parent.setdefault(q.parent, []).append(rec)
    if by_parent:
        scores = [iog_of_decomposition([r.predicted for r in recs], recs[0].ground_truth[0])
                  for recs in by_parent.values()]
        report.extra["decomposition_iog"] = sum(scores) / len(scores)

    if args.baseline:
        base = json.loads(Path(args.baseline).read_text(encoding="utf-8"))
        for key, value in report.to_dict().items():
            if key.startswith("r1@") and base.get(key):
                report.extra[f"{key}_relative"] = value / base[key] * 100
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            write_records_csv(records, fh)


def cmd_perturb_shift(args) -> None:
    manifest = Manifest.read(args.manifest)
    cfg = load_config(args.config).get("perturb", {})
    crop_len = args.crop_len if args.crop_len is not None else cfg.get("crop_len")
    repeats = args.repeats if args.repeats is not None else cfg.get("repeats", 1)
    out = Manifest(dict(manifest.videos))
    for q in manifest.queries:
        video = manifest.videos[q.video_id]
        for r in range(repeats):
            seed = derive_seed(args.seed, q.id, r)
            s = time_shift_sample(video.duration, q.gt[0], crop_len, seed,
                                  video_id=video.id, grid_fps=video.fps)
            # Crops of crops resolve straight to the underlying media.
            root, base_start = video.id, 0.0
            if video.source is not None:
                root, base_start = video.source["video_id"], float(video.source.get("start", 0.0))
            vid = f"{video.id}@{q.id}#shift{r}"
            out.add_video(VideoEntry(vid, s.crop.length, video.fps,
                                     source={"video_id": root, "start": base_start + s.crop.start}))
            out.queries.append(QueryEntry(f"{q.id}#shift{r}", vid, q.text, [s.event],
                                          extra={"shift_of": q.id, "seed": seed}))
    out.validate()
    out.write(args.out)


def cmd_perturb_decompose(args) -> None:
    manifest = Manifest.read(args.manifest)
    cfg = load_config(args.config)
    backend = make_backend(args, manifest, cfg)
    out = Manifest(dict(manifest.videos))
    report = []
    for q in manifest.queries:
        d = decompose_query(q.text, backend)
        report.append({"query_id": q.id, "questions": d.questions, "empty": d.empty})
        for k, question in enumerate(d.questions):
            out.queries.append(QueryEntry(f"{q.id}#obj{k}", q.video_id, question, list(q.gt), parent=q.id))
    out.write(args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            for line in report:
                fh.write(dumps(line) + "\n")
    finish_backend(args, backend)


def cmd_datagen(args) -> None:
    manifest = Manifest.read(args.manifest)
    cfg = load_config(args.config)
    gcfg = grounding_config(cfg)
    n_rep = args.n_rep if args.n_rep is not None else cfg.get("datagen", {}).get("n_rep", 4)
    by_video: dict[str, list] = {}
    for q in manifest.queries:
        by_video.setdefault(q.video_id, []).append((q.text, q.gt[0]))
    samples = []
    for vid, annotations in by_video.items():
        video = manifest.videos[vid]
        samples.extend(build_training_samples(video.grid(), annotations, gcfg.scaling,
                                              segment_length=gcfg.segment_length,
                                              seed=derive_seed(args.seed, vid), video_id=vid))
    write_jsonl(args.out, SAMPLES_SCHEMA, (s.to_dict() for s in replicate_long(samples, n_rep)))


def cmd_pack(args) -> None:
    manifest = Manifest.read(args.manifest)
    gcfg = grounding_config(load_config(args.config))
    records = []
    with open(args.annotations, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            vid = obj["video_id"]
            if vid not in manifest.videos:
                raise ValueError(f"annotations reference unknown video {vid!r}")
            n_video = obj.get("video_tokens")
            if n_video is None:
                p = plan(manifest.videos[vid].grid().n_frames, gcfg.scaling)
                n_video = sum(len(c) * t for c, t in zip(p.clips, p.clip_tokens))
            batch = pack_video_centric(int(n_video), [tuple(pair) for pair in obj["qa"]])
            records.append({"video_id": vid, **batch.to_dict()})
    write_jsonl(args.out, PACKED_SCHEMA, records)


def cmd_vqa(args) -> None:
    manifest = Manifest.read(args.manifest)
    cfg = load_config(args.config)
    gcfg = grounding_config(cfg)
    backend = make_backend(args, manifest, cfg)
    items = [QAItem(e.id, e.video_id, e.question, tuple(e.options), e.answer,
                    manifest.videos[e.video_id].duration, e.gt) for e in manifest.qa]
    if not items:
        raise ValueError("manifest holds no QA items")
    preds = read_predictions(args.predictions) if args.predictions else None
    labels: dict[str, Optional[str]] = {}
    grounding: dict[str, list] = {}
    log_path = Path(args.log) if args.log else None
    if log_path and args.resume and log_path.exists():
        for line in log_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                obj = json.loads(line)
                labels[obj["id"]] = obj["label"]
                grounding[obj["id"]] = [Moment.from_obj(m) for m in obj["grounding"]]
    log_fh = open(log_path, "a" if labels else "w", encoding="utf-8") if log_path else None
    try:
        for item in items:
            if item.id in labels:
                continue
            video = manifest.videos[item.video_id]
            grid = video.grid()
            resolver = _resolver_or_none(manifest, item.video_id, backend)
            if preds is not None:
                moments = preds[item.id]["moments"] if item.id in preds else []
            else:
                moments = ground(grid, item.question, gcfg, backend, frame_source=resolver,
                                 metadata={"query_id": item.id, "video_id": item.video_id}).moments
            grounding[item.id] = moments
            out = answer(item, window_for(item, moments), backend, grid=grid, frame_source=resolver)
            labels[item.id] = out.label
            if log_fh:
                rec = out.to_dict(item.answer)
                rec["grounding"] = [m.to_dict() for m in moments]
                log_fh.write(dumps(rec) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    report = summarize_qa(items, labels, grounding)
    Path(args.out).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    finish_backend(args, backend)


def cmd_export_timeline(args) -> None:
    manifest = Manifest.read(args.manifest)
    preds = read_predictions(args.predictions)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for q in manifest.queries:
        rec = preds.get(q.id)
        if rec is None:
            continue
        svg = timeline_svg(q.id, q.text, manifest.videos[q.video_id].duration, q.gt, rec)
        (out_dir / f"{_safe_name(q.id)}.svg").write_text(svg, encoding="utf-8")


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--log-level", default="WARNING")

    backend = argparse.ArgumentParser(add_help=False)
    backend.add_argument("--backend", choices=["oracle", "fixture", "remote"], default="oracle")
    backend.add_argument("--fixtures", help="recorded completions (JSON lines) for --backend fixture")
    backend.add_argument("--record-fixtures", help="save every completion here for later replay")
    backend.add_argument("--oracle-offset", type=float, default=0.0,
                         help="shift oracle answers by this many seconds")

    parser = argparse.ArgumentParser(prog="timeground", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic benchmark manifest")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--min-duration", type=float, default=10.0)
    p.add_argument("--max-duration", type=float, default=3600.0)
    p.add_argument("--tail-margin", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="decode media into the frame cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir")
    p.add_argument("--decoder", help="command template with {input}, {output}, {fps}")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("ground", parents=[common, backend], help="ground every query in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", action="store_true", help="skip queries already in --out")
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("eval", parents=[common], help="score predictions against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--thresholds", default="0.3,0.5,0.7")
    p.add_argument("--baseline", help="earlier eval report; adds relative R1 scores")
    p.add_argument("--csv", help="per-record scores")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("perturb", help="robustness perturbations")
    psub = p.add_subparsers(dest="perturbation", required=True)
    q = psub.add_parser("shift", parents=[common], help="move events to random positions in crops")
    q.add_argument("--manifest", required=True)
    q.add_argument("--crop-len", type=float)
    q.add_argument("--repeats", type=int)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_perturb_shift)
    q = psub.add_parser("decompose", parents=[common, backend], help="split queries into object questions")
    q.add_argument("--manifest", required=True)
    q.add_argument("--report")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_perturb_decompose)

    p = sub.add_parser("datagen", parents=[common], help="build training samples")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-rep", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("pack", parents=[common], help="video-centric packed batches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--annotations", required=True,
                   help='JSON lines: {"video_id", "qa": [[query_tokens, answer_tokens], ...], "video_tokens"?}')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("vqa", parents=[common, backend], help="grounded multiple-choice VideoQA")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", help="grounding keyed by QA item id; grounds each question when omitted")
    p.add_argument("--log", help="per-item results (JSON lines); enables resume")
    p.add_argument("--resume", action="store_true", help="skip items already in --log")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vqa)

    p = sub.add_parser("export-timeline", parents=[common], help="SVG timeline per query")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_export_timeline)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # reported as a machine-readable record
        log.debug("command failed", exc_info=True)
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
