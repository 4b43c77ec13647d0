"""Benchmark manifests, prediction files and frame-cache ingestion.

Both file kinds are JSON lines. The first line is a header naming the schema
and its version; files with an unknown schema or version are rejected.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shlex
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Union

from filelock import FileLock

from .timeline import FrameGrid, Moment, make_grid

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = "timeground/manifest"
PREDICTIONS_SCHEMA = "timeground/predictions"
SCHEMA_VERSION = 1
IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}

PathLike = Union[str, os.PathLike]


class SchemaError(ValueError):
    pass


class IngestError(RuntimeError):
    pass


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


@dataclass
class VideoEntry:
    id: str
    duration: float
    fps: float = 2.0
    path: Optional[str] = None
    frames: Optional[str] = None
    # Crop views reference frames of another video: {"video_id": ..., "start": seconds}.
    source: Optional[dict] = None

    def grid(self) -> FrameGrid:
        return make_grid(self.duration, self.fps)

    def to_dict(self) -> dict:
        return _drop_none({"type": "video", "id": self.id, "duration": self.duration, "fps": self.fps,
                           "path": self.path, "frames": self.frames, "source": self.source})


@dataclass
class QueryEntry:
    id: str
    video_id: str
    text: str
    gt: list[Moment]
    segments: Optional[list[int]] = None
    parent: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"type": "query", "id": self.id, "video_id": self.video_id, "text": self.text,
             "gt": [[m.start, m.end] for m in self.gt], "segments": self.segments,
             "parent": self.parent}
        d.update(self.extra)
        return _drop_none(d)


@dataclass
class QAEntry:
    id: str
    video_id: str
    question: str
    options: list[str]
    answer: str
    gt: Optional[Moment] = None

    def to_dict(self) -> dict:
        return _drop_none({"type": "qa", "id": self.id, "video_id": self.video_id,
                           "question": self.question, "options": self.options, "answer": self.answer,
                           "gt": None if self.gt is None else [self.gt.start, self.gt.end]})


_QUERY_KEYS = {"type", "id", "video_id", "text", "gt", "segments", "parent"}


@dataclass
class Manifest:
    videos: dict[str, VideoEntry] = field(default_factory=dict)
    queries: list[QueryEntry] = field(default_factory=list)
    qa: list[QAEntry] = field(default_factory=list)

    def add_video(self, v: VideoEntry) -> None:
        if v.id in self.videos:
            raise SchemaError(f"duplicate video id {v.id!r}")
        self.videos[v.id] = v

    def validate(self) -> None:
        for v in self.videos.values():
            if not v.duration > 0:
                raise SchemaError(f"video {v.id!r}: duration must be positive")
            if v.source is not None and v.source.get("video_id") not in self.videos:
                raise SchemaError(f"video {v.id!r}: unknown source video {v.source.get('video_id')!r}")
        seen = set()
        for q in [*self.queries, *self.qa]:
            if q.id in seen:
                raise SchemaError(f"duplicate query id {q.id!r}")
            seen.add(q.id)
            video = self.videos.get(q.video_id)
            if video is None:
                raise SchemaError(f"query {q.id!r} references unknown video {q.video_id!r}")
            gts = q.gt if isinstance(q, QueryEntry) else ([q.gt] if q.gt else [])
            for m in gts:
                if m.end > video.duration + 1e-9:
                    raise SchemaError(f"query {q.id!r}: moment {m} exceeds video duration")

    @classmethod
    def read(cls, path: PathLike) -> "Manifest":
        m = cls()
        for obj in read_jsonl(path, MANIFEST_SCHEMA):
            kind = obj.get("type")
            try:
                if kind == "video":
                    m.add_video(VideoEntry(str(obj["id"]), float(obj["duration"]), float(obj.get("fps", 2.0)),
                                           obj.get("path"), obj.get("frames"), obj.get("source")))
                elif kind == "query":
                    m.queries.append(QueryEntry(
                        str(obj["id"]), str(obj["video_id"]), obj["text"],
                        [Moment.from_obj(g) for g in obj["gt"]], obj.get("segments"), obj.get("parent"),
                        {k: v for k, v in obj.items() if k not in _QUERY_KEYS}))
                elif kind == "qa":
                    m.qa.append(QAEntry(str(obj["id"]), str(obj["video_id"]), obj["question"],
                                        list(obj["options"]), obj["answer"],
                                        Moment.from_obj(obj["gt"]) if obj.get("gt") else None))
                else:
                    raise SchemaError(f"unknown manifest record type {kind!r}")
            except KeyError as exc:
                raise SchemaError(f"{kind} record is missing field {exc}") from None
        m.validate()
        return m

    def records(self) -> Iterator[dict]:
        for v in self.videos.values():
            yield v.to_dict()
        for q in self.queries:
            yield q.to_dict()
        for q in self.qa:
            yield q.to_dict()

    def write(self, path: PathLike) -> None:
        write_jsonl(path, MANIFEST_SCHEMA, self.records())


def header(schema: str) -> dict:
    return {"schema": schema, "version": SCHEMA_VERSION}


def read_jsonl(path: PathLike, schema: str) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise SchemaError(f"{path}: empty file")
        head = json.loads(first)
        if head.get("schema") != schema:
            raise SchemaError(f"{path}: expected schema {schema!r}, found {head.get('schema')!r}")
        if head.get("version") != SCHEMA_VERSION:
            raise SchemaError(f"{path}: unsupported {schema} version {head.get('version')!r}")
        for line in fh:
            if line.strip():
                yield json.loads(line)


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_jsonl(path: PathLike, schema: str, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(header(schema)) + "\n")
        for r in records:
            fh.write(dumps(r) + "\n")


# --- predictions ------------------------------------------------------------

def prediction_record(query_id: str, result) -> dict:
    return {
        "query_id": query_id,
        "moments": [m.to_dict() for m in result.moments],
        "stage_trace": [r.to_dict() for r in result.stage_trace],
        "fallback_used": result.fallback_used,
    }


def read_predictions(path: PathLike) -> dict[str, dict]:
    out = {}
    for obj in read_jsonl(path, PREDICTIONS_SCHEMA):
        if "query_id" not in obj or "moments" not in obj:
            raise SchemaError(f"{path}: prediction record lacks query_id or moments")
        obj["moments"] = [Moment.from_obj(m) for m in obj["moments"]]
        out[obj["query_id"]] = obj
    return out


# --- frame cache ------------------------------------------------------------

def list_frames(directory: PathLike) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _content_key(path: Path, fps: float, decoder: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    h.update(f"|{fps!r}|{decoder}".encode())
    return h.hexdigest()[:16]


def _check_count(video: VideoEntry, directory: Path) -> None:
    found = len(list_frames(directory))
    expected = video.grid().n_frames
    if found != expected:
        raise IngestError(f"video {video.id!r}: {found} frames in {directory}, expected {expected}")


def run_decoder(template: str, media: Path, out_dir: Path, fps: float) -> None:
    cmd = [arg.format(input=str(media), output=str(out_dir), fps=fps) for arg in shlex.split(template)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise IngestError(f"decoder failed ({proc.returncode}) on {media}: {proc.stderr.strip()[:300]}")


def ingest(manifest: Manifest, cache_dir: PathLike, decoder: Optional[str] = None,
           base_dir: Optional[PathLike] = None) -> Manifest:
    """Decode media into the frame cache and return a manifest pointing at frame directories.

    Decoded output is keyed by media content, fps and decoder command, so a
    re-run over unchanged inputs does no decoding.
    """
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    resolved = Manifest(dict(manifest.videos), list(manifest.queries), list(manifest.qa))
    for vid, video in manifest.videos.items():
        if video.frames is not None:
            frames = Path(video.frames)
            frames = frames if frames.is_absolute() else base / frames
            if not frames.is_dir():
                raise IngestError(f"video {vid!r}: frame directory {frames} does not exist")
            _check_count(video, frames)
            resolved.videos[vid] = VideoEntry(vid, video.duration, video.fps, video.path, str(frames),
                                              video.source)
            continue
        if video.path is None:
            continue
        media = Path(video.path)
        media = media if media.is_absolute() else base / media
        if not media.is_file():
            raise IngestError(f"video {vid!r}: media file {media} is unreadable or missing")
        if decoder is None:
            raise IngestError(f"video {vid!r} needs decoding but no decoder command is configured")
        key = _content_key(media, video.fps, decoder)
        out_dir = cache / _safe_name(vid) / key
        with FileLock(str(cache / f"{_safe_name(vid)}.lock")):
            if not (out_dir / ".complete").exists():
                tmp = out_dir.with_name(key + ".partial")
                shutil.rmtree(tmp, ignore_errors=True)
                tmp.mkdir(parents=True)
                log.info("decoding %s at %s fps", media, video.fps)
                try:
                    run_decoder(decoder, media, tmp, video.fps)
                except IngestError as exc:
                    raise IngestError(f"video {vid!r}: {exc}") from None
                _check_count(video, tmp)
                shutil.rmtree(out_dir, ignore_errors=True)
                tmp.rename(out_dir)
                (out_dir / ".complete").write_text(key)
        resolved.videos[vid] = VideoEntry(vid, video.duration, video.fps, video.path, str(out_dir),
                                          video.source)
    return resolved


def _safe_name(s: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in s)


def frame_resolver(manifest: Manifest, video_id: str):
    """Map frame index -> image path for a video, or None if it has no frames on disk."""
    video = manifest.videos[video_id]
    offset = 0
    if video.source is not None:
        src = manifest.videos[video.source["video_id"]]
        offset = round(float(video.source.get("start", 0.0)) * src.fps)
        video = src
    if video.frames is None:
        return None
    files = list_frames(video.frames)
    return lambda i: str(files[i + offset])
