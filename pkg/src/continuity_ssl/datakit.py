"""Video corpora: frame-directory datasets and a synthetic moving-shapes generator.

On disk a corpus looks like::

    <root>/<split>/manifest.jsonl
    <root>/<split>/<video_id>/frame_000000.png
    ...

Each manifest line is a JSON object with keys ``video_id``, ``class``,
``num_frames``, ``fps``, ``height`` and ``width``.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .errors import (
    CorruptFrame,
    EmptyCorpus,
    InvalidSpec,
    MissingManifest,
    OutOfRange,
    WriteFailure,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "test")
FRAME_PATTERN = "frame_{:06d}.png"
SHAPE_NAMES = ("circle", "square", "triangle")


@dataclass(frozen=True, eq=False)
class VideoRecord:
    video_id: str
    class_label: Optional[str]
    num_frames: int
    fps: float
    height: int
    width: int
    # directory of PNG frames, or an in-memory uint8 array [T, H, W, 3]
    frame_source: Union[Path, np.ndarray]

    def __eq__(self, other):
        if not isinstance(other, VideoRecord):
            return NotImplemented
        same_meta = (self.video_id, self.class_label, self.num_frames, self.fps,
                     self.height, self.width) == (other.video_id, other.class_label,
                                                  other.num_frames, other.fps,
                                                  other.height, other.width)
        if not same_meta:
            return False
        a, b = self.frame_source, other.frame_source
        if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
            return (isinstance(a, np.ndarray) and isinstance(b, np.ndarray)
                    and np.array_equal(a, b))
        return Path(a) == Path(b)

    def to_json(self) -> dict:
        return {"video_id": self.video_id, "class": self.class_label,
                "num_frames": self.num_frames, "fps": self.fps,
                "height": self.height, "width": self.width}


@dataclass(frozen=True)
class CorpusManifest:
    records: tuple
    split: str
    root: Path
    # records dropped at load time for being shorter than min_frames
    num_excluded: int = 0

    def __post_init__(self):
        ids = [r.video_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise InvalidSpec("duplicate video_id in manifest")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self, video_id: str) -> VideoRecord:
        for r in self.records:
            if r.video_id == video_id:
                return r
        raise KeyError(video_id)

    @property
    def video_ids(self) -> list:
        return [r.video_id for r in self.records]

    def materialize(self) -> "CorpusManifest":
        """Return a copy whose records hold their frames in memory."""
        recs = tuple(replace(r, frame_source=read_clip(r, 0, r.num_frames))
                     if not isinstance(r.frame_source, np.ndarray) else r
                     for r in self.records)
        return replace(self, records=recs)


@dataclass(frozen=True)
class SyntheticWorldSpec:
    num_videos: int = 200
    frames_per_video: int = 40
    resolution: tuple = (48, 48)
    num_shape_classes: int = 3
    motion_speed_range: tuple = (2.0, 4.0)
    rng_seed: int = 0
    fps: float = 25.0
    # shape half-extent as a fraction of the smaller frame side
    size_range: tuple = (0.2, 0.3)

    def validate(self, sampler_cfg=None):
        h, w = self.resolution
        if self.num_videos < 1 or self.frames_per_video < 1:
            raise InvalidSpec("num_videos and frames_per_video must be >= 1")
        if h < 8 or w < 8:
            raise InvalidSpec(f"resolution {self.resolution} too small")
        if not 1 <= self.num_shape_classes <= len(SHAPE_NAMES):
            raise InvalidSpec(f"num_shape_classes must be in [1, {len(SHAPE_NAMES)}]")
        lo, hi = self.motion_speed_range
        if lo < 0 or hi < lo:
            raise InvalidSpec(f"bad motion_speed_range {self.motion_speed_range}")
        slo, shi = self.size_range
        if not 0 < slo <= shi < 0.5:
            raise InvalidSpec(f"bad size_range {self.size_range}")
        if sampler_cfg is not None:
            need = 2 * sampler_cfg.l_n + sampler_cfg.l_m
            if self.frames_per_video < need:
                raise InvalidSpec(f"frames_per_video={self.frames_per_video} < 2*l_n+l_m={need}")


SUPERSAMPLE = 4


def _shape_mask(kind: str, cy: float, cx: float, r: float, h: int, w: int,
                ss: int = 1) -> np.ndarray:
    """Boolean mask on an ``ss``-times finer grid, in full-resolution pixel units."""
    yy, xx = np.mgrid[0:h * ss, 0:w * ss].astype(np.float64)
    yy = (yy + 0.5) / ss
    xx = (xx + 0.5) / ss
    if kind == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "square":
        return (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    # upward triangle inscribed in the r-box
    top, bottom = cy - r, cy + r
    frac = (yy - top) / (2 * r)
    half = frac * r
    return (yy >= top) & (yy <= bottom) & (np.abs(xx - cx) <= half)


def shape_coverage(kind: str, cy: float, cx: float, r: float, h: int, w: int) -> np.ndarray:
    """Per-pixel area fraction covered by the shape, estimated by supersampling."""
    ss = SUPERSAMPLE
    fine = _shape_mask(kind, cy, cx, r, h, w, ss)
    return fine.reshape(h, ss, w, ss).mean(axis=(1, 3))


def _bounce(p: float, v: float, lo: float, hi: float):
    p += v
    # reflect until inside; several reflections only if v exceeds the box width
    while p < lo or p > hi:
        if p < lo:
            p, v = 2 * lo - p, -v
        if p > hi:
            p, v = 2 * hi - p, -v
    return p, v


def synthesize_video(spec: SyntheticWorldSpec, index: int):
    """Render video ``index`` of the synthetic world.

    Returns ``(frames, boxes, class_index)`` where frames is uint8
    [T, H, W, 3] and boxes is float [T, 4] of (y0, x0, y1, x1) shape extents.
    Output depends only on ``(spec, index)``.
    """
    rng = np.random.default_rng([spec.rng_seed, index])
    h, w = spec.resolution
    cls = index % spec.num_shape_classes
    kind = SHAPE_NAMES[cls]
    r = rng.uniform(*spec.size_range) * min(h, w)

    bg = rng.integers(0, 256, size=3)
    fg = rng.integers(0, 256, size=3)
    # keep the shape visible against the background
    while np.abs(fg.astype(int) - bg.astype(int)).sum() < 150:
        fg = rng.integers(0, 256, size=3)

    speed = rng.uniform(*spec.motion_speed_range)
    angle = rng.uniform(0, 2 * np.pi)
    vy, vx = speed * np.sin(angle), speed * np.cos(angle)
    ylo, yhi, xlo, xhi = r, h - r, r, w - r
    cy, cx = rng.uniform(ylo, yhi), rng.uniform(xlo, xhi)

    frames = np.empty((spec.frames_per_video, h, w, 3), dtype=np.uint8)
    boxes = np.empty((spec.frames_per_video, 4))
    for t in range(spec.frames_per_video):
        if t > 0:
            cy, vy = _bounce(cy, vy, ylo, yhi)
            cx, vx = _bounce(cx, vx, xlo, xhi)
        # anti-aliased edges keep sub-pixel motion visible
        cov = shape_coverage(kind, cy, cx, r, h, w)[..., None]
        frames[t] = np.rint(bg + cov * (fg - bg)).astype(np.uint8)
        boxes[t] = (cy - r, cx - r, cy + r, cx + r)
    return frames, boxes, cls


def _write_manifest(path: Path, records) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    os.replace(tmp, path)


def generate_synthetic_corpus(spec: SyntheticWorldSpec, out, split: str = "train",
                              sampler_cfg=None, id_prefix: str = "") -> CorpusManifest:
    """Render ``spec`` to ``<out>/<split>/`` and return its manifest."""
    spec.validate(sampler_cfg)
    if split not in SPLITS:
        raise InvalidSpec(f"unknown split {split!r}")
    root = Path(out)
    split_dir = root / split
    records = []
    try:
        split_dir.mkdir(parents=True, exist_ok=True)
        for i in range(spec.num_videos):
            frames, _, cls = synthesize_video(spec, i)
            vid = f"{id_prefix}{split}_{i:05d}"
            vdir = split_dir / vid
            vdir.mkdir(exist_ok=True)
            for t, frame in enumerate(frames):
                Image.fromarray(frame).save(vdir / FRAME_PATTERN.format(t), optimize=False)
            records.append(VideoRecord(vid, SHAPE_NAMES[cls], spec.frames_per_video,
                                       float(spec.fps), spec.resolution[0],
                                       spec.resolution[1], vdir))
        _write_manifest(split_dir / "manifest.jsonl", records)
    except OSError as exc:
        raise WriteFailure(str(exc)) from exc
    return CorpusManifest(tuple(records), split, root)


def _read_frame(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def load_manifest(root, split: str, min_frames: int = 1, verify_frames: bool = True) -> CorpusManifest:
    """Load ``<root>/<split>/manifest.jsonl``.

    Records shorter than ``min_frames`` are dropped (counted in
    ``num_excluded``). With ``verify_frames`` every frame is decoded once and
    any unreadable or mis-sized frame raises CorruptFrame listing all failures.
    """
    root = Path(root)
    path = root / split / "manifest.jsonl"
    if not path.is_file():
        raise MissingManifest(str(path))
    records, bad = [], []
    excluded = 0
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            meta = json.loads(line)
            rec = VideoRecord(meta["video_id"], meta.get("class"), int(meta["num_frames"]),
                              float(meta["fps"]), int(meta["height"]), int(meta["width"]),
                              root / split / meta["video_id"])
            if rec.num_frames < min_frames:
                excluded += 1
                continue
            if verify_frames:
                for t in range(rec.num_frames):
                    try:
                        img = _read_frame(rec.frame_source / FRAME_PATTERN.format(t))
                        ok = img.shape == (rec.height, rec.width, 3)
                    except (OSError, ValueError):
                        ok = False
                    if not ok:
                        bad.append((rec.video_id, t))
                        break
            records.append(rec)
    if bad:
        raise CorruptFrame(*bad[0], errors=bad)
    if excluded:
        log.warning("excluded %d videos shorter than %d frames", excluded, min_frames)
    if not records:
        raise EmptyCorpus(f"no usable videos in {path}")
    return CorpusManifest(tuple(records), split, root, excluded)


def read_clip(record: VideoRecord, start: int, length: int) -> np.ndarray:
    """Frames ``[start, start + length)`` as uint8 [length, H, W, 3]."""
    if start < 0 or length < 0 or start + length > record.num_frames:
        raise OutOfRange(start, length, record.num_frames)
    src = record.frame_source
    if isinstance(src, np.ndarray):
        return src[start:start + length].copy()
    frames = np.empty((length, record.height, record.width, 3), dtype=np.uint8)
    for i in range(length):
        t = start + i
        try:
            frames[i] = _read_frame(Path(src) / FRAME_PATTERN.format(t))
        except (OSError, ValueError) as exc:
            raise CorruptFrame(record.video_id, t) from exc
    return frames
