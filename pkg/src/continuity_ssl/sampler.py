"""Clip-triple supervision and clip augmentation.

A triple is cut from one video: an initial window of ``l_n + l_m`` frames is
split at break index ``j`` into a discontinuous clip (the window with frames
``[j, j + l_m)`` removed) and the removed missing section. A continuous clip
of ``l_n`` frames is drawn from elsewhere in the same video.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .datakit import CorpusManifest, VideoRecord, read_clip
from .errors import ClipTooSmall, InvalidSpec, VideoTooShort


@dataclass(frozen=True)
class AugmentationPolicy:
    # (brightness, contrast, saturation, hue) jitter strengths
    color_jitter: tuple = (0.4, 0.4, 0.4, 0.1)
    scale_range: tuple = (1.0, 1.2)
    horizontal_flip_prob: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.horizontal_flip_prob <= 1.0:
            raise InvalidSpec("horizontal_flip_prob must be in [0, 1]")
        if self.scale_range[0] > self.scale_range[1] or self.scale_range[0] <= 0:
            raise InvalidSpec(f"bad scale_range {self.scale_range}")
        b, c, s, hue = self.color_jitter
        if min(b, c, s, hue) < 0 or hue > 0.5:
            raise InvalidSpec(f"bad color_jitter {self.color_jitter}")


@dataclass(frozen=True)
class SamplerConfig:
    l_n: int = 16
    l_m: int = 8
    crop_size: tuple = (112, 112)
    augmentation: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    rng_seed: int = 0
    mean: tuple = (0.45, 0.45, 0.45)
    std: tuple = (0.225, 0.225, 0.225)

    def __post_init__(self):
        if self.l_n < 2:
            raise InvalidSpec("l_n must be >= 2")
        if self.l_m < 1:
            raise InvalidSpec("l_m must be >= 1")

    @property
    def min_frames(self) -> int:
        return 2 * self.l_n + self.l_m

    @property
    def num_break_classes(self) -> int:
        return self.l_n - 1


@dataclass
class ClipTriple:
    video_id: str
    c_c: np.ndarray
    c_d: np.ndarray
    c_m: np.ndarray
    break_index: int
    initial_span: tuple
    continuous_span: tuple

    @property
    def localization_class(self) -> int:
        return self.break_index - 1

    def discontinuous_frame_indices(self) -> np.ndarray:
        """Source-video frame indices making up ``c_d``."""
        s, e = self.initial_span
        window = np.arange(s, e)
        l_m = len(self.c_m)
        j = self.break_index
        return np.concatenate([window[:j], window[j + l_m:]])


@dataclass
class TensorBatch:
    c_c: torch.Tensor  # [K, 3, l_n, H, W]
    c_d: torch.Tensor  # [K, 3, l_n, H, W]
    c_m: torch.Tensor  # [K, 3, l_m, H, W]
    labels: torch.Tensor  # [K] localization classes j - 1
    video_ids: list

    def __len__(self):
        return len(self.video_ids)


def stream_rng(seed: int, video_id: str, draw: int) -> np.random.Generator:
    """Independent generator keyed by (seed, video_id, draw counter)."""
    vid_key = int.from_bytes(hashlib.sha256(video_id.encode()).digest()[:8], "little")
    return np.random.default_rng([seed & 0xFFFFFFFF, vid_key, draw])


def split_window(window: np.ndarray, j: int, l_m: int):
    """Cut ``window`` (length l_n + l_m) at ``j`` into (discontinuous, missing)."""
    c_d = np.concatenate([window[:j], window[j + l_m:]], axis=0)
    c_m = window[j:j + l_m]
    return c_d, c_m


def continuous_starts(num_frames: int, l_n: int, span) -> np.ndarray:
    """Starts of length-l_n clips that do not overlap ``span``."""
    s2 = np.arange(num_frames - l_n + 1)
    return s2[(s2 + l_n <= span[0]) | (s2 >= span[1])]


def feasible_window_starts(num_frames: int, l_n: int, l_m: int) -> np.ndarray:
    """Initial-window starts that leave room for a non-overlapping continuous clip."""
    win = l_n + l_m
    s = np.arange(num_frames - win + 1)
    return s[(s >= l_n) | (s + win + l_n <= num_frames)]


def sample_clip_triple(record: VideoRecord, cfg: SamplerConfig,
                       rng: np.random.Generator, frames: Optional[np.ndarray] = None) -> ClipTriple:
    """Draw one triple from ``record``.

    ``frames`` may hold the fully decoded video to avoid re-reading it.
    """
    l_n, l_m = cfg.l_n, cfg.l_m
    n = record.num_frames
    if n < cfg.min_frames:
        raise VideoTooShort(n, cfg.min_frames)
    win = l_n + l_m
    starts = feasible_window_starts(n, l_n, l_m)
    start = int(starts[rng.integers(0, len(starts))])
    j = int(rng.integers(1, l_n))
    others = continuous_starts(n, l_n, (start, start + win))
    start2 = int(others[rng.integers(0, len(others))])
    if frames is None:
        window = read_clip(record, start, win)
        c_c = read_clip(record, start2, l_n)
    else:
        window = frames[start:start + win]
        c_c = frames[start2:start2 + l_n]
    c_d, c_m = split_window(window, j, l_m)
    return ClipTriple(record.video_id, c_c, c_d, c_m, j,
                      (start, start + win), (start2, start2 + l_n))


def _rgb_to_yiq_hue_rotation(theta: float) -> np.ndarray:
    to_yiq = np.array([[0.299, 0.587, 0.114],
                       [0.596, -0.274, -0.322],
                       [0.211, -0.523, 0.312]])
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    return np.linalg.inv(to_yiq) @ rot @ to_yiq


def _color_transform(x: np.ndarray, params) -> np.ndarray:
    """Apply (brightness, contrast, saturation, hue) factors to float RGB in [0, 1]."""
    b, c, s, hue = params
    x = x * b
    gray = x @ np.array([0.299, 0.587, 0.114])
    x = (x - gray.mean()) * c + gray.mean()
    gray = (x @ np.array([0.299, 0.587, 0.114]))[..., None]
    x = (x - gray) * s + gray
    if hue != 0.0:
        x = x @ _rgb_to_yiq_hue_rotation(2 * np.pi * hue).T
    return np.clip(x, 0.0, 1.0)


def center_crop(clip: np.ndarray, crop_size) -> np.ndarray:
    ch, cw = crop_size
    h, w = clip.shape[1:3]
    if h < ch or w < cw:
        raise ClipTooSmall(f"clip {h}x{w} smaller than crop {ch}x{cw}")
    y0, x0 = (h - ch) // 2, (w - cw) // 2
    return clip[:, y0:y0 + ch, x0:x0 + cw]


def draw_color(policy: AugmentationPolicy, rng: np.random.Generator) -> tuple:
    """Sample (brightness, contrast, saturation, hue) factors for one clip."""
    bj, cj, sj, hj = policy.color_jitter
    return (rng.uniform(max(0.0, 1 - bj), 1 + bj),
            rng.uniform(max(0.0, 1 - cj), 1 + cj),
            rng.uniform(max(0.0, 1 - sj), 1 + sj),
            rng.uniform(-hj, hj))


def augment(clip: np.ndarray, policy: AugmentationPolicy, crop_size,
            rng: np.random.Generator, color: Optional[tuple] = None) -> np.ndarray:
    """Scale, crop, flip and color-jitter a uint8 clip [T, H, W, 3].

    All random parameters are drawn once per clip and applied to every frame.
    ``color`` supplies the jitter factors instead of drawing them.
    """
    if not policy.enabled:
        return center_crop(clip, crop_size)
    ch, cw = crop_size
    t, h, w, _ = clip.shape
    scale = rng.uniform(*policy.scale_range)
    sh, sw = int(round(h * scale)), int(round(w * scale))
    if sh < ch or sw < cw:
        raise ClipTooSmall(f"scaled clip {sh}x{sw} smaller than crop {ch}x{cw}")
    y0 = int(rng.integers(0, sh - ch + 1))
    x0 = int(rng.integers(0, sw - cw + 1))
    flip = rng.random() < policy.horizontal_flip_prob
    if color is None:
        color = draw_color(policy, rng)

    x = clip.astype(np.float64) / 255.0
    if (sh, sw) != (h, w):
        xt = torch.from_numpy(x).permute(0, 3, 1, 2)
        xt = F.interpolate(xt, size=(sh, sw), mode="bilinear", align_corners=False)
        x = xt.permute(0, 2, 3, 1).numpy()
    x = x[:, y0:y0 + ch, x0:x0 + cw]
    if flip:
        x = x[:, :, ::-1]
    x = _color_transform(x, color)
    return np.rint(x * 255.0).astype(np.uint8)


def to_tensor(clip: np.ndarray, mean=(0.45, 0.45, 0.45), std=(0.225, 0.225, 0.225)) -> torch.Tensor:
    """uint8 [T, H, W, 3] -> standardized float32 [3, T, H, W]."""
    x = torch.from_numpy(np.ascontiguousarray(clip)).float().div_(255.0)
    x = x.permute(3, 0, 1, 2)
    m = torch.tensor(mean, dtype=x.dtype).view(3, 1, 1, 1)
    s = torch.tensor(std, dtype=x.dtype).view(3, 1, 1, 1)
    return (x - m) / s


def from_tensor(x: torch.Tensor, mean=(0.45, 0.45, 0.45), std=(0.225, 0.225, 0.225)) -> np.ndarray:
    """Inverse of :func:`to_tensor`, rounding back to uint8."""
    m = torch.tensor(mean, dtype=x.dtype).view(3, 1, 1, 1)
    s = torch.tensor(std, dtype=x.dtype).view(3, 1, 1, 1)
    y = (x * s + m) * 255.0
    return y.permute(1, 2, 3, 0).round().clamp(0, 255).to(torch.uint8).numpy()


def triple_tensors(triple: ClipTriple, cfg: SamplerConfig, rng: np.random.Generator):
    # c_d and c_m come from one window, so they share one augmentation draw.
    # c_c gets its own crop, scale and flip but the same color factors: a color
    # gap between c_c and c_d is label-independent noise for the justify head.
    pol = cfg.augmentation
    color = draw_color(pol, rng)
    window = np.concatenate([triple.c_d, triple.c_m], axis=0)
    window = augment(window, pol, cfg.crop_size, rng, color)
    c_c = augment(triple.c_c, pol, cfg.crop_size, rng, color)
    l_n = cfg.l_n
    return (to_tensor(c_c, cfg.mean, cfg.std), to_tensor(window[:l_n], cfg.mean, cfg.std),
            to_tensor(window[l_n:], cfg.mean, cfg.std))


def build_batch(manifest: CorpusManifest, cfg: SamplerConfig, video_ids: Sequence[str],
                rng=None, draw: int = 0) -> TensorBatch:
    """Sample one triple per id; index i of every tensor comes from video_ids[i].

    With ``rng=None`` each video draws from ``stream_rng(cfg.rng_seed, id, draw)``,
    so a batch is reproducible regardless of which worker builds it.
    """
    cs, ds, ms, labels = [], [], [], []
    for vid in video_ids:
        rec = manifest.by_id(vid)
        g = rng if rng is not None else stream_rng(cfg.rng_seed, vid, draw)
        frames = rec.frame_source if isinstance(rec.frame_source, np.ndarray) else None
        tri = sample_clip_triple(rec, cfg, g, frames)
        c, d, m = triple_tensors(tri, cfg, g)
        cs.append(c)
        ds.append(d)
        ms.append(m)
        labels.append(tri.localization_class)
    return TensorBatch(torch.stack(cs), torch.stack(ds), torch.stack(ms),
                       torch.tensor(labels, dtype=torch.long), list(video_ids))
