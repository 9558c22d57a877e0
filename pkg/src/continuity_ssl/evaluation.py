"""Downstream evaluation: clip-averaged features, retrieval R@k, linear probe, saliency maps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .datakit import CorpusManifest, VideoRecord, read_clip
from .errors import EmptySet, KTooLarge, VideoTooShort
from .net import ContinuityNet
from .sampler import SamplerConfig, augment, center_crop, to_tensor
from .trainer import _as_model

DEFAULT_KS = (1, 5, 10, 20, 50)


@dataclass
class VideoFeature:
    video_id: str
    class_label: Optional[str]
    feature: np.ndarray  # [D]

    def to_json(self) -> dict:
        return {"video_id": self.video_id, "class": self.class_label,
                "feature": [float(v) for v in self.feature]}


@dataclass
class RetrievalReport:
    recall_at: dict
    num_queries: int


def clip_starts(num_frames: int, l_n: int, num_clips: int = 10) -> list:
    """``num_clips`` evenly spaced starts over ``[0, num_frames - l_n]``."""
    if num_frames < l_n:
        raise VideoTooShort(num_frames, l_n)
    return [int(round(s)) for s in np.linspace(0, num_frames - l_n, num_clips)]


def _clip_batch(record: VideoRecord, cfg: SamplerConfig, num_clips: int) -> torch.Tensor:
    frames = read_clip(record, 0, record.num_frames)
    clips = [to_tensor(center_crop(frames[s:s + cfg.l_n], cfg.crop_size), cfg.mean, cfg.std)
             for s in clip_starts(record.num_frames, cfg.l_n, num_clips)]
    return torch.stack(clips)


@torch.no_grad()
def clip_features(model: ContinuityNet, record: VideoRecord, cfg: SamplerConfig,
                  num_clips: int = 10) -> np.ndarray:
    """Pooled backbone features of each evaluation clip, [num_clips, D]."""
    model.eval()
    x = _clip_batch(record, cfg, num_clips)
    return model.pooled_features(x).double().numpy()


def extract_video_feature(model_or_ckpt, record: VideoRecord, cfg: SamplerConfig,
                          num_clips: int = 10) -> VideoFeature:
    model = _as_model(model_or_ckpt)
    feats = clip_features(model, record, cfg, num_clips)
    return VideoFeature(record.video_id, record.class_label, feats.mean(axis=0))


def extract_features(model_or_ckpt, manifest: CorpusManifest, cfg: SamplerConfig,
                     num_clips: int = 10) -> list:
    model = _as_model(model_or_ckpt)
    return [extract_video_feature(model, r, cfg, num_clips) for r in manifest.records]


def write_features(path, feats: Sequence[VideoFeature]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for vf in feats:
            f.write(json.dumps(vf.to_json()) + "\n")
    return path


def read_features(path) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                d = json.loads(line)
                out.append(VideoFeature(d["video_id"], d.get("class"), np.asarray(d["feature"])))
    return out


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-8)


def rank_neighbors(query: np.ndarray, train: np.ndarray, train_ids: Sequence[str]) -> np.ndarray:
    """Training indices sorted by cosine similarity (desc), ties by video_id."""
    sims = _normalize_rows(train) @ (query / max(np.linalg.norm(query), 1e-8))
    return np.lexsort((np.asarray(train_ids), -sims))


def retrieval(train_feats: Sequence[VideoFeature], test_feats: Sequence[VideoFeature],
              ks: Sequence[int] = DEFAULT_KS) -> RetrievalReport:
    """A query is a hit at k when its class is among the classes of its k nearest training videos."""
    if not train_feats or not test_feats:
        raise EmptySet("retrieval needs non-empty train and test sets")
    ks = sorted(set(ks))
    if ks[-1] > len(train_feats):
        raise KTooLarge(ks[-1], len(train_feats))
    train = np.stack([f.feature for f in train_feats]).astype(np.float64)
    ids = [f.video_id for f in train_feats]
    classes = np.asarray([f.class_label for f in train_feats], dtype=object)
    hits = dict.fromkeys(ks, 0)
    for q in test_feats:
        order = rank_neighbors(np.asarray(q.feature, dtype=np.float64), train, ids)
        match = classes[order] == q.class_label
        first = int(np.argmax(match)) if match.any() else len(order)
        for k in ks:
            hits[k] += first < k
    n = len(test_feats)
    return RetrievalReport({k: hits[k] / n for k in ks}, n)


@dataclass(frozen=True)
class ProbeConfig:
    num_clips: int = 10
    epochs: int = 300
    lr: float = 0.05
    weight_decay: float = 1e-3
    seed: int = 0
    # "linear": frozen backbone; "finetune": backbone trained end to end
    mode: str = "linear"
    finetune_epochs: int = 10
    finetune_lr: float = 0.01
    finetune_batch: int = 16


def _fit_linear(x: np.ndarray, y: np.ndarray, n_cls: int, cfg: ProbeConfig):
    """Full-batch softmax regression on standardized features; returns a scoring function."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0) + 1e-6
    xt = torch.tensor((x - mu) / sd, dtype=torch.float64)
    yt = torch.tensor(y, dtype=torch.long)
    g = torch.Generator().manual_seed(cfg.seed)
    lin = torch.nn.Linear(x.shape[1], n_cls).double()
    with torch.no_grad():
        lin.weight.copy_(torch.randn(lin.weight.shape, generator=g, dtype=torch.float64) * 0.01)
        lin.bias.zero_()
    opt = torch.optim.Adam(lin.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    for _ in range(cfg.epochs):
        opt.zero_grad()
        F.cross_entropy(lin(xt), yt).backward()
        opt.step()

    @torch.no_grad()
    def score(z: np.ndarray) -> np.ndarray:
        return lin(torch.tensor((z - mu) / sd, dtype=torch.float64)).numpy()

    return score


def probe_from_features(train_clip_feats: Sequence[np.ndarray], train_labels: Sequence,
                        test_clip_feats: Sequence[np.ndarray], test_labels: Sequence,
                        cfg: ProbeConfig = ProbeConfig()) -> float:
    """Top-1 of a linear classifier trained on per-clip features.

    Each element of ``*_clip_feats`` is one video's [num_clips, D] array; test
    scores are averaged over a video's clips before the argmax.
    """
    classes = sorted(set(train_labels))
    index = {c: i for i, c in enumerate(classes)}
    x = np.concatenate(train_clip_feats)
    y = np.concatenate([[index[l]] * len(f) for f, l in zip(train_clip_feats, train_labels)])
    score = _fit_linear(x, y, len(classes), cfg)
    correct = 0
    for feats, label in zip(test_clip_feats, test_labels):
        pred = classes[int(np.argmax(score(feats).mean(axis=0)))]
        correct += pred == label
    return correct / len(test_labels)


def _finetune(model: ContinuityNet, manifest_train: CorpusManifest, cfg: SamplerConfig,
              probe_cfg: ProbeConfig, classes: list):
    torch.manual_seed(probe_cfg.seed)
    backbone = model.backbone
    head = torch.nn.Linear(model.backbone_spec.channels, len(classes))
    params = list(backbone.parameters()) + list(head.parameters())
    opt = torch.optim.SGD(params, lr=probe_cfg.finetune_lr, momentum=0.9, weight_decay=1e-4)
    rng = np.random.default_rng(probe_cfg.seed)
    recs = list(manifest_train.records)
    index = {c: i for i, c in enumerate(classes)}
    backbone.train()
    for _ in range(probe_cfg.finetune_epochs):
        order = rng.permutation(len(recs))
        for b in range(0, len(order), probe_cfg.finetune_batch):
            xs, ys = [], []
            for i in order[b:b + probe_cfg.finetune_batch]:
                r = recs[i]
                s = int(rng.integers(0, r.num_frames - cfg.l_n + 1))
                clip = augment(read_clip(r, s, cfg.l_n), cfg.augmentation, cfg.crop_size, rng)
                xs.append(to_tensor(clip, cfg.mean, cfg.std))
                ys.append(index[r.class_label])
            logits = head(backbone(torch.stack(xs)).mean(dim=(2, 3, 4)))
            loss = F.cross_entropy(logits, torch.tensor(ys))
            opt.zero_grad()
            loss.backward()
            opt.step()
    backbone.eval()
    return head


def linear_probe(model_or_ckpt, manifest_train: CorpusManifest, manifest_test: CorpusManifest,
                 cfg: SamplerConfig, probe_cfg: ProbeConfig = ProbeConfig()) -> float:
    """Top-1 accuracy on ``manifest_test`` with the 10-clip averaged-score protocol."""
    model = _as_model(model_or_ckpt)
    if probe_cfg.mode == "finetune":
        import copy
        model = copy.deepcopy(model)
        classes = sorted({r.class_label for r in manifest_train.records})
        head = _finetune(model, manifest_train, cfg, probe_cfg, classes)
        correct = 0
        with torch.no_grad():
            for r in manifest_test.records:
                x = _clip_batch(r, cfg, probe_cfg.num_clips)
                scores = head(model.pooled_features(x)).mean(dim=0)
                correct += classes[int(scores.argmax())] == r.class_label
        return correct / len(manifest_test.records)
    if probe_cfg.mode != "linear":
        raise ValueError(f"unknown probe mode {probe_cfg.mode!r}")
    tr = [clip_features(model, r, cfg, probe_cfg.num_clips) for r in manifest_train.records]
    te = [clip_features(model, r, cfg, probe_cfg.num_clips) for r in manifest_test.records]
    return probe_from_features(tr, [r.class_label for r in manifest_train.records],
                               te, [r.class_label for r in manifest_test.records], probe_cfg)


@dataclass
class SaliencyResult:
    raw: np.ndarray  # channel-mean pre-pool map [T', h', w'] before normalization
    heatmaps: np.ndarray  # [T', H, W] in [0, 1]
    frame_indices: list  # input frame shown under each heatmap
    paths: list = field(default_factory=list)


def _overlay(frame: np.ndarray, heat: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    # black -> red -> yellow -> white ramp
    color = np.stack([np.clip(3 * heat, 0, 1), np.clip(3 * heat - 1, 0, 1),
                      np.clip(3 * heat - 2, 0, 1)], axis=-1) * 255.0
    out = (1 - alpha) * frame.astype(np.float64) + alpha * color
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


@torch.no_grad()
def saliency_map(model_or_ckpt, clip: torch.Tensor, head: str = "justify",
                 frames: Optional[np.ndarray] = None, out_dir=None,
                 video_id: str = "clip") -> SaliencyResult:
    """Channel-averaged pre-pool map of ``head`` for one clip [3, T, H, W].

    The map is min-max normalized over the whole clip and bilinearly resized
    to frame size. With ``out_dir`` an overlay PNG is written per temporal
    slice to ``<out_dir>/saliency/<video_id>/t%03d.png``; ``frames`` (uint8
    [T, H, W, 3]) supplies the underlay, otherwise the heatmap alone is drawn.
    """
    model = _as_model(model_or_ckpt)
    model.eval()
    fmap = model.heads()[head].feature_map(model.backbone_forward(clip[None]))
    raw = fmap.mean(dim=1)[0]  # [T', h', w']
    lo, hi = raw.min(), raw.max()
    norm = (raw - lo) / (hi - lo) if hi > lo else torch.zeros_like(raw)
    h, w = clip.shape[-2:]
    heat = F.interpolate(norm[:, None].double(), size=(h, w), mode="bilinear",
                         align_corners=False)[:, 0].clamp(0, 1).numpy()
    t_in, t_out = clip.shape[1], raw.shape[0]
    idx = [min(t_in - 1, int((t + 0.5) * t_in / t_out)) for t in range(t_out)]
    result = SaliencyResult(raw.double().numpy(), heat, idx)
    if out_dir is not None:
        d = Path(out_dir) / "saliency" / video_id
        d.mkdir(parents=True, exist_ok=True)
        for t, fi in enumerate(idx):
            under = frames[fi] if frames is not None else np.zeros((h, w, 3), np.uint8)
            p = d / f"t{t:03d}.png"
            Image.fromarray(_overlay(under, heat[t])).save(p)
            result.paths.append(p)
    return result
