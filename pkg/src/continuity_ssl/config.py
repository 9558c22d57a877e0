"""Run configuration: one nested YAML file, strict keys, canonical hash."""

from __future__ import annotations

import copy
import os
from pathlib import Path

import yaml

from .checkpoint import config_hash
from .datakit import SyntheticWorldSpec
from .errors import ConfigError, InvalidSpec
from .evaluation import ProbeConfig
from .losses import LossConfig
from .net import BackboneSpec
from .sampler import AugmentationPolicy, SamplerConfig
from .trainer import TrainConfig

SEED_ENV = "CONTINUITY_SSL_SEED"

DEFAULTS = {
    "seed": 0,
    "synth": {
        "num_videos": 200,
        "test_videos": 60,
        "frames_per_video": 40,
        "resolution": [48, 48],
        "num_shape_classes": 3,
        "motion_speed_range": [2.0, 4.0],
        "size_range": [0.2, 0.3],
        "fps": 25.0,
    },
    "sampler": {
        "l_n": 16,
        "l_m": 8,
        "crop_size": [40, 40],
        "mean": [0.45, 0.45, 0.45],
        "std": [0.225, 0.225, 0.225],
        "augmentation": {
            "enabled": True,
            "color_jitter": [0.4, 0.4, 0.4, 0.1],
            "scale_range": [1.0, 1.2],
            "horizontal_flip_prob": 0.5,
        },
    },
    "backbone": {"architecture": "tiny3d", "feature_channels": None},
    "loss": {"omega": 0.5, "gamma": 0.2, "tau": 0.1, "w1": 1.0, "w2": 1.0, "w3": 0.1},
    "train": {
        "epochs": 30,
        "batch_size": 16,
        "lr": 0.003,
        "momentum": 0.9,
        "weight_decay": 1e-4,
        "lr_decay_epochs": [],
        "lr_decay_factor": 0.1,
        "task_mask": [True, True, True],
    },
    "eval": {
        "num_clips": 10,
        "ks": [1, 5, 10, 20, 50],
        "pretext_samples_per_video": 10,
        "saliency_head": "justify",
        "saliency_videos": 4,
        "probe": {
            "epochs": 300,
            "lr": 0.05,
            "weight_decay": 1e-3,
            "mode": "linear",
            "finetune_epochs": 10,
            "finetune_lr": 0.01,
            "finetune_batch": 16,
        },
    },
}

DEFAULT_CONFIG_TEXT = """\
# continuity-ssl run configuration; omitted keys take these defaults
seed: 0                      # overridden by $CONTINUITY_SSL_SEED

synth:
  num_videos: 200            # train split
  test_videos: 60            # held-out split
  frames_per_video: 40       # must be >= 2*l_n + l_m
  resolution: [48, 48]
  num_shape_classes: 3       # circle, square, triangle
  motion_speed_range: [2.0, 4.0]   # px/frame
  size_range: [0.2, 0.3]     # shape half-size / min(H, W)
  fps: 25.0

sampler:
  l_n: 16                    # clip length
  l_m: 8                     # missing-section length; 4 and 16 are the ablation alternatives
  crop_size: [40, 40]        # 112x112 for real video
  mean: [0.45, 0.45, 0.45]
  std: [0.225, 0.225, 0.225]
  augmentation:
    enabled: true
    color_jitter: [0.4, 0.4, 0.4, 0.1]   # brightness, contrast, saturation, hue
    scale_range: [1.0, 1.2]
    horizontal_flip_prob: 0.5

backbone:
  architecture: tiny3d       # tiny3d | r3d18
  feature_channels: null     # 64 for tiny3d, 512 for r3d18

loss:
  omega: 0.5                 # triplet weight inside L_E; contrastive gets 1 - omega
  gamma: 0.2                 # triplet margin
  tau: 0.1                   # contrastive temperature
  w1: 1.0                    # justification
  w2: 1.0                    # localization
  w3: 0.1                    # missing-section approximation

train:
  epochs: 30                 # large-corpus schedules: 200 epochs / batch 32, or 40 epochs / batch 64
  batch_size: 16
  lr: 0.003                  # 0.01 with batch 32-64 on real video
  momentum: 0.9
  weight_decay: 1.0e-4
  lr_decay_epochs: []        # e.g. [100, 150] for a 200-epoch run
  lr_decay_factor: 0.1
  task_mask: [true, true, true]   # justify, localize, embed

eval:
  num_clips: 10              # uniformly spaced clips averaged per video
  ks: [1, 5, 10, 20, 50]
  pretext_samples_per_video: 10
  saliency_head: justify     # justify | localize | embed
  saliency_videos: 4
  probe:
    epochs: 300
    lr: 0.05
    weight_decay: 1.0e-3
    mode: linear             # linear | finetune
    finetune_epochs: 10
    finetune_lr: 0.01
    finetune_batch: 16
"""


def _merge(defaults: dict, given: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        dotted = f"{path}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {dotted!r} must be a mapping")
            out[key] = _merge(defaults[key], val, dotted + ".")
        else:
            if isinstance(val, dict):
                raise ConfigError(f"config key {dotted!r} must not be a mapping")
            out[key] = val
    return out


class RunConfig:
    """Resolved configuration with typed views onto each section."""

    def __init__(self, data: dict):
        self.data = data
        try:
            self._build()
        except (TypeError, ValueError, InvalidSpec) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, given: dict = None, env=None) -> "RunConfig":
        data = _merge(DEFAULTS, given or {})
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            try:
                data["seed"] = int(env[SEED_ENV])
            except ValueError as exc:
                raise ConfigError(f"{SEED_ENV} must be an integer") from exc
        return cls(data)

    @classmethod
    def load(cls, path=None, env=None) -> "RunConfig":
        if path is None:
            return cls.from_dict({}, env)
        text = Path(path).read_text(encoding="utf-8")
        try:
            given = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(given, dict):
            raise ConfigError("config file must be a mapping")
        return cls.from_dict(given, env)

    @property
    def hash(self) -> str:
        return config_hash(self.data)

    def _build(self):
        d = self.data
        s = d["synth"]
        self.synth = SyntheticWorldSpec(
            num_videos=int(s["num_videos"]), frames_per_video=int(s["frames_per_video"]),
            resolution=tuple(s["resolution"]), num_shape_classes=int(s["num_shape_classes"]),
            motion_speed_range=tuple(s["motion_speed_range"]), rng_seed=int(d["seed"]),
            fps=float(s["fps"]), size_range=tuple(s["size_range"]))
        self.test_videos = int(s["test_videos"])
        a = d["sampler"]["augmentation"]
        aug = AugmentationPolicy(tuple(a["color_jitter"]), tuple(a["scale_range"]),
                                 float(a["horizontal_flip_prob"]), bool(a["enabled"]))
        sm = d["sampler"]
        self.sampler = SamplerConfig(int(sm["l_n"]), int(sm["l_m"]), tuple(sm["crop_size"]), aug,
                                     int(d["seed"]), tuple(sm["mean"]), tuple(sm["std"]))
        b = d["backbone"]
        self.backbone = BackboneSpec(b["architecture"], b["feature_channels"])
        self.loss = LossConfig(**d["loss"])
        t = d["train"]
        self.train = TrainConfig(epochs=int(t["epochs"]), batch_size=int(t["batch_size"]),
                                 lr=float(t["lr"]), momentum=float(t["momentum"]),
                                 weight_decay=float(t["weight_decay"]),
                                 lr_decay_epochs=tuple(t["lr_decay_epochs"]),
                                 lr_decay_factor=float(t["lr_decay_factor"]),
                                 task_mask=tuple(bool(v) for v in t["task_mask"]),
                                 seed=int(d["seed"]))
        if len(self.train.task_mask) != 3:
            raise ConfigError("train.task_mask needs three booleans")
        e = d["eval"]
        p = e["probe"]
        self.probe = ProbeConfig(num_clips=int(e["num_clips"]), epochs=int(p["epochs"]),
                                 lr=float(p["lr"]), weight_decay=float(p["weight_decay"]),
                                 seed=int(d["seed"]), mode=p["mode"],
                                 finetune_epochs=int(p["finetune_epochs"]),
                                 finetune_lr=float(p["finetune_lr"]),
                                 finetune_batch=int(p["finetune_batch"]))
        if p["mode"] not in ("linear", "finetune"):
            raise ConfigError(f"eval.probe.mode must be linear or finetune, got {p['mode']!r}")
        if e["saliency_head"] not in ("justify", "localize", "embed"):
            raise ConfigError("eval.saliency_head must be justify, localize or embed")
        self.ks = [int(k) for k in e["ks"]]
        self.num_clips = int(e["num_clips"])
        self.pretext_samples_per_video = int(e["pretext_samples_per_video"])
        self.saliency_head = e["saliency_head"]
        self.saliency_videos = int(e["saliency_videos"])

    def compatibility_fields(self) -> dict:
        """Checkpoint sidecar fields an evaluation run must agree with."""
        return {
            "sampler.l_n": self.sampler.l_n,
            "sampler.l_m": self.sampler.l_m,
            "sampler.crop_size": list(self.sampler.crop_size),
            "model.backbone.architecture": self.backbone.architecture,
        }
