"""Same-batch pretraining with SGD and step decay, checkpointing, pretext evaluation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .checkpoint import config_hash, load_checkpoint, load_model, save_checkpoint
from .datakit import CorpusManifest
from .errors import EmptyCorpus, NonFiniteLoss
from .losses import LossConfig, joint_loss
from .net import BackboneSpec, ContinuityNet
from .sampler import SamplerConfig, TensorBatch, build_batch

log = logging.getLogger(__name__)

METRIC_KEYS = ("loss_total", "loss_j", "loss_l", "loss_e", "loss_e_triplet", "loss_e_contrastive")
TASK_NAMES = ("justify", "localize", "embed")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.003
    momentum: float = 0.9
    weight_decay: float = 1e-4
    # lr is multiplied by lr_decay_factor once every listed epoch has completed
    lr_decay_epochs: tuple = ()
    lr_decay_factor: float = 0.1
    task_mask: tuple = (True, True, True)  # (justify, localize, embed)
    seed: int = 0

    def __post_init__(self):
        if not any(self.task_mask):
            raise ValueError("task_mask must enable at least one task")


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate used during 1-based ``epoch``."""
    n_decays = sum(1 for m in cfg.lr_decay_epochs if epoch > m)
    return cfg.lr * cfg.lr_decay_factor ** n_decays


@dataclass
class TrainState:
    model: ContinuityNet
    optimizer: torch.optim.Optimizer
    train_cfg: TrainConfig
    epoch: int = 0  # completed epochs
    global_step: int = 0
    metric_history: list = field(default_factory=list)


def init_state(train_cfg: TrainConfig, backbone: BackboneSpec = BackboneSpec(), l_n: int = 16) -> TrainState:
    torch.manual_seed(train_cfg.seed)
    model = ContinuityNet(backbone, l_n)
    opt = torch.optim.SGD(model.parameters(), lr=train_cfg.lr, momentum=train_cfg.momentum,
                          weight_decay=train_cfg.weight_decay)
    return TrainState(model, opt, train_cfg)


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


def _batch_stats(batch: TensorBatch) -> dict:
    stats = {}
    for name in ("c_c", "c_d", "c_m"):
        x = getattr(batch, name)
        stats[name] = {"min": float(x.min()), "max": float(x.max()), "mean": float(x.mean()),
                       "finite": bool(torch.isfinite(x).all())}
    stats["labels"] = batch.labels.tolist()
    stats["video_ids"] = list(batch.video_ids)
    return stats


def train_step(state: TrainState, batch: TensorBatch, loss_cfg: LossConfig = LossConfig()):
    """One SGD update on the masked joint loss. Returns the loss breakdown."""
    model = state.model
    model.train()
    mask = state.train_cfg.task_mask
    embeds = model.forward_all(batch, tasks=mask)
    breakdown = joint_loss(embeds, batch.labels, loss_cfg, task_mask=mask)
    if not torch.isfinite(breakdown.total):
        raise NonFiniteLoss(state.global_step, {"losses": breakdown.as_floats(),
                                                "batch": _batch_stats(batch)})
    state.optimizer.zero_grad(set_to_none=True)
    breakdown.total.backward()
    state.optimizer.step()
    state.global_step += 1
    return breakdown


def _epoch_order(video_ids, seed: int, epoch: int) -> list:
    rng = np.random.default_rng([seed & 0xFFFFFFFF, epoch, 0x5EED])
    ids = sorted(video_ids)
    return [ids[i] for i in rng.permutation(len(ids))]


def run_config(sampler_cfg, train_cfg, loss_cfg, backbone) -> dict:
    return {"sampler": asdict(sampler_cfg), "train": asdict(train_cfg),
            "loss": asdict(loss_cfg), "backbone": asdict(backbone)}


def _sidecar(state, sampler_cfg, loss_cfg, cfg_hash) -> dict:
    return {"model": state.model.config(), "sampler": asdict(sampler_cfg),
            "train": asdict(state.train_cfg), "loss": asdict(loss_cfg),
            "config_hash": cfg_hash, "epoch": state.epoch, "global_step": state.global_step}


def checkpoint_name(epoch: int) -> str:
    return f"ckpt_epoch_{epoch:04d}.bin"


def save_state(state: TrainState, path, sampler_cfg, loss_cfg, cfg_hash) -> Path:
    payload = {"model": state.model.state_dict(), "optimizer": state.optimizer.state_dict(),
               "epoch": state.epoch, "global_step": state.global_step,
               "torch_rng": torch.get_rng_state(),
               "metric_history": json.dumps(state.metric_history)}
    return save_checkpoint(path, payload, _sidecar(state, sampler_cfg, loss_cfg, cfg_hash))


def restore_state(path) -> TrainState:
    payload, meta = load_checkpoint(path)
    tc = meta["train"]
    train_cfg = TrainConfig(**{**tc, "lr_decay_epochs": tuple(tc["lr_decay_epochs"]),
                               "task_mask": tuple(tc["task_mask"])})
    net = meta["model"]
    state = init_state(train_cfg, BackboneSpec(**net["backbone"]), net["l_n"])
    state.model.load_state_dict(payload["model"])
    state.optimizer.load_state_dict(payload["optimizer"])
    state.epoch = payload["epoch"]
    state.global_step = payload["global_step"]
    state.metric_history = json.loads(payload["metric_history"])
    torch.set_rng_state(payload["torch_rng"])
    return state


def pretrain(manifest: CorpusManifest, sampler_cfg: SamplerConfig, train_cfg: TrainConfig,
             loss_cfg: LossConfig = LossConfig(), out_dir=None,
             backbone: BackboneSpec = BackboneSpec(), resume_from=None,
             cfg_hash: Optional[str] = None, state: Optional[TrainState] = None):
    """Pretrain for ``train_cfg.epochs`` epochs; one triple per video per epoch.

    Writes ``metrics.jsonl`` and ``ckpt_epoch_NNNN.bin`` (+ ``.json``) into
    ``out_dir`` after every epoch and returns the last checkpoint path, or the
    final TrainState when ``out_dir`` is None.
    """
    records = [r for r in manifest.records if r.num_frames >= sampler_cfg.min_frames]
    if not records:
        raise EmptyCorpus("no video is long enough for the sampler")
    manifest = replace(manifest, records=tuple(records)).materialize()
    if cfg_hash is None:
        cfg_hash = config_hash(run_config(sampler_cfg, train_cfg, loss_cfg, backbone))
    if resume_from is not None:
        state = restore_state(resume_from)
    elif state is None:
        state = init_state(train_cfg, backbone, sampler_cfg.l_n)
    seed = train_cfg.seed
    sampler_cfg = replace(sampler_cfg, rng_seed=seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    last = None
    ids = manifest.video_ids
    k = train_cfg.batch_size
    for epoch in range(state.epoch + 1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_at_epoch(train_cfg, epoch)
        _set_lr(state.optimizer, lr)
        order = _epoch_order(ids, seed, epoch)
        sums = dict.fromkeys(METRIC_KEYS, 0.0)
        n_steps = 0
        for b in range(0, len(order), k):
            batch = build_batch(manifest, sampler_cfg, order[b:b + k], draw=epoch)
            bd = train_step(state, batch, loss_cfg).as_floats()
            for key, v in zip(METRIC_KEYS, ("total", "l_j", "l_l", "l_e", "l_e_triplet",
                                            "l_e_contrastive")):
                sums[key] += bd[v]
            n_steps += 1
        state.epoch = epoch
        record = {"epoch": epoch, "lr": lr, **{key: v / n_steps for key, v in sums.items()},
                  "wall_seconds": time.perf_counter() - t0}
        state.metric_history.append(record)
        log.info("epoch %d: %s", epoch, record)
        if out is not None:
            with open(out / "metrics.jsonl", "a", encoding="utf-8", newline="\n") as f:
                f.write(json.dumps(record) + "\n")
            last = save_state(state, out / checkpoint_name(epoch), sampler_cfg, loss_cfg, cfg_hash)
    if out is None:
        return state
    if last is None:
        last = save_state(state, out / checkpoint_name(state.epoch), sampler_cfg, loss_cfg, cfg_hash)
    return last


def _as_model(model_or_ckpt):
    if isinstance(model_or_ckpt, ContinuityNet):
        return model_or_ckpt
    return load_model(model_or_ckpt)[0]


@torch.no_grad()
def evaluate_pretext(model_or_ckpt, manifest_val: CorpusManifest, sampler_cfg: SamplerConfig,
                     samples_per_video: int = 1, seed: int = 12345, batch_size: int = 32):
    """Held-out (justify_acc, localize_top1).

    Justification is scored on one continuous and one discontinuous clip per
    triple; localization on the discontinuous clip. Center crop only.
    """
    model = _as_model(model_or_ckpt)
    was_training = model.training
    model.eval()
    cfg = replace(sampler_cfg, rng_seed=seed,
                  augmentation=replace(sampler_cfg.augmentation, enabled=False))
    records = [r for r in manifest_val.records if r.num_frames >= cfg.min_frames]
    manifest = replace(manifest_val, records=tuple(records)).materialize()
    jobs = [(r.video_id, d) for d in range(samples_per_video) for r in records]
    just_ok = loc_ok = n = 0
    for b in range(0, len(jobs), batch_size):
        chunk = jobs[b:b + batch_size]
        batches = [build_batch(manifest, cfg, [vid], draw=d) for vid, d in chunk]
        c_c = torch.cat([x.c_c for x in batches])
        c_d = torch.cat([x.c_d for x in batches])
        labels = torch.cat([x.labels for x in batches])
        f = model.backbone_forward(torch.cat([c_c, c_d]))
        k = len(chunk)
        just = model.justify(f).argmax(1)
        just_ok += int((just[:k] == 0).sum()) + int((just[k:] == 1).sum())
        loc_ok += int((model.localize(f[k:]).argmax(1) == labels).sum())
        n += k
    model.train(was_training)
    return just_ok / (2 * n), loc_ok / n
