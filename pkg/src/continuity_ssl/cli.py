"""``continuity-ssl`` command line.

Exit codes: 0 ok, 1 verification failure, 2 configuration error, 3 I/O error,
4 checkpoint/config incompatibility.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import verify as verify_mod
from .checkpoint import check_compatible, load_model
from .config import DEFAULT_CONFIG_TEXT, RunConfig
from .datakit import generate_synthetic_corpus, load_manifest, read_clip
from .errors import (
    CheckpointWriteFailure,
    CompatibilityError,
    ConfigError,
    CorruptFrame,
    EmptyCorpus,
    InvalidSpec,
    KTooLarge,
    MissingManifest,
    VideoTooShort,
    WriteFailure,
)
from .evaluation import (
    extract_features,
    linear_probe,
    read_features,
    retrieval,
    saliency_map,
    write_features,
)
from .sampler import center_crop, to_tensor
from .trainer import evaluate_pretext, pretrain

log = logging.getLogger("continuity_ssl")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO, EXIT_COMPAT = 0, 1, 2, 3, 4


def content_hash(paths) -> str:
    """sha256 over the bytes of every file under ``paths`` (sorted, path-qualified)."""
    h = hashlib.sha256()
    files = []
    for p in paths:
        p = Path(p)
        files += sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
    for f in files:
        h.update(str(f.name).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def _write_run(out: Path, command: str, cfg: RunConfig, inputs, t0: float, **extra):
    out.mkdir(parents=True, exist_ok=True)
    summary = {"command": command, "config_hash": cfg.hash,
               "input_hash": content_hash(inputs) if inputs else None,
               "wall_seconds": time.perf_counter() - t0, **extra}
    (out / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")


def _checked_model(cfg: RunConfig, ckpt):
    model, meta = load_model(ckpt)
    check_compatible(meta, cfg.compatibility_fields())
    return model


def cmd_synth(cfg: RunConfig, args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    generate_synthetic_corpus(cfg.synth, out, "train", cfg.sampler)
    if cfg.test_videos > 0:
        from dataclasses import replace
        test_spec = replace(cfg.synth, num_videos=cfg.test_videos, rng_seed=cfg.synth.rng_seed + 1)
        generate_synthetic_corpus(test_spec, out, "test", cfg.sampler)
    _write_run(out, "synth", cfg, None, t0,
               manifest_hash=content_hash([out / "train" / "manifest.jsonl"]))
    return EXIT_OK


def cmd_pretrain(cfg: RunConfig, args) -> int:
    t0 = time.perf_counter()
    train = load_manifest(args.data, "train", cfg.sampler.min_frames)
    ckpt = pretrain(train, cfg.sampler, cfg.train, cfg.loss, args.out, cfg.backbone,
                    resume_from=args.resume, cfg_hash=cfg.hash)
    extra = {"checkpoint": str(ckpt)}
    test_dir = Path(args.data) / "test" / "manifest.jsonl"
    if test_dir.is_file():
        test = load_manifest(args.data, "test", cfg.sampler.min_frames)
        j, l = evaluate_pretext(ckpt, test, cfg.sampler, cfg.pretext_samples_per_video)
        extra.update(justify_acc=j, localize_top1=l)
    _write_run(Path(args.out), "pretrain", cfg, [Path(args.data) / "train" / "manifest.jsonl"],
               t0, **extra)
    return EXIT_OK


def cmd_extract(cfg: RunConfig, args) -> int:
    t0 = time.perf_counter()
    model = _checked_model(cfg, args.checkpoint)
    manifest = load_manifest(args.data, args.split, cfg.sampler.l_n)
    feats = extract_features(model, manifest, cfg.sampler, cfg.num_clips)
    path = write_features(Path(args.out) / "features.jsonl", feats)
    _write_run(Path(args.out), "extract", cfg, [args.checkpoint], t0,
               features=str(path), split=args.split)
    return EXIT_OK


def cmd_retrieve(cfg: RunConfig, args) -> int:
    t0 = time.perf_counter()
    train = read_features(args.train_features)
    test = read_features(args.test_features)
    try:
        report = retrieval(train, test, cfg.ks)
    except KTooLarge as exc:
        raise ConfigError(f"eval.ks: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = {"recall_at": {str(k): v for k, v in report.recall_at.items()},
              "num_queries": report.num_queries}
    (out / "retrieval.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    _write_run(out, "retrieve", cfg, [args.train_features, args.test_features], t0, **result)
    print(json.dumps(result))
    return EXIT_OK


def cmd_probe(cfg: RunConfig, args) -> int:
    t0 = time.perf_counter()
    model = _checked_model(cfg, args.checkpoint)
    train = load_manifest(args.data, "train", cfg.sampler.l_n)
    test = load_manifest(args.data, "test", cfg.sampler.l_n)
    acc = linear_probe(model, train, test, cfg.sampler, cfg.probe)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "probe.json").write_text(json.dumps({"top1": acc, "mode": cfg.probe.mode}) + "\n",
                                    encoding="utf-8")
    _write_run(out, "probe", cfg, [args.checkpoint], t0, top1=acc)
    print(json.dumps({"top1": acc}))
    return EXIT_OK


def cmd_saliency(cfg: RunConfig, args) -> int:
    t0 = time.perf_counter()
    model = _checked_model(cfg, args.checkpoint)
    manifest = load_manifest(args.data, args.split, cfg.sampler.l_n)
    records = ([manifest.by_id(v) for v in args.video_id] if args.video_id
               else list(manifest.records[:cfg.saliency_videos]))
    written = 0
    for rec in records:
        start = (rec.num_frames - cfg.sampler.l_n) // 2
        frames = center_crop(read_clip(rec, start, cfg.sampler.l_n), cfg.sampler.crop_size)
        clip = to_tensor(frames, cfg.sampler.mean, cfg.sampler.std)
        res = saliency_map(model, clip, cfg.saliency_head, frames, args.out, rec.video_id)
        written += len(res.paths)
    _write_run(Path(args.out), "saliency", cfg, [args.checkpoint], t0, pngs=written)
    return EXIT_OK


def cmd_verify(cfg, args) -> int:
    results = verify_mod.run_all()
    print(verify_mod.format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


def cmd_default_config(cfg, args) -> int:
    sys.stdout.write(DEFAULT_CONFIG_TEXT)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="continuity-ssl",
                                description="Continuity-perception video self-supervision.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML run configuration (defaults if omitted)")
        sp.set_defaults(func=func)
        return sp

    sp = add("synth", cmd_synth, "render the synthetic moving-shapes corpus")
    sp.add_argument("--out", required=True)
    sp = add("pretrain", cmd_pretrain, "self-supervised pretraining")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume")
    sp = add("extract", cmd_extract, "write clip-averaged backbone features")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="train", choices=("train", "test"))
    sp.add_argument("--out", required=True)
    sp = add("retrieve", cmd_retrieve, "nearest-neighbour retrieval R@k")
    sp.add_argument("--train-features", required=True)
    sp.add_argument("--test-features", required=True)
    sp.add_argument("--out", required=True)
    sp = add("probe", cmd_probe, "linear probe (or finetune) top-1")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp = add("saliency", cmd_saliency, "channel-averaged head activation overlays")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="test", choices=("train", "test"))
    sp.add_argument("--video-id", action="append")
    sp.add_argument("--out", required=True)
    add("verify", cmd_verify, "run the oracle and gradient self-checks")
    add("default-config", cmd_default_config, "print the default configuration")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        return args.func(cfg, args)
    except (ConfigError, InvalidSpec) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CompatibilityError as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        for key, (have, want) in exc.diff.items():
            print(f"  {key}: checkpoint={have!r} config={want!r}", file=sys.stderr)
        return EXIT_COMPAT
    except (OSError, MissingManifest, CorruptFrame, EmptyCorpus, WriteFailure,
            CheckpointWriteFailure, VideoTooShort) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
