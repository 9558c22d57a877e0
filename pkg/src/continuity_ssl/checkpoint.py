"""Self-describing checkpoints: a torch-serialized ``.bin`` plus a JSON sidecar."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import torch

from .errors import CheckpointWriteFailure, CompatibilityError
from .net import BackboneSpec, ContinuityNet


def config_hash(obj) -> str:
    """sha256 of the canonical JSON form (sorted keys, no whitespace)."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _atomic_write(path: Path, write) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            write(f)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise CheckpointWriteFailure(f"could not write {path}: {exc}") from exc


def sidecar_path(bin_path) -> Path:
    return Path(bin_path).with_suffix(".json")


def save_checkpoint(bin_path, payload: dict, sidecar: dict) -> Path:
    """Write ``payload`` with torch.save and ``sidecar`` as JSON, each atomically."""
    bin_path = Path(bin_path)
    _atomic_write(bin_path, lambda f: torch.save(payload, f))
    text = json.dumps(sidecar, indent=2, sort_keys=True).encode()
    _atomic_write(sidecar_path(bin_path), lambda f: f.write(text))
    return bin_path


def read_sidecar(bin_path) -> dict:
    with open(sidecar_path(bin_path), encoding="utf-8") as f:
        return json.load(f)


def load_checkpoint(bin_path):
    """Return ``(payload, sidecar)``."""
    payload = torch.load(bin_path, map_location="cpu", weights_only=True)
    return payload, read_sidecar(bin_path)


def load_model(bin_path) -> tuple:
    """Rebuild the network stored at ``bin_path``; returns ``(model, sidecar)`` in eval mode."""
    payload, meta = load_checkpoint(bin_path)
    net_cfg = meta["model"]
    model = ContinuityNet(BackboneSpec(**net_cfg["backbone"]), net_cfg["l_n"], net_cfg["embed_dim"])
    model.load_state_dict(payload["model"])
    model.eval()
    return model, meta


def check_compatible(meta: dict, expected: dict) -> None:
    """Raise CompatibilityError listing every field of ``expected`` that ``meta`` contradicts.

    Keys in ``expected`` are dotted paths into the sidecar, e.g. ``"sampler.l_n"``.
    """
    diff = {}
    for key, want in expected.items():
        node = meta
        for part in key.split("."):
            node = node.get(part) if isinstance(node, dict) else None
        if node != want:
            diff[key] = (node, want)
    if diff:
        raise CompatibilityError(diff)
