import json

import pytest
import yaml

from continuity_ssl import cli, losses
from continuity_ssl.config import DEFAULT_CONFIG_TEXT, DEFAULTS, RunConfig
from continuity_ssl.errors import ConfigError

TINY = {
    "synth": {"num_videos": 6, "test_videos": 3, "frames_per_video": 20, "resolution": [28, 28]},
    "sampler": {"l_n": 8, "l_m": 4, "crop_size": [24, 24]},
    "train": {"epochs": 1, "batch_size": 3},
    "eval": {"num_clips": 2, "ks": [1, 3], "pretext_samples_per_video": 1, "saliency_videos": 1,
             "probe": {"epochs": 20}},
}


def _write(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> pretrain -> extract (train, test) on a tiny corpus."""
    root = tmp_path_factory.mktemp("cli")
    cfg = _write(root / "run.yaml", TINY)
    assert cli.main(["synth", "--config", cfg, "--out", str(root / "data")]) == 0
    assert cli.main(["pretrain", "--config", cfg, "--data", str(root / "data"),
                     "--out", str(root / "pre")]) == 0
    ckpt = root / "pre" / "ckpt_epoch_0001.bin"
    for split in ("train", "test"):
        assert cli.main(["extract", "--config", cfg, "--data", str(root / "data"), "--checkpoint",
                         str(ckpt), "--split", split, "--out", str(root / f"feat_{split}")]) == 0
    return root, cfg, ckpt


def test_pipeline_emits_declared_files(pipeline):
    root, cfg, ckpt = pipeline
    assert (root / "data" / "train" / "manifest.jsonl").is_file()
    assert (root / "data" / "test" / "manifest.jsonl").is_file()
    assert (root / "pre" / "metrics.jsonl").is_file() and ckpt.with_suffix(".json").is_file()
    run = json.loads((root / "pre" / "run.json").read_text())
    assert run["command"] == "pretrain" and len(run["config_hash"]) == 64
    assert 0.0 <= run["justify_acc"] <= 1.0
    assert {"input_hash", "wall_seconds"} <= set(run)
    assert (root / "feat_train" / "features.jsonl").is_file()

    out = root / "ret"
    assert cli.main(["retrieve", "--config", cfg,
                     "--train-features", str(root / "feat_train" / "features.jsonl"),
                     "--test-features", str(root / "feat_test" / "features.jsonl"),
                     "--out", str(out)]) == 0
    rep = json.loads((out / "retrieval.json").read_text())
    assert set(rep["recall_at"]) == {"1", "3"} and rep["num_queries"] == 3
    assert (out / "run.json").is_file()


def test_probe_and_saliency(pipeline):
    root, cfg, ckpt = pipeline
    assert cli.main(["probe", "--config", cfg, "--data", str(root / "data"),
                     "--checkpoint", str(ckpt), "--out", str(root / "probe")]) == 0
    assert 0.0 <= json.loads((root / "probe" / "probe.json").read_text())["top1"] <= 1.0
    assert cli.main(["saliency", "--config", cfg, "--data", str(root / "data"),
                     "--checkpoint", str(ckpt), "--out", str(root / "sal")]) == 0
    pngs = list((root / "sal" / "saliency").rglob("t*.png"))
    assert len(pngs) > 0


def test_k_too_large_is_config_error(pipeline, tmp_path, capsys):
    root, _, _ = pipeline
    cfg = _write(tmp_path / "k.yaml", {**TINY, "eval": {**TINY["eval"], "ks": [50]}})
    code = cli.main(["retrieve", "--config", cfg,
                     "--train-features", str(root / "feat_train" / "features.jsonl"),
                     "--test-features", str(root / "feat_test" / "features.jsonl"),
                     "--out", str(tmp_path / "r")])
    assert code == 2
    assert "eval.ks" in capsys.readouterr().err


def test_incompatible_checkpoint_exit_4(pipeline, tmp_path, capsys):
    root, _, ckpt = pipeline
    other = {**TINY, "sampler": {**TINY["sampler"], "l_n": 6}}
    cfg = _write(tmp_path / "ln.yaml", other)
    code = cli.main(["probe", "--config", cfg, "--data", str(root / "data"),
                     "--checkpoint", str(ckpt), "--out", str(tmp_path / "p")])
    assert code == 4
    err = capsys.readouterr().err
    assert "sampler.l_n" in err and "checkpoint=8" in err and "config=6" in err


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.yaml", {"sampler": {"l_q": 3}})
    assert cli.main(["synth", "--config", cfg, "--out", str(tmp_path / "d")]) == 2
    assert "sampler.l_q" in capsys.readouterr().err


def test_missing_input_exit_3(tmp_path):
    assert cli.main(["pretrain", "--data", str(tmp_path / "nowhere"),
                     "--out", str(tmp_path / "o")]) == 3


def test_synth_is_reproducible(tmp_path):
    cfg = _write(tmp_path / "s.yaml", TINY)
    hashes = []
    for name in ("a", "b"):
        assert cli.main(["synth", "--config", cfg, "--out", str(tmp_path / name)]) == 0
        hashes.append(json.loads((tmp_path / name / "run.json").read_text())["manifest_hash"])
        assert cli.content_hash([tmp_path / name / "train"]) == \
            cli.content_hash([tmp_path / "a" / "train"])
    assert hashes[0] == hashes[1]


def test_seed_env_override(tmp_path):
    base = RunConfig.from_dict({}, env={})
    over = RunConfig.from_dict({}, env={"CONTINUITY_SSL_SEED": "9"})
    assert over.train.seed == 9 and over.synth.rng_seed == 9 and base.train.seed == 0
    assert over.hash != base.hash
    with pytest.raises(ConfigError):
        RunConfig.from_dict({}, env={"CONTINUITY_SSL_SEED": "x"})


def test_config_hash_stable_under_reordering(tmp_path):
    a = tmp_path / "a.yaml"
    b = tmp_path / "b.yaml"
    a.write_text("seed: 1\nloss:\n  tau: 0.2\n  gamma: 0.3\n")
    b.write_text("loss: {gamma: 0.3,   tau: 0.2}\n\nseed: 1\n")
    assert RunConfig.load(a, env={}).hash == RunConfig.load(b, env={}).hash
    assert RunConfig.load(a, env={}).hash != RunConfig.from_dict({"seed": 1}, env={}).hash


def test_default_config_text_matches_defaults(capsys):
    assert yaml.safe_load(DEFAULT_CONFIG_TEXT) == DEFAULTS
    assert cli.main(["default-config"]) == 0
    assert yaml.safe_load(capsys.readouterr().out) == DEFAULTS


def test_verify_detects_perturbed_loss(monkeypatch, capsys):
    from continuity_ssl import verify

    original = losses.loss_justification
    monkeypatch.setattr(losses, "loss_justification", lambda d, c: original(d, c) * 1.001)
    monkeypatch.setattr(verify, "SUITES", {"loss oracles": verify.SUITES["loss oracles"],
                                           "closed forms": verify.SUITES["closed forms"]})
    assert cli.main(["verify"]) == 1
    out = capsys.readouterr().out
    assert "FAILED" in out and "justification" in out
