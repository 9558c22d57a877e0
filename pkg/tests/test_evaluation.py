import numpy as np
import pytest
import torch

from continuity_ssl.datakit import VideoRecord, read_clip
from continuity_ssl.errors import EmptySet, KTooLarge, VideoTooShort
from continuity_ssl.evaluation import (
    ProbeConfig,
    VideoFeature,
    clip_starts,
    extract_features,
    extract_video_feature,
    linear_probe,
    probe_from_features,
    rank_neighbors,
    read_features,
    retrieval,
    saliency_map,
    write_features,
)
from continuity_ssl.net import ContinuityNet
from continuity_ssl.sampler import SamplerConfig, center_crop, to_tensor

CFG = SamplerConfig(l_n=8, l_m=4, crop_size=(24, 24))


def _feats(n, dim=8, classes=("a", "b", "c"), seed=0, prefix="v"):
    rng = np.random.default_rng(seed)
    return [VideoFeature(f"{prefix}{i:03d}", classes[i % len(classes)], rng.normal(size=dim))
            for i in range(n)]


def _brute_force_recall(train, test, ks):
    out = {}
    for k in ks:
        hits = 0
        for q in test:
            scored = []
            for f in train:
                sim = float(np.dot(q.feature, f.feature)
                            / (np.linalg.norm(q.feature) * np.linalg.norm(f.feature)))
                scored.append((-sim, f.video_id, f.class_label))
            scored.sort()
            hits += q.class_label in [c for _, _, c in scored[:k]]
        out[k] = hits / len(test)
    return out


def test_clip_starts_clamp_and_spacing():
    assert clip_starts(8, 8, 10) == [0] * 10
    s = clip_starts(40, 16, 10)
    assert s[0] == 0 and s[-1] == 24 and s == sorted(s)
    with pytest.raises(VideoTooShort):
        clip_starts(7, 8)


def test_feature_is_mean_of_clip_features(small_corpus):
    _, train, _ = small_corpus
    model = ContinuityNet(l_n=8).eval()
    rec = train.records[0]
    vf = extract_video_feature(model, rec, CFG)
    singles = []
    for s in clip_starts(rec.num_frames, CFG.l_n, 10):
        x = to_tensor(center_crop(read_clip(rec, s, 8), CFG.crop_size))[None]
        with torch.no_grad():
            singles.append(model.pooled_features(x)[0].double().numpy())
    assert vf.feature.shape == (64,)
    assert np.allclose(vf.feature, np.mean(singles, axis=0), atol=1e-6)


def test_short_video_feature_equals_single_clip():
    frames = np.random.default_rng(0).integers(0, 256, (8, 24, 24, 3), dtype=np.uint8)
    rec = VideoRecord("x", "a", 8, 25.0, 24, 24, frames)
    model = ContinuityNet(l_n=8).eval()
    vf = extract_video_feature(model, rec, CFG)
    with torch.no_grad():
        one = model.pooled_features(to_tensor(frames)[None])[0].double().numpy()
    assert np.allclose(vf.feature, one, atol=1e-6)
    twin = VideoRecord("y", "a", 8, 25.0, 24, 24, frames.copy())
    assert np.array_equal(extract_video_feature(model, twin, CFG).feature, vf.feature)


def test_features_file_round_trip(small_corpus, tmp_path):
    _, train, _ = small_corpus
    feats = extract_features(ContinuityNet(l_n=8), train, CFG, num_clips=2)
    path = write_features(tmp_path / "features.jsonl", feats)
    back = read_features(path)
    assert [f.video_id for f in back] == train.video_ids
    assert all(np.array_equal(a.feature, b.feature) for a, b in zip(feats, back))


def test_retrieval_self_match():
    train = _feats(20)
    assert retrieval(train, train, [1, 5]).recall_at[1] == 1.0


def test_retrieval_matches_brute_force():
    train, test = _feats(20, seed=1), _feats(15, seed=2, prefix="q")
    ks = [1, 2, 5, 10, 20]
    rep = retrieval(train, test, ks)
    assert rep.recall_at == _brute_force_recall(train, test, ks)
    assert rep.num_queries == 15
    vals = [rep.recall_at[k] for k in ks]
    assert vals == sorted(vals) and vals[-1] == 1.0


def test_retrieval_random_is_chance():
    train, test = _feats(300, dim=16, seed=3), _feats(600, dim=16, seed=4, prefix="q")
    r1 = retrieval(train, test, [1]).recall_at[1]
    assert abs(r1 - 1 / 3) < 3 * np.sqrt((1 / 3) * (2 / 3) / 600)


def test_retrieval_scale_invariance_and_duplicates():
    train, test = _feats(30, seed=5), _feats(10, seed=6, prefix="q")
    rep = retrieval(train, test, [1, 5, 10])
    scaled = [VideoFeature(f.video_id, f.class_label, 7.5 * f.feature) for f in train]
    assert retrieval(scaled, test, [1, 5, 10]).recall_at == rep.recall_at
    dupes = train + [VideoFeature("z" + q.video_id, q.class_label, q.feature) for q in test]
    grown = retrieval(dupes, test, [1, 5, 10]).recall_at
    assert all(grown[k] >= rep.recall_at[k] for k in (1, 5, 10))


def test_rank_ties_broken_by_id():
    train = np.ones((3, 4))
    assert rank_neighbors(np.ones(4), train, ["c", "a", "b"]).tolist() == [1, 2, 0]


def test_retrieval_errors():
    with pytest.raises(KTooLarge):
        retrieval(_feats(20), _feats(3), [50])
    with pytest.raises(EmptySet):
        retrieval([], _feats(3), [1])


def _separable(n_per, dim=6, seed=0, noise=0.3, noise_seed=None):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(3, dim)) * 3
    if noise_seed is not None:
        rng = np.random.default_rng(noise_seed)
    feats, labels = [], []
    for c in range(3):
        for _ in range(n_per):
            feats.append(centers[c] + noise * rng.normal(size=(4, dim)))
            labels.append("abc"[c])
    return feats, labels


def test_probe_learns_separable_classes():
    xtr, ytr = _separable(30, seed=1)
    xte, yte = _separable(30, seed=1, noise_seed=9)
    assert probe_from_features(xtr, ytr, xte, yte, ProbeConfig(epochs=200)) == 1.0


def test_probe_with_shuffled_labels_is_chance():
    xtr, ytr = _separable(100, seed=4)
    xte, yte = _separable(200, seed=4)
    rng = np.random.default_rng(5)
    # shuffled labels carry no information about any test video
    acc = probe_from_features(xtr, list(rng.permutation(ytr)), xte,
                              list(rng.permutation(yte)), ProbeConfig(epochs=100))
    assert abs(acc - 1 / 3) <= 3 * np.sqrt((1 / 3) * (2 / 3) / 600)


def test_probe_deterministic(small_corpus):
    _, train, test = small_corpus
    model = ContinuityNet(l_n=8)
    cfg = ProbeConfig(num_clips=2, epochs=50)
    a = linear_probe(model, train, test, CFG, cfg)
    b = linear_probe(model, train, test, CFG, cfg)
    assert a == b and 0.0 <= a <= 1.0


def test_finetune_mode_runs(small_corpus):
    _, train, test = small_corpus
    model = ContinuityNet(l_n=8)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    acc = linear_probe(model, train, test, CFG,
                       ProbeConfig(num_clips=2, mode="finetune", finetune_epochs=1, finetune_batch=4))
    assert 0.0 <= acc <= 1.0
    # finetuning works on a copy
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_saliency_constant_input_is_flat():
    torch.manual_seed(0)
    model = ContinuityNet(l_n=16).eval()
    clip = torch.full((3, 16, 112, 112), 0.3)
    for head in ("justify", "localize", "embed"):
        res = saliency_map(model, clip, head)
        t, h, w = res.raw.shape
        y0, x0 = int(round(h * 0.1)), int(round(w * 0.1))
        interior = res.raw[:, y0:h - y0, x0:w - x0]
        assert np.ptp(interior, axis=(1, 2)).max() < 1e-3


def test_saliency_writes_one_png_per_slice(small_corpus, tmp_path):
    _, train, _ = small_corpus
    rec = train.records[0]
    frames = center_crop(read_clip(rec, 0, 16), (32, 32))
    res = saliency_map(ContinuityNet(l_n=16), to_tensor(frames), "justify", frames, tmp_path,
                       rec.video_id)
    assert len(res.paths) == res.raw.shape[0] == res.heatmaps.shape[0]
    assert sorted(p.name for p in (tmp_path / "saliency" / rec.video_id).iterdir()) == \
        [f"t{t:03d}.png" for t in range(res.raw.shape[0])]
    assert res.heatmaps.shape[1:] == (32, 32)
    assert res.heatmaps.min() >= 0.0 and res.heatmaps.max() <= 1.0
