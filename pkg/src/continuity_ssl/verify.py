"""Self-check suite behind ``continuity-ssl verify``.

Each check compares a batched implementation with an independent reference
(scalar loops, finite differences, Monte-Carlo counts, closed forms) and
reports pass/fail. Implementations are looked up through their modules at
call time so a patched function is what gets checked.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import torch
from scipy import stats

from . import losses, oracles, sampler
from .datakit import VideoRecord
from .net import ContinuityEmbeddings

LOSS_ABS_TOL = 1e-6
GRAD_REL_TOL = 1e-4
# FD noise floor for gradients that are exactly or nearly zero (float64, h=1e-5)
GRAD_ABS_FLOOR = 1e-8
FD_STEP = 1e-5
CLOSED_FORM_TOL = 1e-9
CHI2_ALPHA = 0.01


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _random_instance(rng, k, dim, l_n=16):
    t = lambda *shape: torch.tensor(rng.normal(size=shape) * 2.0, dtype=torch.float64)
    return {
        "logits_just_d": t(k, 2), "logits_just_c": t(k, 2),
        "logits_loc": t(k, l_n - 1),
        "labels": torch.tensor(rng.integers(0, l_n - 1, size=k)),
        "e_d": t(k, dim), "e_m": t(k, dim), "e_c": t(k, dim),
    }


def _random_loss_cfg(rng):
    return losses.LossConfig(omega=float(rng.uniform()), gamma=float(rng.uniform(0.05, 1.0)),
                             tau=float(rng.uniform(0.05, 1.0)), w1=float(rng.uniform()),
                             w2=float(rng.uniform()), w3=float(rng.uniform()))


def _lists(x):
    return x.tolist()


def check_loss_oracles(n_batches=100, seed=0):
    """Batched losses vs scalar loops on random batches (K in {1,2,3,8}, dim in {4,128})."""
    rng = np.random.default_rng(seed)
    worst = {"justification": 0.0, "localization": 0.0, "approximation": 0.0, "joint": 0.0}
    for b in range(n_batches):
        k = (1, 2, 3, 8)[b % 4]
        dim = (4, 128)[(b // 4) % 2]
        x = _random_instance(rng, k, dim)
        cfg = _random_loss_cfg(rng)
        got_j = float(losses.loss_justification(x["logits_just_d"], x["logits_just_c"]))
        ref_j = oracles.justification(_lists(x["logits_just_d"]), _lists(x["logits_just_c"]))
        got_l = float(losses.loss_localization(x["logits_loc"], x["labels"]))
        ref_l = oracles.localization(_lists(x["logits_loc"]), _lists(x["labels"]))
        got_e = [float(v) for v in losses.loss_approximation(x["e_d"], x["e_m"], x["e_c"], cfg)]
        ref_e = oracles.approximation(_lists(x["e_d"]), _lists(x["e_m"]), _lists(x["e_c"]),
                                      cfg.omega, cfg.gamma, cfg.tau)
        emb = ContinuityEmbeddings(f_d=None, logits_just_c=x["logits_just_c"],
                                   logits_just_d=x["logits_just_d"], logits_loc_d=x["logits_loc"],
                                   e_c=x["e_c"], e_d=x["e_d"], e_m=x["e_m"])
        got_t = float(losses.joint_loss(emb, x["labels"], cfg).total)
        ref_t = oracles.joint(_lists(x["logits_just_d"]), _lists(x["logits_just_c"]),
                              _lists(x["logits_loc"]), _lists(x["labels"]), _lists(x["e_d"]),
                              _lists(x["e_m"]), _lists(x["e_c"]), cfg.omega, cfg.gamma, cfg.tau,
                              cfg.w1, cfg.w2, cfg.w3)
        worst["justification"] = max(worst["justification"], abs(got_j - ref_j))
        worst["localization"] = max(worst["localization"], abs(got_l - ref_l))
        worst["approximation"] = max(worst["approximation"],
                                     *(abs(g - r) for g, r in zip(got_e, ref_e)))
        worst["joint"] = max(worst["joint"], abs(got_t - ref_t))
    return [CheckResult(f"loss oracle: {name}", err <= LOSS_ABS_TOL, f"max abs err {err:.2e}")
            for name, err in worst.items()]


def _grad_check(fn, inputs, h=FD_STEP):
    """Max relative error between autodiff and central differences over all inputs."""
    leaves = [t.detach().clone().requires_grad_(True) for t in inputs]
    fn(*leaves).backward()
    worst = 0.0
    for idx, leaf in enumerate(leaves):
        auto = leaf.grad.reshape(-1).tolist()
        base = [t.detach() for t in leaves]
        shape = base[idx].shape

        def f(flat, idx=idx, shape=shape):
            args = list(base)
            args[idx] = torch.tensor(flat, dtype=torch.float64).reshape(shape)
            return float(fn(*args))

        num = oracles.central_difference(f, base[idx].reshape(-1).tolist(), h)
        for a, n in zip(auto, num):
            err = abs(a - n) / max(abs(a), abs(n), GRAD_ABS_FLOOR / GRAD_REL_TOL)
            worst = max(worst, err)
    return worst


def check_gradients(n_instances=20, seed=1):
    """Autodiff vs central differences for every loss input."""
    rng = np.random.default_rng(seed)
    worst = {"justification": 0.0, "localization": 0.0, "approximation": 0.0, "joint": 0.0}
    for i in range(n_instances):
        k = (1, 2, 3, 8)[i % 4]
        dim = (4, 128)[(i // 4) % 2]
        x = _random_instance(rng, k, dim)
        cfg = _random_loss_cfg(rng)
        labels = x["labels"]
        worst["justification"] = max(worst["justification"], _grad_check(
            losses.loss_justification, [x["logits_just_d"], x["logits_just_c"]]))
        worst["localization"] = max(worst["localization"], _grad_check(
            lambda z: losses.loss_localization(z, labels), [x["logits_loc"]]))
        worst["approximation"] = max(worst["approximation"], _grad_check(
            lambda d, m, c: losses.loss_approximation(d, m, c, cfg)[0],
            [x["e_d"], x["e_m"], x["e_c"]]))

        def total(jd, jc, lo, d, m, c):
            emb = ContinuityEmbeddings(f_d=None, logits_just_c=jc, logits_just_d=jd,
                                       logits_loc_d=lo, e_c=c, e_d=d, e_m=m)
            return losses.joint_loss(emb, labels, cfg).total

        worst["joint"] = max(worst["joint"], _grad_check(
            total, [x["logits_just_d"], x["logits_just_c"], x["logits_loc"],
                    x["e_d"], x["e_m"], x["e_c"]]))
    return [CheckResult(f"gradient: {name}", err <= GRAD_REL_TOL, f"max rel err {err:.2e}")
            for name, err in worst.items()]


def index_video(num_frames, h=2, w=2):
    """In-memory video whose pixel values encode the frame index (base 256 over channels)."""
    t = np.arange(num_frames)
    px = np.stack([t % 256, (t // 256) % 256, np.zeros_like(t)], axis=-1).astype(np.uint8)
    frames = np.broadcast_to(px[:, None, None, :], (num_frames, h, w, 3)).copy()
    return VideoRecord("index_video", None, num_frames, 25.0, h, w, frames)


def frame_ids(clip):
    return clip[:, 0, 0, 0].astype(int) + 256 * clip[:, 0, 0, 1].astype(int)


def check_sampler(total_triples=12_000, seed=2):
    """Concatenation identity, span non-overlap, and chi-square uniformity of break index and start."""
    rng = np.random.default_rng(seed)
    configs = [(l_n, l_m) for l_n in (4, 8, 16) for l_m in (2, 4, 8, 16)]
    per_cfg = total_triples // len(configs)
    concat_ok = overlap_ok = True
    breaks = {l_n: [] for l_n in (4, 8, 16)}
    starts = {}
    for l_n, l_m in configs:
        cfg = sampler.SamplerConfig(l_n=l_n, l_m=l_m, crop_size=(2, 2))
        rec = index_video(cfg.min_frames + 5)
        for _ in range(per_cfg):
            tri = sampler.sample_clip_triple(rec, cfg, rng)
            s, e = tri.initial_span
            j = tri.break_index
            window = np.arange(s, e)
            ok = (np.array_equal(frame_ids(tri.c_d), np.concatenate([window[:j], window[j + l_m:]]))
                  and np.array_equal(frame_ids(tri.c_m), window[j:j + l_m])
                  and np.array_equal(frame_ids(tri.c_c), np.arange(*tri.continuous_span))
                  and len(tri.c_d) == len(tri.c_c) == l_n and len(tri.c_m) == l_m)
            concat_ok &= bool(ok)
            cs, ce = tri.continuous_span
            overlap_ok &= ce <= s or cs >= e
            breaks[l_n].append(j)
            starts.setdefault((l_n, l_m), []).append(s)
    results = [
        CheckResult("sampler: concatenation identity", concat_ok,
                    f"{per_cfg * len(configs)} triples"),
        CheckResult("sampler: span non-overlap", overlap_ok, f"{per_cfg * len(configs)} triples"),
    ]
    for l_n, js in breaks.items():
        counts = np.bincount(np.array(js) - 1, minlength=l_n - 1)
        p = stats.chisquare(counts).pvalue
        results.append(CheckResult(f"sampler: break uniformity l_n={l_n}", p > CHI2_ALPHA,
                                   f"chi2 p={p:.3f} over {len(js)} draws"))
    # start-position uniformity, pooled per l_n over configs with equal range
    for l_n in (4, 8, 16):
        pvals = []
        for (ln, l_m), ss in starts.items():
            if ln != l_n:
                continue
            n = 2 * l_n + l_m + 5
            win = l_n + l_m
            # brute-force: window starts admitting some disjoint length-l_n clip
            feasible = [s for s in range(n - win + 1)
                        if any(s2 + l_n <= s or s2 >= s + win for s2 in range(n - l_n + 1))]
            counts = np.bincount(ss, minlength=n - win + 1)
            if counts[[i for i in range(n - win + 1) if i not in feasible]].any():
                pvals.append(0.0)
                continue
            pvals.append(stats.chisquare(counts[feasible]).pvalue)
        # Fisher combination of the independent per-config tests
        p = stats.combine_pvalues(pvals).pvalue
        results.append(CheckResult(f"sampler: start uniformity l_n={l_n}", p > CHI2_ALPHA,
                                   f"combined chi2 p={p:.3f}"))
    return results


def check_closed_forms():
    out = []
    z2 = torch.zeros(1, 2, dtype=torch.float64)
    lj = float(losses.loss_justification(z2, z2))
    out.append(CheckResult("closed form: uniform L_J = 2 ln 2",
                           abs(lj - 2 * math.log(2)) <= CLOSED_FORM_TOL, f"{lj:.12f}"))
    for l_n in (4, 8, 16):
        ll = float(losses.loss_localization(torch.zeros(3, l_n - 1, dtype=torch.float64),
                                            torch.tensor([0, 1, l_n - 2])))
        out.append(CheckResult(f"closed form: uniform L_L = ln {l_n - 1}",
                               abs(ll - math.log(l_n - 1)) <= CLOSED_FORM_TOL, f"{ll:.12f}"))
    e_d = torch.tensor([[1.0, 2.0, 0.0, 0.0]], dtype=torch.float64)
    e_c = torch.tensor([[0.0, 0.0, 3.0, -1.0]], dtype=torch.float64)
    le, trip, con = losses.loss_approximation(e_d, e_d.clone(), e_c, losses.LossConfig())
    ok = all(abs(float(v)) <= CLOSED_FORM_TOL for v in (le, trip, con))
    out.append(CheckResult("closed form: K=1 aligned/orthogonal L_E = 0", ok,
                           f"L_E={float(le):.3e}"))
    return out


SUITES = {
    "loss oracles": check_loss_oracles,
    "gradients": check_gradients,
    "sampler": check_sampler,
    "closed forms": check_closed_forms,
}


def run_all(suites=None):
    results = []
    for name in suites or SUITES:
        t0 = time.perf_counter()
        rs = SUITES[name]()
        dt = time.perf_counter() - t0
        for r in rs:
            r.seconds = dt / len(rs)
        results.extend(rs)
    return results


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return "\n".join(lines)
