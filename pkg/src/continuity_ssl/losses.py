"""Continuity losses: justification, localization, missing-section approximation, joint."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import EmptyBatch, LabelOutOfRange, ShapeMismatch

COS_EPS = 1e-8


@dataclass(frozen=True)
class LossConfig:
    omega: float = 0.5  # triplet vs contrastive balance
    gamma: float = 0.2  # triplet margin
    tau: float = 0.1  # contrastive temperature
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must be in [0, 1]")
        if self.gamma <= 0 or self.tau <= 0:
            raise ValueError("gamma and tau must be positive")
        for w in (self.w1, self.w2, self.w3):
            if not 0.0 <= w <= 1.0:
                raise ValueError("loss weights must be in [0, 1]")


@dataclass
class LossBreakdown:
    l_j: torch.Tensor
    l_l: torch.Tensor
    l_e: torch.Tensor
    l_e_triplet: torch.Tensor
    l_e_contrastive: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in
                ("total", "l_j", "l_l", "l_e", "l_e_triplet", "l_e_contrastive")}


def cosine_similarity(a, b):
    """Cosine similarity along the last axis, with norms floored at 1e-8."""
    na = a.norm(dim=-1).clamp_min(COS_EPS)
    nb = b.norm(dim=-1).clamp_min(COS_EPS)
    return (a * b).sum(-1) / (na * nb)


def _pairwise_cosine(a, b):
    an = a / a.norm(dim=-1, keepdim=True).clamp_min(COS_EPS)
    bn = b / b.norm(dim=-1, keepdim=True).clamp_min(COS_EPS)
    return an @ bn.T


def loss_justification(logits_d, logits_c):
    """Mean over videos of CE(discontinuous -> 1) + CE(continuous -> 0)."""
    k = logits_d.shape[0]
    if k == 0:
        raise EmptyBatch("justification loss needs K >= 1")
    if logits_c.shape != logits_d.shape or logits_d.shape[-1] != 2:
        raise ShapeMismatch(f"expected two [K, 2] tensors, got {tuple(logits_d.shape)}, "
                            f"{tuple(logits_c.shape)}")
    ones = torch.ones(k, dtype=torch.long, device=logits_d.device)
    return (F.cross_entropy(logits_d, ones, reduction="sum")
            + F.cross_entropy(logits_c, ones * 0, reduction="sum")) / k


def loss_localization(logits, labels):
    if logits.shape[0] == 0:
        raise EmptyBatch("localization loss needs K >= 1")
    n_cls = logits.shape[-1]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= n_cls):
        raise LabelOutOfRange(f"labels must lie in [0, {n_cls - 1}]")
    return F.cross_entropy(logits, labels)


def loss_approximation(e_d, e_m, e_c, cfg: LossConfig = LossConfig()):
    """Triplet + in-batch contrastive loss on (discontinuous, missing, continuous) embeddings.

    Returns ``(loss, triplet_term, contrastive_term)``; the terms are batch
    means before the omega weighting, so ``loss = omega*triplet + (1-omega)*contrastive``.
    With K = 1 there are no negatives and the contrastive term is exactly 0.
    """
    k = e_d.shape[0]
    if k == 0:
        raise EmptyBatch("approximation loss needs K >= 1")
    p_pos = cosine_similarity(e_d, e_m)
    p_neg = cosine_similarity(e_d, e_c)
    triplet = torch.clamp(cfg.gamma - (p_pos - p_neg), min=0.0)

    sim_dc = _pairwise_cosine(e_d, e_c) / cfg.tau  # [i, j] = sim(e_d[i], e_c[j]) / tau
    sim_dd = _pairwise_cosine(e_d, e_d) / cfg.tau
    pos = sim_dc.diagonal()
    off = ~torch.eye(k, dtype=torch.bool, device=e_d.device)
    # denominator terms per anchor: the positive, then e_d[j] and e_c[j] for j != i
    neg_dd = sim_dd.masked_select(off).view(k, k - 1)
    neg_dc = sim_dc.masked_select(off).view(k, k - 1)
    logits = torch.cat([pos[:, None], neg_dd, neg_dc], dim=1)
    contrastive = torch.logsumexp(logits, dim=1) - pos

    t, c = triplet.mean(), contrastive.mean()
    return cfg.omega * t + (1 - cfg.omega) * c, t, c


def joint_loss(embeds, labels, cfg: LossConfig = LossConfig(), task_mask=(True, True, True)) -> LossBreakdown:
    """Weighted sum w1*L_J + w2*L_L + w3*L_E; masked tasks contribute zero."""
    use_j, use_l, use_e = task_mask
    k = labels.shape[0]
    needed = []
    if use_j:
        needed += [embeds.logits_just_c, embeds.logits_just_d]
    if use_l:
        needed += [embeds.logits_loc_d]
    if use_e:
        needed += [embeds.e_c, embeds.e_d, embeds.e_m]
    if any(t is None or t.shape[0] != k for t in needed):
        raise ShapeMismatch("inconsistent batch size across embeddings and labels")
    zero = needed[0].new_zeros(()) if needed else labels.new_zeros((), dtype=torch.float32)
    l_j = loss_justification(embeds.logits_just_d, embeds.logits_just_c) if use_j else zero
    l_l = loss_localization(embeds.logits_loc_d, labels) if use_l else zero
    if use_e:
        l_e, trip, con = loss_approximation(embeds.e_d, embeds.e_m, embeds.e_c, cfg)
    else:
        l_e = trip = con = zero
    total = cfg.w1 * l_j + cfg.w2 * l_l + cfg.w3 * l_e
    return LossBreakdown(l_j, l_l, l_e, trip, con, total)
