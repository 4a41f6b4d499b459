"""Class-specific region mining: query-self prototypes from the initial prediction.

Parameter-free. The initial prediction is split into confident foreground,
confident background and a confusion region; the confusion region is mined
iteratively with the query's own prototypes under relaxing thresholds.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import torch
from torch import Tensor, nn

from .decoder import SegmentationPrediction
from .features import masked_average_pool


class RegionPartition(NamedTuple):
    fg: Tensor  # [..., h, w] bool
    bg: Tensor
    conf: Tensor
    thresholds: tuple[float, float]


class PrototypePair(NamedTuple):
    foreground: Tensor  # [..., C]
    background: Tensor
    provenance: str  # "filtered" | "cpm_refined" | "merged"


class MiningTrace(NamedTuple):
    fg: Tensor
    bg: Tensor
    conf: Tensor
    thresholds: tuple[float, float]


def filter_regions(y: SegmentationPrediction, mu1: float, mu2: float) -> RegionPartition:
    """Threshold foreground/background probabilities. Foreground wins if both pass."""
    probs = y.probs.detach()
    return _partition(probs[..., 1, :, :], probs[..., 0, :, :], mu1, mu2)


def _partition(p_f: Tensor, p_b: Tensor, mu1: float, mu2: float) -> RegionPartition:
    fg = p_f >= mu1
    bg = (p_b >= mu2) & ~fg
    conf = ~fg & ~bg
    return RegionPartition(fg, bg, conf, (mu1, mu2))


def cosine_map(feat: Tensor, proto: Tensor, eps: float = 1e-12) -> Tensor:
    """Per-pixel cosine similarity [..., C, h, w] x [..., C] -> [..., h, w]; zero vectors give 0."""
    dot = (feat * proto[..., None, None]).sum(dim=-3)
    norms = feat.norm(dim=-3) * proto.norm(dim=-1)[..., None, None]
    return dot / norms.clamp_min(eps)


def cosine_logits(feat: Tensor, prototypes: Sequence[Tensor], tau: float) -> Tensor:
    return tau * torch.stack([cosine_map(feat, p) for p in prototypes], dim=-3)


def cosine_predict(feat: Tensor, prototypes: Sequence[Tensor], tau: float = 10.0) -> Tensor:
    """Softmax over prototypes of temperature-scaled cosine similarity: [..., P, h, w]."""
    if len(prototypes) < 2:
        raise ValueError("cosine_predict needs at least two prototypes")
    return cosine_logits(feat, prototypes, tau).softmax(dim=-3)


def final_predict(feat: Tensor, merged: PrototypePair, tau: float = 10.0) -> SegmentationPrediction:
    return SegmentationPrediction(cosine_logits(feat, [merged.background, merged.foreground], tau))


def region_prototype(feat: Tensor, mask: Tensor, *, score: Tensor | None = None,
                     previous: Tensor | None = None) -> Tensor:
    """MAP over ``mask``; an empty mask falls back to the feature at the arg-max
    of ``score`` if given, otherwise to the ``previous`` prototype."""
    m = mask.to(feat.dtype)
    empty = m.sum(dim=(-2, -1)) == 0
    if score is not None:
        flat = score.flatten(-2)
        onehot = torch.zeros_like(flat).scatter_(-1, flat.argmax(dim=-1, keepdim=True), 1.0)
        m = torch.where(empty[..., None, None], onehot.reshape(m.shape).to(m.dtype), m)
        return masked_average_pool(feat, m)
    if previous is None:
        raise ValueError("need a score map or a previous prototype for the empty-mask fallback")
    safe = torch.where(empty[..., None, None], torch.ones_like(m), m)
    return torch.where(empty[..., None], previous, masked_average_pool(feat, safe))


def confusion_mining(feat: Tensor, partition: RegionPartition, iters: int = 3,
                     step_mu1: float = 0.05, step_mu2: float = 0.02, tau: float = 10.0,
                     filtered: PrototypePair | None = None):
    """Iteratively assign confusion pixels using the query's own prototypes.

    Iteration ``t`` (from 0) thresholds at ``(mu1 - t*step_mu1, mu2 - t*step_mu2)``.
    Prototypes are re-pooled over the accumulated foreground / background
    masks after every iteration. Returns ``(PrototypePair, traces)`` where
    ``traces[0]`` is the input partition.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    mu1, mu2 = partition.thresholds
    if filtered is None:
        filtered = filtered_prototypes(feat, partition)
    p_f, p_b = filtered.foreground, filtered.background
    acc_f, acc_b, conf = partition.fg, partition.bg, partition.conf
    traces = [MiningTrace(acc_f, acc_b, conf, (mu1, mu2))]
    for t in range(iters):
        th1, th2 = mu1 - t * step_mu1, mu2 - t * step_mu2
        conf_feat = feat * conf.unsqueeze(-3).to(feat.dtype)
        scores = cosine_predict(conf_feat, [p_f, p_b], tau).detach()
        c_f = conf & (scores[..., 0, :, :] >= th1)
        c_b = conf & (scores[..., 1, :, :] >= th2) & ~c_f
        acc_f, acc_b = acc_f | c_f, acc_b | c_b
        conf = conf & ~c_f & ~c_b
        p_f = region_prototype(feat, acc_f, previous=p_f)
        p_b = region_prototype(feat, acc_b, previous=p_b)
        traces.append(MiningTrace(acc_f, acc_b, conf, (th1, th2)))
    return PrototypePair(p_f, p_b, "cpm_refined"), traces


def filtered_prototypes(feat: Tensor, partition: RegionPartition,
                        y: SegmentationPrediction | None = None) -> PrototypePair:
    """MAP prototypes of the confident regions, falling back to the most confident pixel."""
    if y is not None:
        probs = y.probs.detach()
        score_f, score_b = probs[..., 1, :, :], probs[..., 0, :, :]
    else:
        score_f, score_b = partition.fg.to(feat.dtype), partition.bg.to(feat.dtype)
    return PrototypePair(region_prototype(feat, partition.fg, score=score_f),
                         region_prototype(feat, partition.bg, score=score_b), "filtered")


def merge_prototypes(refined: PrototypePair, filtered: PrototypePair, gamma1: float = 0.9,
                     gamma2: float = 0.1) -> PrototypePair:
    return PrototypePair(gamma1 * refined.foreground + gamma2 * filtered.foreground,
                         gamma1 * refined.background + gamma2 * filtered.background, "merged")


class CSRMOutput(NamedTuple):
    prediction: SegmentationPrediction
    prototypes: PrototypePair
    partition: RegionPartition
    traces: list


class CSRM(nn.Module):
    """Parameter-free wrapper holding the mining hyper-parameters."""

    def __init__(self, mu1=0.7, mu2=0.6, step_mu1=0.05, step_mu2=0.02, iters=3,
                 gamma1=0.9, gamma2=0.1, tau=10.0):
        super().__init__()
        self.mu1, self.mu2 = mu1, mu2
        self.step_mu1, self.step_mu2 = step_mu1, step_mu2
        self.iters = iters
        self.gamma1, self.gamma2 = gamma1, gamma2
        self.tau = tau

    def prototypes(self, feat: Tensor, y_q: SegmentationPrediction):
        partition = filter_regions(y_q, self.mu1, self.mu2)
        filtered = filtered_prototypes(feat, partition, y_q)
        refined, traces = confusion_mining(feat, partition, self.iters, self.step_mu1,
                                           self.step_mu2, self.tau, filtered)
        return merge_prototypes(refined, filtered, self.gamma1, self.gamma2), partition, traces

    def forward(self, feat: Tensor, y_q: SegmentationPrediction) -> CSRMOutput:
        merged, partition, traces = self.prototypes(feat, y_q)
        return CSRMOutput(final_predict(feat, merged, self.tau), merged, partition, traces)
