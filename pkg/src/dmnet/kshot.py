"""Appearance-weighted fusion of per-support prototypes for K > 1."""
from __future__ import annotations

from typing import Sequence

import torch
from torch import Tensor

from .csrm import PrototypePair, final_predict
from .decoder import SegmentationPrediction


def appearance_factors(affinities: Sequence[Tensor]) -> Tensor:
    """Softmax over branches of each affinity matrix's mean entry.

    Each affinity is ``[..., hw, hw]``; the result is ``[K, ...]`` and sums
    to 1 over the first axis.
    """
    if not affinities:
        raise ValueError("need at least one affinity matrix")
    means = torch.stack([a.mean(dim=(-2, -1)) for a in affinities], 0)
    return means.softmax(dim=0)


def fuse_prototypes(branches: Sequence[PrototypePair], phi: Tensor) -> PrototypePair:
    if len(branches) != phi.shape[0]:
        raise ValueError(f"{len(branches)} branches but {phi.shape[0]} weights")
    fg = sum(phi[j][..., None] * b.foreground for j, b in enumerate(branches))
    bg = sum(phi[j][..., None] * b.background for j, b in enumerate(branches))
    return PrototypePair(fg, bg, "merged")


def fused_predict(feat_q: Tensor, branches: Sequence[PrototypePair], phi: Tensor,
                  tau: float = 10.0) -> SegmentationPrediction:
    return final_predict(feat_q, fuse_prototypes(branches, phi), tau)
