"""Class-public region mining.

Bidirectional cross-attention between masked support features and query
features, along the position axis (affinity over pixel pairs) and along
the channel axis (affinity over channel pairs). All functions accept an
optional leading batch dimension: features are ``[..., C, h, w]``.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import NumericalError
from .features import masked_average_pool


def mask_support(feat_s: Tensor, mask_s: Tensor) -> Tensor:
    return feat_s * mask_s.unsqueeze(-3)


def _check_finite(x: Tensor, what: str) -> None:
    if not bool(torch.isfinite(x).all()):
        raise NumericalError(f"non-finite entries in {what}")


def position_mining(feat_q: Tensor, feat_s: Tensor, w_p: Tensor, alpha: Tensor | float,
                    beta: Tensor | float, lambda_fuse: float = 0.5):
    """Position-axis cross-attention.

    Returns ``(query_out, support_out, affinity)`` where ``affinity`` is
    ``[..., hw_q, hw_s]`` (rows: query positions, columns: support positions).
    Each query position attends over support positions (row softmax); each
    support position attends over query positions (column softmax).
    """
    shape = feat_q.shape
    wq = feat_q.flatten(-2)  # [..., C, N]
    ws = feat_s.flatten(-2)
    affinity = wq.transpose(-1, -2) @ w_p @ ws
    _check_finite(affinity, "position affinity")
    attn_s = affinity.softmax(dim=-1)
    attn_q = affinity.softmax(dim=-2)
    q_out = alpha * (ws @ attn_s.transpose(-1, -2)) + lambda_fuse * wq
    s_out = beta * (wq @ attn_q) + lambda_fuse * ws
    return q_out.reshape(shape), s_out.reshape(shape), affinity


def spatial_descriptors(feat: Tensor, grid: int) -> Tensor:
    """Pool each channel map to ``grid x grid`` and flatten: [..., C, h, w] -> [..., C, grid**2]."""
    lead = feat.shape[:-2]
    flat = feat.reshape(-1, *feat.shape[-2:]).unsqueeze(1)
    pooled = F.adaptive_avg_pool2d(flat, grid)
    return pooled.reshape(*lead, grid * grid)


def channel_mining(feat_q: Tensor, feat_s: Tensor, w_c: Tensor, alpha: Tensor | float,
                   beta: Tensor | float, lambda_fuse: float = 0.5):
    """Channel-axis cross-attention.

    The C x C affinity is a bilinear form ``w_c`` over pooled spatial
    descriptors, so the parameter count does not depend on resolution.
    Returns ``(query_out, support_out, channel_affinity)``.
    """
    shape = feat_q.shape
    grid = math.isqrt(w_c.shape[-1])
    dq = spatial_descriptors(feat_q, grid)  # [..., C, r]
    ds = spatial_descriptors(feat_s, grid)
    affinity = dq @ w_c @ ds.transpose(-1, -2)  # [..., C_q, C_s]
    _check_finite(affinity, "channel affinity")
    attn_s = affinity.softmax(dim=-1)
    attn_q = affinity.softmax(dim=-2)
    wq = feat_q.flatten(-2)
    ws = feat_s.flatten(-2)
    q_out = alpha * (attn_s @ ws) + lambda_fuse * wq
    s_out = beta * (attn_q.transpose(-1, -2) @ wq) + lambda_fuse * ws
    return q_out.reshape(shape), s_out.reshape(shape), affinity


def _conv1x1(conv: nn.Module, x: Tensor) -> Tensor:
    lead = x.shape[:-3]
    out = conv(x.reshape(-1, *x.shape[-3:]))
    return out.reshape(*lead, *out.shape[-3:])


def aggregate(q_pos: Tensor, q_chn: Tensor, s_pos: Tensor, s_chn: Tensor, mask_s: Tensor,
              fuse: nn.Module):
    """Fuse position and channel variants with a shared 1x1 conv; pool the support prototype."""
    q = _conv1x1(fuse, q_pos + q_chn)
    s = _conv1x1(fuse, s_pos + s_chn)
    return q, s, masked_average_pool(s, mask_s)


def positional_activation_map(affinity: Tensor, size: tuple[int, int], eps: float = 1e-12) -> Tensor:
    """Row means of the position affinity, min-max normalised per image to [0, 1].

    A constant map has no contrast and comes back as 0.5 everywhere.
    """
    means = affinity.mean(dim=-1)  # [..., hw_q]
    lo = means.min(dim=-1, keepdim=True).values
    hi = means.max(dim=-1, keepdim=True).values
    span = hi - lo
    flat = span <= eps * torch.clamp(hi.abs(), min=1.0)
    norm = torch.where(flat, torch.full_like(means, 0.5), (means - lo) / torch.where(flat, 1.0, span))
    return norm.reshape(*means.shape[:-1], *size)


class CPRMOutput(NamedTuple):
    query: Tensor
    support: Tensor
    prototype: Tensor
    affinity: Tensor
    activation: Tensor


class CPRM(nn.Module):
    """Learnable part of class-public mining: W_P, the channel form, fusion scalars, 1x1 fuse."""

    def __init__(self, dim: int, lambda_fuse: float = 0.5, fusion_init: float = 0.5,
                 channel_rank: int = 64):
        super().__init__()
        grid = math.isqrt(channel_rank)
        if grid * grid != channel_rank:
            raise ValueError(f"channel_rank must be a perfect square, got {channel_rank}")
        self.lambda_fuse = lambda_fuse
        self.w_p = nn.Parameter(torch.eye(dim) / math.sqrt(dim))
        self.w_c = nn.Parameter(torch.eye(channel_rank) / channel_rank)
        self.alpha1 = nn.Parameter(torch.tensor(fusion_init))
        self.beta1 = nn.Parameter(torch.tensor(fusion_init))
        self.alpha2 = nn.Parameter(torch.tensor(fusion_init))
        self.beta2 = nn.Parameter(torch.tensor(fusion_init))
        self.fuse = nn.Conv2d(dim, dim, 1, bias=False)
        with torch.no_grad():
            self.fuse.weight.copy_(torch.eye(dim)[..., None, None])

    def forward(self, feat_q: Tensor, feat_s: Tensor, mask_s: Tensor) -> CPRMOutput:
        masked = mask_support(feat_s, mask_s)
        q_pos, s_pos, affinity = position_mining(
            feat_q, masked, self.w_p, self.alpha1, self.beta1, self.lambda_fuse)
        q_chn, s_chn, _ = channel_mining(
            feat_q, masked, self.w_c, self.alpha2, self.beta2, self.lambda_fuse)
        q, s, proto = aggregate(q_pos, q_chn, s_pos, s_chn, mask_s, self.fuse)
        act = positional_activation_map(affinity, feat_q.shape[-2:])
        return CPRMOutput(q, s, proto, affinity, act)
