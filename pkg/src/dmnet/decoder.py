"""Initial-prediction decoder and the two-term segmentation loss."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .errors import DataError, ShapeError
from .features import upsample

BCE_EPS = 1e-7


@dataclass
class SegmentationPrediction:
    """Two-channel scores; channel 0 is background, channel 1 foreground."""

    logits: Tensor  # [..., 2, h, w]

    @property
    def probs(self) -> Tensor:
        return self.logits.softmax(dim=-3)

    @property
    def foreground(self) -> Tensor:
        return self.probs[..., 1, :, :]

    def resized(self, size: tuple[int, int]) -> "SegmentationPrediction":
        if tuple(self.logits.shape[-2:]) == tuple(size):
            return self
        return SegmentationPrediction(upsample(self.logits, size))

    def mask(self) -> Tensor:
        return self.logits.argmax(dim=-3)


def relu_init(*modules: nn.Module) -> None:
    """He-normal init for convs followed by ReLU; the default init shrinks the
    signal several-fold per layer, which stalls a BN-free decoder at the prior."""
    for module in modules:
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")


class ASPP(nn.Module):
    """Parallel dilated 3x3 branches (1x1 for rate 1) fused by a 1x1 conv."""

    def __init__(self, dim: int, rates: tuple[int, ...] = (1, 6, 12, 18)):
        super().__init__()
        self.branches = nn.ModuleList()
        for r in rates:
            conv = (nn.Conv2d(dim, dim, 1, bias=False) if r == 1
                    else nn.Conv2d(dim, dim, 3, padding=r, dilation=r, bias=False))
            self.branches.append(nn.Sequential(conv, nn.ReLU()))
        self.project = nn.Sequential(nn.Conv2d(dim * len(rates), dim, 1, bias=False), nn.ReLU())

    def forward(self, x: Tensor) -> Tensor:
        return self.project(torch.cat([b(x) for b in self.branches], 1))


class Decoder(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.merge = nn.Sequential(nn.Conv2d(2 * dim + 2, dim, 1, bias=False), nn.ReLU())
        self.refine = nn.Sequential(
            nn.Conv2d(dim, dim, 3, padding=1, bias=False), nn.ReLU(),
            nn.Conv2d(dim, dim, 3, padding=1, bias=False), nn.ReLU(),
        )
        self.aspp = ASPP(dim)
        self.cls = nn.Conv2d(dim, 2, 1)
        relu_init(self.merge, self.refine, self.aspp)
        # start at p = 0.5 everywhere; a random head gives large first-step
        # gradients that can push the whole decoder into dead ReLUs
        nn.init.zeros_(self.cls.weight)
        nn.init.zeros_(self.cls.bias)

    def forward(self, feat_q: Tensor, prototype: Tensor, act_p: Tensor,
                act_a: Tensor) -> SegmentationPrediction:
        """``feat_q`` [B, C, h, w]; ``prototype`` [B, C]; both maps [B, h, w]."""
        b, c, h, w = feat_q.shape
        if prototype.shape != (b, c):
            raise ShapeError(f"prototype {tuple(prototype.shape)} does not match features {(b, c)}")
        for name, m in (("positional map", act_p), ("meta-activation map", act_a)):
            if m.shape != (b, h, w):
                raise ShapeError(f"{name} {tuple(m.shape)} expected {(b, h, w)}")
        x = torch.cat([feat_q, prototype[..., None, None].expand(b, c, h, w),
                       act_p.unsqueeze(1), act_a.unsqueeze(1)], 1)
        x = self.merge(x)
        x = self.refine(x) + x
        x = self.aspp(x)
        return SegmentationPrediction(self.cls(x))


def binary_cross_entropy(pred: SegmentationPrediction, mask: Tensor) -> Tensor:
    """Pixel-mean BCE of the foreground probability against a {0, 1} mask."""
    p = pred.resized(mask.shape[-2:]).foreground.clamp(BCE_EPS, 1 - BCE_EPS)
    m = mask.to(p.dtype)
    return -(m * p.log() + (1 - m) * (1 - p).log()).mean()


def segmentation_loss(y_final: SegmentationPrediction, y_q: SegmentationPrediction | None,
                      mask: Tensor, eta: float = 1.0) -> Tensor:
    """Main BCE on the final prediction plus ``eta`` times BCE on the initial one."""
    if not bool(((mask == 0) | (mask == 1)).all()):
        raise DataError("query mask values must be 0 or 1")
    loss = binary_cross_entropy(y_final, mask)
    if y_q is not None and eta:
        loss = loss + eta * binary_cross_entropy(y_q, mask)
    return loss
