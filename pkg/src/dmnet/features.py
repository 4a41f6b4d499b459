"""Frozen backbones, the mid/high feature bundle and masked average pooling."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import EmptyMaskError, SizeError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class FeatureBundle:
    mid: Tensor   # [..., C, h, w], guides CPRM / CSRM
    high: Tensor  # [..., C_H, h, w], feeds KMS
    stride: int


def masked_average_pool(feat: Tensor, mask: Tensor) -> Tensor:
    """Masked mean over space: ``feat`` [..., C, h, w], ``mask`` [..., h, w] -> [..., C]."""
    area = mask.sum(dim=(-2, -1))
    if bool((area <= 0).any()):
        raise EmptyMaskError("masked average pooling over an empty mask")
    return (feat * mask.unsqueeze(-3)).sum(dim=(-2, -1)) / area.unsqueeze(-1)


def downsample_mask(mask: Tensor, size: tuple[int, int]) -> Tensor:
    """Resample [..., H, W] masks to ``size`` by max pooling, so no object vanishes."""
    lead = mask.shape[:-2]
    flat = mask.reshape(-1, 1, *mask.shape[-2:]).float()
    out = F.adaptive_max_pool2d(flat, size)
    return out.reshape(*lead, *size)


def upsample(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Bilinear resize of [..., C, h, w] maps."""
    lead = x.shape[:-3]
    flat = x.reshape(-1, *x.shape[-3:])
    out = F.interpolate(flat, size=size, mode="bilinear", align_corners=True)
    return out.reshape(*lead, x.shape[-3], *size)


def _conv(cin, cout, stride=1, dilation=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation, dilation=dilation)


class TinyEncoder(nn.Module):
    """Four-stage conv encoder, fixed-seed random unless ``weights`` is given.

    Stages 2+3 form the mid-level feature, stage 4 the high-level one.
    ``stride`` (4 or 8) sets the output downscale; later stages dilate
    instead of striding. Random weights keep little of the colour and
    texture signal, so use :func:`dmnet.pretrain.pretrain_encoder` first.
    """

    mean = (0.5, 0.5, 0.5)
    std = (0.25, 0.25, 0.25)

    def __init__(self, stride: int = 8, width: int = 64, seed: int = 0, weights: str = ""):
        super().__init__()
        if stride not in (4, 8):
            raise ValueError(f"tiny encoder supports stride 4 or 8, got {stride}")
        self.stride = stride
        w = width
        s3, d3 = (2, 1) if stride == 8 else (1, 2)
        self.stage1 = nn.Sequential(_conv(3, w // 4, 2), nn.ReLU(), _conv(w // 4, w // 4), nn.ReLU())
        self.stage2 = nn.Sequential(_conv(w // 4, w // 2, 2), nn.ReLU(), _conv(w // 2, w // 2), nn.ReLU())
        self.stage3 = nn.Sequential(_conv(w // 2, w, s3, d3), nn.ReLU(), _conv(w, w, 1, d3), nn.ReLU())
        self.stage4 = nn.Sequential(_conv(w, w, 1, 2 * d3), nn.ReLU(), _conv(w, w, 1, 2 * d3), nn.ReLU())
        self.mid_channels = w // 2 + w
        self.high_channels = w
        self.min_size = 2 * stride
        # per-channel output scales, set from data after pretraining
        self.register_buffer("mid_scale", torch.ones(self.mid_channels, 1, 1))
        self.register_buffer("high_scale", torch.ones(self.high_channels, 1, 1))
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                with torch.no_grad():
                    m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * math.sqrt(2.0 / fan_in))
                    m.bias.zero_()
        if weights:
            self.load_state_dict(torch.load(weights, map_location="cpu", weights_only=True))

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        f2 = self.stage2(self.stage1(x))
        f3 = self.stage3(f2)
        f4 = self.stage4(f3)
        if f2.shape[-2:] != f3.shape[-2:]:
            f2 = F.interpolate(f2, size=f3.shape[-2:], mode="bilinear", align_corners=True)
        return torch.cat([f3, f2], 1) / self.mid_scale, f4 / self.high_scale


class ResNetBackbone(nn.Module):
    """torchvision ResNet with dilated layer3/4 (output stride 8)."""

    mean, std = IMAGENET_MEAN, IMAGENET_STD

    def __init__(self, depth: int = 50, weights: str = ""):
        super().__init__()
        import torchvision

        ctor = {50: torchvision.models.resnet50, 101: torchvision.models.resnet101}[depth]
        net = ctor(weights=None, replace_stride_with_dilation=[False, True, True])
        if weights:
            net.load_state_dict(torch.load(weights, map_location="cpu", weights_only=True))
        self.layer0 = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layer1, self.layer2, self.layer3, self.layer4 = net.layer1, net.layer2, net.layer3, net.layer4
        self.stride = 8
        self.mid_channels = 512 + 1024
        self.high_channels = 2048
        self.min_size = 32

    def forward(self, x):
        f2 = self.layer2(self.layer1(self.layer0(x)))
        f3 = self.layer3(f2)
        return torch.cat([f3, f2], 1), self.layer4(f3)


class VGGBackbone(nn.Module):
    """torchvision VGG-16-BN split into five blocks; output stride 16."""

    mean, std = IMAGENET_MEAN, IMAGENET_STD

    def __init__(self, weights: str = ""):
        super().__init__()
        import torchvision

        net = torchvision.models.vgg16_bn(weights=None)
        if weights:
            net.load_state_dict(torch.load(weights, map_location="cpu", weights_only=True))
        feats = net.features
        cuts = [(0, 7), (7, 14), (14, 24), (24, 34), (34, 43)]
        self.blocks = nn.ModuleList(nn.Sequential(*[feats[i] for i in range(a, b)]) for a, b in cuts)
        self.stride = 16
        self.mid_channels = 256 + 512
        self.high_channels = 512
        self.min_size = 32

    def forward(self, x):
        f = x
        outs = []
        for block in self.blocks:
            f = block(f)
            outs.append(f)
        f2, f3, f4 = outs[2], outs[3], outs[4]
        f2 = F.interpolate(f2, size=f3.shape[-2:], mode="bilinear", align_corners=True)
        return torch.cat([f3, f2], 1), f4


def build_backbone(name: str, stride: int = 8, weights: str = "") -> nn.Module:
    if name == "tiny":
        return TinyEncoder(stride=stride, weights=weights)
    if name in ("resnet50", "resnet101"):
        return ResNetBackbone(int(name[6:]), weights)
    if name == "vgg16":
        return VGGBackbone(weights)
    raise ValueError(f"unknown backbone {name!r}; choose tiny, resnet50, resnet101 or vgg16")


class FeatureExtractor(nn.Module):
    """Frozen backbone plus the trainable 1x1 reduction of mid-level features."""

    def __init__(self, backbone: str = "tiny", reduce_dim: int = 256, stride: int = 8,
                 weights: str = ""):
        super().__init__()
        self.backbone = build_backbone(backbone, stride, weights)
        for p in self.backbone.parameters():
            p.requires_grad_(False)
        self.backbone.eval()
        self.reduce = nn.Sequential(
            nn.Conv2d(self.backbone.mid_channels, reduce_dim, 1, bias=False), nn.ReLU())
        nn.init.kaiming_normal_(self.reduce[0].weight, mode="fan_in", nonlinearity="relu")
        self.register_buffer("pixel_mean", torch.tensor(self.backbone.mean).view(3, 1, 1))
        self.register_buffer("pixel_std", torch.tensor(self.backbone.std).view(3, 1, 1))

    @property
    def stride(self) -> int:
        return self.backbone.stride

    @property
    def high_channels(self) -> int:
        return self.backbone.high_channels

    def train(self, mode: bool = True):
        super().train(mode)
        self.backbone.eval()  # frozen: no batch-norm statistic updates
        return self

    def feature_size(self, size: tuple[int, int]) -> tuple[int, int]:
        return tuple(math.ceil(s / self.stride) for s in size)

    def forward(self, images: Tensor) -> FeatureBundle:
        """``images`` [B, 3, H, W] in [0, 1]."""
        if min(images.shape[-2:]) < self.backbone.min_size:
            raise SizeError(
                f"image {tuple(images.shape[-2:])} smaller than backbone minimum {self.backbone.min_size}")
        x = (images - self.pixel_mean) / self.pixel_std
        with torch.no_grad():
            mid_raw, high = self.backbone(x)
        if high.shape[-2:] != mid_raw.shape[-2:]:
            high = F.interpolate(high, size=mid_raw.shape[-2:], mode="bilinear", align_corners=True)
        return FeatureBundle(mid=self.reduce(mid_raw), high=high, stride=self.stride)

    def extract_features(self, image: np.ndarray) -> FeatureBundle:
        """Single H x W x 3 image -> unbatched bundle."""
        p = next(self.reduce.parameters())
        t = torch.as_tensor(np.ascontiguousarray(image), dtype=p.dtype).permute(2, 0, 1)[None]
        b = self.forward(t)
        return FeatureBundle(mid=b.mid[0], high=b.high[0], stride=b.stride)

    def backbone_hash(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.backbone.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()
