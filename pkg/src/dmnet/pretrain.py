"""Generic pretraining for the tiny encoder.

Stands in for ImageNet initialisation at desk scale. The encoder learns to
label freshly rendered random polygons by hue bin, a task that never sees
the corpus classes or outlines, and then stays frozen for episodic
training. Both feature levels get their own cosine-classifier head, so
pixels of one bin cluster by direction at either level and masked-average
prototypes are meaningful downstream. Only the output scale calibration touches corpus images, and
only those of the training split.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import Config
from .data import build_index, load_fold_spec
from .data.index import EpisodeIndex
from .data.synthetic import render_hue_image
from .features import TinyEncoder

log = logging.getLogger(__name__)


def pretrain_encoder(index: EpisodeIndex, stride: int = 4, iters: int = 600, batch_size: int = 16,
                     lr: float = 2e-3, seed: int = 0, n_bins: int = 16,
                     image_size: int = 64, head_scale: float = 10.0) -> TinyEncoder:
    """Pretrain on hue-bin segmentation; ``index`` (training split) is used for scale calibration."""
    if index.split != "train":
        raise ValueError("pretraining must only see the training split")
    torch.manual_seed(seed)
    encoder = TinyEncoder(stride=stride, seed=seed)
    gen = torch.Generator().manual_seed(seed)
    heads = [nn.Parameter(0.1 * torch.randn(n_bins + 1, c, generator=gen))
             for c in (encoder.mid_channels, encoder.high_channels)]
    opt = torch.optim.Adam([*encoder.parameters(), *heads], lr=lr)
    rng = np.random.default_rng([seed, 7])
    for it in range(iters):
        images, labels = zip(*(render_hue_image(rng, image_size, n_bins) for _ in range(batch_size)))
        x = (torch.as_tensor(np.stack(images), dtype=torch.float32).permute(0, 3, 1, 2) - 0.5) / 0.25
        y = torch.as_tensor(np.stack(labels))
        mid, high = encoder(x)
        loss = sum(F.cross_entropy(_cosine_logits(f, w, head_scale, y.shape[-2:]), y)
                   for f, w in zip((mid, high), heads))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if it % 100 == 0 or it == iters - 1:
            log.info("pretrain iter %d loss %.4f", it, loss.item())
    encoder.eval()
    ids = index.image_ids
    calibrate_scales(encoder, index, ids[: min(len(ids), 256)])
    return encoder


def _cosine_logits(feat, weight, scale, size):
    logits = scale * torch.einsum("bchw,kc->bkhw", F.normalize(feat, dim=1), F.normalize(weight, dim=1))
    return F.interpolate(logits, size=size, mode="bilinear", align_corners=True)


@torch.no_grad()
def calibrate_scales(encoder: TinyEncoder, index: EpisodeIndex, image_ids, batch_size: int = 32) -> None:
    """Set the encoder's output scales so every channel has unit RMS on ``image_ids``."""
    encoder.mid_scale.fill_(1.0)
    encoder.high_scale.fill_(1.0)
    sq_mid = sq_high = 0.0
    for start in range(0, len(image_ids), batch_size):
        images = np.stack([index.load(i)[0] for i in image_ids[start:start + batch_size]])
        mid, high = encoder((torch.as_tensor(images).permute(0, 3, 1, 2) - 0.5) / 0.25)
        sq_mid = sq_mid + mid.pow(2).mean(dim=(2, 3)).sum(0)
        sq_high = sq_high + high.pow(2).mean(dim=(2, 3)).sum(0)
    encoder.mid_scale.copy_((sq_mid / len(image_ids)).sqrt().clamp_min(1e-6)[:, None, None])
    encoder.high_scale.copy_((sq_high / len(image_ids)).sqrt().clamp_min(1e-6)[:, None, None])


def encoder_path(cfg: Config, seed: int = 0) -> Path:
    return Path(cfg.data.root) / f"encoder_{cfg.data.fold_file}_fold{cfg.data.fold}_s{cfg.model.stride}_seed{seed}.pt"


def ensure_encoder(cfg: Config, iters: int = 600, seed: int = 0) -> Path:
    """Pretrain once per (corpus, fold, stride, seed) and cache next to the corpus."""
    path = encoder_path(cfg, seed)
    if not path.exists():
        fold = load_fold_spec(cfg.data.fold_file, cfg.data.fold)
        index = build_index(cfg.data.root, fold, "train", cfg.data.crop_size)
        encoder = pretrain_encoder(index, cfg.model.stride, iters, seed=seed,
                                   image_size=cfg.data.image_size)
        torch.save(encoder.state_dict(), path)
    return path
