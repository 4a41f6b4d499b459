"""End-to-end episode forward pass."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .config import Config
from .cprm import CPRM
from .csrm import CSRM, final_predict
from .data.episodes import Episode
from .decoder import Decoder, SegmentationPrediction
from .features import FeatureExtractor, downsample_mask, masked_average_pool
from .kms import MetaMemory, suppress_test, suppress_train
from .kshot import appearance_factors, fuse_prototypes


@dataclass
class EpisodeOutput:
    y_q: SegmentationPrediction
    y_final: SegmentationPrediction
    intermediates: dict = field(default_factory=dict)


def _pool_or_zero(feat: Tensor, mask: Tensor) -> Tensor:
    area = mask.sum(dim=(-2, -1)).clamp_min(1e-12)
    return (feat * mask.unsqueeze(-3)).sum(dim=(-2, -1)) / area.unsqueeze(-1)


class DMNet(nn.Module):
    """Few-shot segmenter with class-public mining, class-specific mining and
    known-class suppression, each switchable for ablation."""

    def __init__(self, cfg: Config, known_classes: Sequence[int]):
        super().__init__()
        self.cfg = cfg
        m = cfg.model
        self.use_cprm, self.use_csrm, self.use_kms = m.use_cprm, m.use_csrm, m.use_kms
        self.extractor = FeatureExtractor(m.backbone, m.reduce_dim, m.stride, m.weights)
        self.cprm = (CPRM(m.reduce_dim, cfg.cprm.lambda_fuse, cfg.cprm.fusion_init,
                          cfg.cprm.channel_rank) if m.use_cprm else None)
        self.decoder = Decoder(m.reduce_dim)
        c = cfg.csrm
        self.csrm = CSRM(c.mu1, c.mu2, c.step_mu1, c.step_mu2, c.cpm_iters, c.gamma1, c.gamma2, c.tau)
        self.known_classes = tuple(int(k) for k in known_classes)
        n_known = cfg.kms.n_known or len(self.known_classes)
        self.memory = (MetaMemory(n_known, self.extractor.high_channels, cfg.kms.rho)
                       if m.use_kms else None)

    def class_row(self, class_id: int) -> int:
        return self.known_classes.index(class_id)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def forward(self, query: Tensor, support: Tensor, support_masks: Tensor,
                classes: Sequence[int], mode: str = "test") -> EpisodeOutput:
        """Batched forward.

        ``query`` [B, 3, H, W], ``support`` [B, K, 3, H, W], ``support_masks``
        [B, K, H, W] binary, ``classes`` the B target class ids. In train mode
        the memory is updated from each episode's supports (in batch order)
        before that episode is suppressed.
        """
        if mode not in ("train", "test"):
            raise ValueError(f"mode must be train or test, got {mode!r}")
        b, k = support.shape[:2]
        images = torch.cat([query, support.flatten(0, 1)], 0)
        bundle = self.extractor(images)
        h, w = bundle.mid.shape[-2:]
        q_mid, s_mid = bundle.mid[:b], bundle.mid[b:].unflatten(0, (b, k))
        q_high, s_high = bundle.high[:b], bundle.high[b:].unflatten(0, (b, k))
        masks = downsample_mask(support_masks, (h, w)).to(q_mid.dtype)  # [B, K, h, w]
        inter: dict = {"features": bundle, "support_masks_small": masks}

        act_a = self._meta_activation(q_high, s_high, masks, classes, mode)
        inter["meta_activation"] = act_a

        logits, merged, affinities, branch_info = [], [], [], []
        for j in range(k):
            if self.cprm is not None:
                out = self.cprm(q_mid, s_mid[:, j], masks[:, j])
                q_feat, proto, act_p = out.query, out.prototype, out.activation
                affinities.append(out.affinity)
            else:
                q_feat = q_mid
                proto = masked_average_pool(s_mid[:, j], masks[:, j])
                act_p = torch.full((b, h, w), 0.5, dtype=q_mid.dtype)
            y_j = self.decoder(q_feat, proto, act_p, act_a[:, j])
            logits.append(y_j.logits)
            info = {"positional_activation": act_p, "prototype": proto}
            if self.use_csrm:
                pair, partition, traces = self.csrm.prototypes(q_mid, y_j)
                merged.append(pair)
                info.update(partition=partition, traces=traces, csrm_prototypes=pair)
            branch_info.append(info)

        if affinities and k > 1:
            phi = appearance_factors(affinities)  # [K, B]
        else:
            phi = torch.full((k, b), 1.0 / k, dtype=q_mid.dtype)
        y_q = SegmentationPrediction(sum(phi[j][:, None, None, None] * logits[j] for j in range(k)))
        if self.use_csrm:
            y_final = final_predict(q_mid, fuse_prototypes(merged, phi), self.csrm.tau)
        else:
            y_final = y_q
        inter.update(phi=phi, affinities=affinities, branches=branch_info)
        return EpisodeOutput(y_q, y_final, inter)

    def _meta_activation(self, q_high, s_high, masks, classes, mode) -> Tensor:
        b, k = masks.shape[:2]
        if self.memory is None:
            return torch.full((b, k, *masks.shape[-2:]), 0.5, dtype=q_high.dtype)
        proto_f = _pool_or_zero(s_high, masks)
        proto_b = _pool_or_zero(s_high, 1 - masks)
        maps = []
        for i in range(b):
            if mode == "train":
                row = self.class_row(int(classes[i]))
                for j in range(k):
                    self.memory.update(row, proto_f[i, j], proto_b[i, j])
                a = suppress_train(q_high[i], self.memory, row)
                maps.append(a.expand(k, *a.shape))
            else:
                maps.append(torch.stack([suppress_test(q_high[i], proto_f[i, j], proto_b[i, j],
                                                       self.memory) for j in range(k)]))
        return torch.stack(maps)

    def forward_episode(self, episode: Episode, mode: str = "test") -> EpisodeOutput:
        q, s, m = episodes_to_tensors([episode], dtype=self.dtype)
        return self(q, s, m, [episode.target_class], mode)

    @property
    def dtype(self):
        return next(self.decoder.parameters()).dtype

    @torch.no_grad()
    def predict_masks(self, episodes: Sequence[Episode]) -> list[np.ndarray]:
        """Full-resolution binary foreground masks from the final prediction."""
        was_training = self.training
        self.eval()
        q, s, m = episodes_to_tensors(episodes, dtype=self.dtype)
        out = self(q, s, m, [e.target_class for e in episodes], "test")
        pred = out.y_final.resized(q.shape[-2:]).mask().cpu().numpy().astype(np.uint8)
        self.train(was_training)
        return list(pred)


def episodes_to_tensors(episodes: Sequence[Episode], dtype=torch.float32):
    q = torch.as_tensor(np.stack([e.query_image for e in episodes]), dtype=dtype).permute(0, 3, 1, 2)
    s = torch.as_tensor(np.stack([np.stack([img for img, _ in e.support]) for e in episodes]),
                        dtype=dtype).permute(0, 1, 4, 2, 3)
    m = torch.as_tensor(np.stack([np.stack([msk for _, msk in e.support]) for e in episodes]),
                        dtype=dtype)
    return q.contiguous(), s.contiguous(), m


def query_masks(episodes: Sequence[Episode]) -> Tensor:
    return torch.as_tensor(np.stack([e.query_mask for e in episodes]).astype(np.int64))
