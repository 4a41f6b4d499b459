"""Known-class meta suppressor.

A memory of per-known-class foreground/background prototypes (high-level
features) is EMA-updated from every training support. The query is then
compared against the target and the other known classes; only pixels where
the target foreground wins keep an activation.
"""
from __future__ import annotations

import torch
from torch import Tensor

from .csrm import cosine_map


class MetaMemory:
    """Foreground/background prototype banks, one row per known class.

    Rows change only through :meth:`update`; they never receive gradients.
    """

    def __init__(self, n_classes: int, dim: int, rho: float = 0.5, dtype=torch.float32):
        self.rho = rho
        self.w_f = torch.zeros(n_classes, dim, dtype=dtype)
        self.w_b = torch.zeros(n_classes, dim, dtype=dtype)
        self.initialized = torch.zeros(n_classes, dtype=torch.bool)
        self.update_counts = torch.zeros(n_classes, dtype=torch.long)

    @property
    def n_classes(self) -> int:
        return self.w_f.shape[0]

    def update(self, row: int, proto_f: Tensor, proto_b: Tensor) -> "MetaMemory":
        if not 0 <= row < self.n_classes:
            raise IndexError(f"class row {row} out of range [0, {self.n_classes})")
        proto_f = proto_f.detach().to(self.w_f.dtype)
        proto_b = proto_b.detach().to(self.w_b.dtype)
        if not self.initialized[row]:
            # first sighting sets the row; EMA from zero would bias it toward 0
            self.w_f[row] = proto_f
            self.w_b[row] = proto_b
            self.initialized[row] = True
        else:
            self.w_f[row] = self.rho * self.w_f[row] + (1 - self.rho) * proto_f
            self.w_b[row] = self.rho * self.w_b[row] + (1 - self.rho) * proto_b
        self.update_counts[row] += 1
        return self

    def state_dict(self) -> dict:
        return {"rho": self.rho, "w_f": self.w_f.clone(), "w_b": self.w_b.clone(),
                "initialized": self.initialized.clone(), "update_counts": self.update_counts.clone()}

    @classmethod
    def from_state_dict(cls, state: dict) -> "MetaMemory":
        w_f = state["w_f"]
        mem = cls(w_f.shape[0], w_f.shape[1], float(state["rho"]), dtype=w_f.dtype)
        mem.w_f = w_f.clone()
        mem.w_b = state["w_b"].clone()
        mem.initialized = state["initialized"].clone()
        mem.update_counts = state["update_counts"].clone()
        return mem

    def clone(self) -> "MetaMemory":
        return MetaMemory.from_state_dict(self.state_dict())

    def to(self, dtype) -> "MetaMemory":
        self.w_f = self.w_f.to(dtype)
        self.w_b = self.w_b.to(dtype)
        return self


def update_memory(memory: MetaMemory, class_row: int, proto_f: Tensor, proto_b: Tensor) -> MetaMemory:
    return memory.update(class_row, proto_f, proto_b)


def warmup_gate(iteration: int, iters_per_epoch: int, lambda_warm: float) -> bool:
    """True once gradient updates are allowed: ``iteration >= lambda_warm * iters_per_epoch``."""
    if iters_per_epoch <= 0:
        raise ValueError("iters_per_epoch must be positive")
    return iteration >= lambda_warm * iters_per_epoch - 1e-9


def _rescale(sim: Tensor) -> Tensor:
    return (sim + 1) / 2


def _competition(sims: list[Tensor], keep: int) -> Tensor:
    stacked = torch.stack(sims, 0)
    winner = stacked.argmax(dim=0)  # first maximum wins ties
    return torch.where(winner == keep, _rescale(stacked[keep]), torch.zeros_like(stacked[keep]))


def suppress_train(feat_h: Tensor, memory: MetaMemory, target_row: int) -> Tensor:
    """Training-phase meta-activation map for one query ``feat_h`` [C_H, h, w].

    Competitors: 0 target background, 1 target foreground, 2.. other
    initialised known-class foregrounds.
    """
    if not memory.initialized[target_row]:
        return torch.full(feat_h.shape[-2:], 0.5, dtype=feat_h.dtype)
    w_f, w_b = memory.w_f.to(feat_h.dtype), memory.w_b.to(feat_h.dtype)
    sims = [cosine_map(feat_h, w_b[target_row]), cosine_map(feat_h, w_f[target_row])]
    for i in range(memory.n_classes):
        if i != target_row and memory.initialized[i]:
            sims.append(cosine_map(feat_h, w_f[i]))
    return _competition(sims, keep=1)


def suppress_test(feat_h: Tensor, proto_f: Tensor, proto_b: Tensor, memory: MetaMemory) -> Tensor:
    """Test-phase map: 0 support foreground, 1 support background, 2.. every known foreground."""
    w_f = memory.w_f.to(feat_h.dtype)
    sims = [cosine_map(feat_h, proto_f), cosine_map(feat_h, proto_b)]
    for i in range(memory.n_classes):
        if memory.initialized[i]:
            sims.append(cosine_map(feat_h, w_f[i]))
    return _competition(sims, keep=0)
