"""Desk-scale component ablation and K-shot comparison on synthetic shapes."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean, pstdev

from .config import Config
from .data import SyntheticDatasetSpec, build_index, generate_synthetic_dataset, load_fold_spec
from .evaluation import evaluate_fold
from .pretrain import ensure_encoder
from .training import train, write_manifest

log = logging.getLogger(__name__)

VARIANTS: dict[str, dict[str, bool]] = {
    "baseline": dict(use_cprm=False, use_csrm=False, use_kms=False),
    "+cprm": dict(use_cprm=True, use_csrm=False, use_kms=False),
    "+csrm": dict(use_cprm=False, use_csrm=True, use_kms=False),
    "+kms": dict(use_cprm=False, use_csrm=False, use_kms=True),
    "full": dict(use_cprm=True, use_csrm=True, use_kms=True),
}


def desk_config(root: str | Path = "data/synthetic", max_iter: int = 1000, lr: float = 0.01,
                seed: int = 0) -> Config:
    """64 px images, stride-4 tiny encoder, 64-channel features."""
    return Config().replace(
        data=dict(root=str(root), fold_file="synthetic", fold=0, image_size=64, n_images=600),
        model=dict(backbone="tiny", stride=4, reduce_dim=64),
        train=dict(max_iter=max_iter, iters_per_epoch=25, batch_size=8, lr=lr, seed=seed),
        eval=dict(n_pairs=1000, seed=0),
    )


@dataclass
class AblationResult:
    miou: dict[str, dict[int, float]] = field(default_factory=dict)  # variant -> seed -> mIoU %
    kshot: dict[int, dict[int, float]] = field(default_factory=dict)  # k -> seed -> mIoU %
    seconds: float = 0.0

    def mean(self, variant: str) -> float:
        return mean(self.miou[variant].values())

    def kshot_mean(self, k: int) -> float:
        return mean(self.kshot[k].values())

    def table(self) -> str:
        lines = [f"{'variant':<10} {'mean':>7} {'std':>6}  per-seed"]
        for name, runs in self.miou.items():
            vals = list(runs.values())
            lines.append(f"{name:<10} {mean(vals):7.2f} {pstdev(vals):6.2f}  "
                         + " ".join(f"{v:6.2f}" for v in vals))
        for k, runs in self.kshot.items():
            vals = list(runs.values())
            lines.append(f"{f'{k}-shot':<10} {mean(vals):7.2f} {pstdev(vals):6.2f}  "
                         + " ".join(f"{v:6.2f}" for v in vals))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"miou": self.miou, "kshot": self.kshot, "seconds": self.seconds}


def prepare(cfg: Config) -> Config:
    """Render the corpus and pretrain the encoder if missing; returns ``cfg`` with encoder weights set."""
    root = Path(cfg.data.root)
    if not (root / "metadata.json").exists():
        generate_synthetic_dataset(SyntheticDatasetSpec(
            n_images=cfg.data.n_images, image_size=cfg.data.image_size, seed=cfg.data.seed), root)
    if cfg.model.backbone == "tiny" and not cfg.model.weights:
        cfg = cfg.replace(model=dict(weights=str(ensure_encoder(cfg))))
    return cfg


def run_ablation(base: Config, seeds=(0, 1, 2), variants=tuple(VARIANTS), kshots=(1, 5),
                 out_dir: str | Path | None = None) -> AblationResult:
    """Train every variant on every seed and evaluate on the held-out fold.

    The ``full`` models are also evaluated at each K in ``kshots`` with the
    same pair seed.
    """
    start = time.perf_counter()
    base = prepare(base)
    fold = load_fold_spec(base.data.fold_file, base.data.fold)
    train_index = build_index(base.data.root, fold, "train", base.data.crop_size)
    test_index = build_index(base.data.root, fold, "test", base.data.crop_size)
    result = AblationResult()
    for name in variants:
        result.miou[name] = {}
        for seed in seeds:
            cfg = base.replace(model=VARIANTS[name], train=dict(seed=seed))
            model = train(cfg, train_index, fold.training_classes, out_dir=False).model
            model.eval()
            report = evaluate_fold(model.predict_masks, test_index, cfg.eval.n_pairs, 1,
                                   cfg.eval.seed, cfg.eval.batch_size)
            result.miou[name][seed] = report.percent("miou")
            log.info("%s seed %d: mIoU %.2f", name, seed, result.miou[name][seed])
            if name == "full":
                for k in kshots:
                    if k == 1:
                        result.kshot.setdefault(1, {})[seed] = result.miou[name][seed]
                        continue
                    rep = evaluate_fold(model.predict_masks, test_index, cfg.eval.n_pairs, k,
                                        cfg.eval.seed, cfg.eval.batch_size)
                    result.kshot.setdefault(k, {})[seed] = rep.percent("miou")
                    log.info("full seed %d %d-shot: mIoU %.2f", seed, k, result.kshot[k][seed])
    result.seconds = time.perf_counter() - start
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps(result.to_dict(), indent=2))
        (out / "ablation.txt").write_text(result.table() + "\n")
        write_manifest(out, base, "ablation", seeds=list(seeds), variants=list(variants))
    return result
