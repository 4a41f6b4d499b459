"""Episodic training loop and checkpoint I/O."""
from __future__ import annotations

import csv
import json
import logging
import platform
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import Config
from .data import build_index, load_fold_spec, sample_episode
from .data.index import EpisodeIndex
from .decoder import segmentation_loss
from .errors import NumericalError
from .kms import MetaMemory, warmup_gate
from .model import DMNet, episodes_to_tensors, query_masks

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dmnet-checkpoint"
CHECKPOINT_VERSION = 1


def poly_lr(base_lr: float, iteration: int, max_iter: int, power: float = 0.9) -> float:
    return base_lr * (1 - iteration / max_iter) ** power


@dataclass
class TrainResult:
    model: DMNet
    losses: list[float] = field(default_factory=list)
    gradient_steps: int = 0
    checkpoint: Path | None = None


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def train(cfg: Config, index: EpisodeIndex | None = None, known_classes=None,
          out_dir: str | Path | None = None, progress: bool = False) -> TrainResult:
    """Train a model per ``cfg``; write checkpoint, loss log and manifest into ``out_dir``.

    ``out_dir=None`` uses ``cfg.train.out_dir``; pass ``False`` to write nothing.
    """
    t = cfg.train
    if index is None or known_classes is None:
        fold = load_fold_spec(cfg.data.fold_file, cfg.data.fold)
        known_classes = fold.training_classes
        if index is None:
            index = build_index(cfg.data.root, fold, "train", cfg.data.crop_size)
    if cfg.model.backbone == "tiny" and not cfg.model.weights:
        log.warning("tiny encoder has random weights; run `dmnet pretrain` and set model.weights")
    seed_everything(t.seed)
    model = DMNet(cfg, known_classes)
    model.train()
    opt = torch.optim.SGD(model.trainable_parameters(), lr=t.lr, momentum=t.momentum,
                          weight_decay=t.weight_decay)
    result = TrainResult(model)
    rows = []
    for it in range(t.max_iter):
        lr = poly_lr(t.lr, it, t.max_iter, t.power)
        for group in opt.param_groups:
            group["lr"] = lr
        episodes = [sample_episode(index, 1, np.random.default_rng([t.seed, it, j]))
                    for j in range(t.batch_size)]
        q, s, m = episodes_to_tensors(episodes)
        target = query_masks(episodes)
        classes = [e.target_class for e in episodes]
        step = not model.use_kms or warmup_gate(it, t.iters_per_epoch, cfg.kms.lambda_warm)
        with torch.set_grad_enabled(step):
            out = model(q, s, m, classes, "train")
            loss = segmentation_loss(out.y_final, out.y_q if model.use_csrm else None, target, t.eta)
        if not torch.isfinite(loss.detach()):
            raise NumericalError(
                f"non-finite loss {loss.detach().item()} at iteration {it} (lr={lr:.3g}, classes={classes})")
        if step:
            opt.zero_grad()
            loss.backward()
            opt.step()
            result.gradient_steps += 1
        value = loss.detach().item()
        result.losses.append(value)
        rows.append((it, value, lr, int(step)))
        if progress and (it % 50 == 0 or it == t.max_iter - 1):
            log.info("iter %d loss %.4f lr %.5f step=%s", it, value, lr, step)

    if out_dir is None:
        out_dir = t.out_dir
    if out_dir is not False:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "loss_log.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "loss", "lr", "gradient_step"])
            writer.writerows((i, repr(l), repr(r), g) for i, l, r, g in rows)
        result.checkpoint = save_checkpoint(model, out_dir / "checkpoint.pt", seed=t.seed)
        write_manifest(out_dir, cfg, "train")
    return result


def save_checkpoint(model: DMNet, path: str | Path, seed: int = 0) -> Path:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "weights": model.state_dict(),
        "memory": model.memory.state_dict() if model.memory is not None else None,
        "known_classes": list(model.known_classes),
        "config": model.cfg.to_dict(),
        "seed": seed,
    }
    torch.save(payload, path)
    return Path(path)


def load_checkpoint(path: str | Path) -> DMNet:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload["version"] > CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {payload['version']} is newer than supported")
    cfg = Config.from_dict(payload["config"])
    model = DMNet(cfg, payload["known_classes"])
    model.load_state_dict(payload["weights"])
    if payload["memory"] is not None:
        model.memory = MetaMemory.from_state_dict(payload["memory"])
    model.eval()
    return model


def code_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out_dir: str | Path, cfg: Config, command: str, **extra) -> Path:
    path = Path(out_dir) / f"manifest_{command}.json"
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "seed": cfg.train.seed if command == "train" else cfg.eval.seed,
        "code_version": code_version(),
        "torch": torch.__version__,
        "python": platform.python_version(),
        **extra,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return path
