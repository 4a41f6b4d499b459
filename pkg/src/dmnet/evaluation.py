"""IoU-family metrics and the fixed-pair fold evaluation."""
from __future__ import annotations

import csv
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data.episodes import Episode, Pair, episode_from_pair, materialize_pairs
from .data.index import EpisodeIndex
from .errors import ShapeError

Predictor = Callable[[Sequence[Episode]], Sequence[np.ndarray]]


def accumulate_iou(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    """(TP, FP, FN) pixel counts of binary ``pred`` against binary ``gt``."""
    pred, gt = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return tp, fp, fn


def iou(tp: int, fp: int, fn: int) -> float:
    denom = tp + fp + fn
    return 1.0 if denom == 0 else tp / denom


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, tp, fp, fn, tn):
        self.tp += tp
        self.fp += fp
        self.fn += fn
        self.tn += tn

    @property
    def iou(self) -> float:
        return iou(self.tp, self.fp, self.fn)

    @property
    def background_iou(self) -> float:
        return iou(self.tn, self.fn, self.fp)

    @property
    def accuracy(self) -> float:
        total = self.tp + self.fp + self.fn + self.tn
        return (self.tp + self.tn) / total if total else 1.0


@dataclass
class MetricsReport:
    per_class_iou: dict[int, float]
    miou: float
    fb_iou: float
    macc: float
    n_pairs: int
    seed: int
    k: int = 1
    foreground_iou: float = 0.0
    background_iou: float = 0.0
    per_class_acc: dict[int, float] = field(default_factory=dict)
    excluded: list[int] = field(default_factory=list)
    records: list[dict] = field(default_factory=list, repr=False)
    class_names: dict[int, str] = field(default_factory=dict, repr=False)

    def percent(self, name: str) -> float:
        return 100.0 * getattr(self, name)

    def summary(self) -> dict[str, float | int]:
        out: dict[str, float | int] = {
            "miou": 100.0 * self.miou, "fb_iou": 100.0 * self.fb_iou, "macc": 100.0 * self.macc,
            "fg_iou": 100.0 * self.foreground_iou, "bg_iou": 100.0 * self.background_iou,
            "n_pairs": self.n_pairs, "k": self.k, "seed": self.seed,
        }
        for c, v in sorted(self.per_class_iou.items()):
            out[f"iou.{self.class_names.get(c, c)}"] = 100.0 * v
        return out

    def write(self, path: str | Path) -> tuple[Path, Path]:
        """Write ``<path>.txt`` (key=value) and ``<path>.csv`` (one row per class)."""
        path = Path(path)
        txt, table = path.with_suffix(".txt"), path.with_suffix(".csv")
        with open(txt, "w") as fh:
            for key, value in self.summary().items():
                fh.write(f"{key}={value:.4f}\n" if isinstance(value, float) else f"{key}={value}\n")
            if self.excluded:
                fh.write(f"excluded={','.join(map(str, self.excluded))}\n")
        with open(table, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class_id", "class_name", "iou", "accuracy"])
            for c in sorted(self.per_class_iou):
                writer.writerow([c, self.class_names.get(c, c), f"{100 * self.per_class_iou[c]:.4f}",
                                 f"{100 * self.per_class_acc.get(c, float('nan')):.4f}"])
        return txt, table

    def write_records(self, path: str | Path) -> Path:
        """Per-pair rows (class, target area, IoU) used by the plotting command."""
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["pair", "class_id", "class_name", "gt_area", "iou"])
            writer.writeheader()
            for r in self.records:
                writer.writerow({**r, "class_name": self.class_names.get(r["class_id"], r["class_id"])})
        return Path(path)


def evaluate_pairs(predictor: Predictor, index: EpisodeIndex, pairs: Sequence[Pair], seed: int = 0,
                   batch_size: int = 25, k: int | None = None) -> MetricsReport:
    per_class: dict[int, Counts] = defaultdict(Counts)
    overall = Counts()
    records = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        episodes = [episode_from_pair(index, p, seed) for p in chunk]
        preds = predictor(episodes)
        for n, (ep, pred) in enumerate(zip(episodes, preds)):
            tp, fp, fn = accumulate_iou(pred, ep.query_mask)
            tn = ep.query_mask.size - tp - fp - fn
            per_class[ep.target_class].add(tp, fp, fn, tn)
            overall.add(tp, fp, fn, tn)
            records.append({"pair": start + n, "class_id": ep.target_class,
                            "gt_area": int(ep.query_mask.sum()), "iou": iou(tp, fp, fn)})
    per_class_iou = {c: v.iou for c, v in sorted(per_class.items())}
    per_class_acc = {c: v.accuracy for c, v in sorted(per_class.items())}
    miou = float(np.mean(list(per_class_iou.values()))) if per_class_iou else 0.0
    macc = float(np.mean(list(per_class_acc.values()))) if per_class_acc else 0.0
    fg, bg = overall.iou, overall.background_iou
    return MetricsReport(
        per_class_iou=per_class_iou, miou=miou, fb_iou=(fg + bg) / 2, macc=macc,
        n_pairs=len(pairs), seed=seed, k=k or (len(pairs[0].support_ids) if pairs else 1),
        foreground_iou=fg, background_iou=bg, per_class_acc=per_class_acc, records=records,
    )


def evaluate_fold(predictor: Predictor, index: EpisodeIndex, n_pairs: int = 1000, k: int = 1,
                  seed: int = 0, batch_size: int = 25, pairs: Sequence[Pair] | None = None) -> MetricsReport:
    """Evaluate on ``n_pairs`` fixed support-query pairs drawn with ``seed``.

    Per-class IoU uses TP/FP/FN summed over all pairs of the class; FB-IoU
    averages class-agnostic foreground and background IoU over all pairs.
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if pairs is None:
            pairs = materialize_pairs(index, n_pairs, k, seed)
    for w in caught:
        warnings.warn(w.message, stacklevel=2)
    report = evaluate_pairs(predictor, index, pairs, seed, batch_size, k)
    report.excluded = [c for c in index.classes if c not in report.per_class_iou]
    return report


def oracle_predictor(episodes: Sequence[Episode]) -> list[np.ndarray]:
    return [e.query_mask.copy() for e in episodes]


def background_predictor(episodes: Sequence[Episode]) -> list[np.ndarray]:
    return [np.zeros_like(e.query_mask) for e in episodes]
