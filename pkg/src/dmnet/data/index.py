"""Dataset scanning and per-split episode indices."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DataError
from .folds import FoldSpec


def read_image(path: str | Path) -> np.ndarray:
    """RGB PNG -> float32 H x W x 3 array in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def read_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise DataError(f"{path}: mask must be single-channel, got shape {arr.shape}")
    return arr.astype(np.uint8)


def scan_classes(root: str | Path) -> dict[str, frozenset[int]]:
    """Class ids present in every mask under ``root/masks``."""
    root = Path(root)
    mask_dir = root / "masks"
    if not mask_dir.is_dir():
        raise DataError(f"no masks/ directory under {root}")
    out = {}
    for path in sorted(mask_dir.glob("*.png")):
        ids = np.unique(read_mask(path))
        out[path.stem] = frozenset(int(c) for c in ids if c != 0)
    if not out:
        raise DataError(f"no mask files in {mask_dir}")
    return out


@dataclass
class EpisodeIndex:
    split: str
    entries: list[tuple[str, int]]
    leakage_filtered: bool
    root: Path
    crop_size: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        by_class: dict[int, list[str]] = defaultdict(list)
        for image_id, class_id in self.entries:
            by_class[class_id].append(image_id)
        self._by_class = dict(by_class)

    @property
    def classes(self) -> list[int]:
        return sorted(self._by_class)

    @property
    def image_ids(self) -> list[str]:
        return sorted({i for i, _ in self.entries})

    def images_of(self, class_id: int) -> list[str]:
        return self._by_class.get(class_id, [])

    def load(self, image_id: str) -> tuple[np.ndarray, np.ndarray]:
        if image_id not in self._cache:
            image = read_image(self.root / "images" / f"{image_id}.png")
            mask = read_mask(self.root / "masks" / f"{image_id}.png")
            if image.shape[:2] != mask.shape:
                raise DataError(f"{image_id}: image {image.shape[:2]} and mask {mask.shape} differ")
            self._cache[image_id] = (image, mask)
        return self._cache[image_id]


def build_index(dataset_root: str | Path, fold: FoldSpec, split: str,
                crop_size: int = 0) -> EpisodeIndex:
    """Index (image, class) pairs for one split of a fold.

    The train split drops every image that contains any testing-class pixel.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    inventory = scan_classes(dataset_root)
    test_set = set(fold.testing_classes)
    wanted = fold.training_classes if split == "train" else fold.testing_classes
    entries = []
    for image_id, present in inventory.items():
        if split == "train" and present & test_set:
            continue
        entries.extend((image_id, c) for c in wanted if c in present)
    index = EpisodeIndex(split=split, entries=entries, leakage_filtered=(split == "train"),
                         root=Path(dataset_root), crop_size=crop_size)
    for c in wanted:
        if not index.images_of(c):
            raise DataError(f"{split} split has no images of class {fold.name(c)!r} (id {c})")
    return index
