"""Episode sampling and the fixed evaluation pair list."""
from __future__ import annotations

import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError, SamplingError
from .index import EpisodeIndex

CROP_ATTEMPTS = 20


@dataclass
class Episode:
    target_class: int
    support: list[tuple[np.ndarray, np.ndarray]]
    query_image: np.ndarray
    query_mask: np.ndarray
    support_ids: tuple[str, ...] = ()
    query_id: str = ""

    @property
    def k(self) -> int:
        return len(self.support)


@dataclass(frozen=True)
class Pair:
    query_id: str
    support_ids: tuple[str, ...]
    class_id: int

    def to_line(self) -> str:
        return ",".join([self.query_id, *self.support_ids, str(self.class_id)])

    @classmethod
    def from_line(cls, line: str) -> "Pair":
        parts = [p.strip() for p in line.strip().split(",")]
        if len(parts) < 3:
            raise DataError(f"bad pair line {line!r}")
        return cls(parts[0], tuple(parts[1:-1]), int(parts[-1]))


def random_crop(image: np.ndarray, mask: np.ndarray, class_id: int, size: int,
                rng: np.random.Generator, attempts: int = CROP_ATTEMPTS):
    """Crop ``size`` x ``size`` containing >= 1 pixel of ``class_id``; None after ``attempts`` misses."""
    h, w = mask.shape
    if h <= size and w <= size:
        return image, mask
    for _ in range(attempts):
        y = int(rng.integers(0, max(h - size, 0) + 1))
        x = int(rng.integers(0, max(w - size, 0) + 1))
        m = mask[y:y + size, x:x + size]
        if (m == class_id).any():
            return image[y:y + size, x:x + size], m
    return None


def _load_binary(index: EpisodeIndex, image_id: str, class_id: int, rng: np.random.Generator):
    image, mask = index.load(image_id)
    if index.crop_size:
        cropped = random_crop(image, mask, class_id, index.crop_size, rng)
        if cropped is None:
            return None
        image, mask = cropped
    binary = (mask == class_id).astype(np.uint8)
    if not binary.any():
        return None
    return image, binary


def _eligible(index: EpisodeIndex, k: int) -> list[int]:
    return [c for c in index.classes if len(index.images_of(c)) >= k + 1]


def sample_episode(index: EpisodeIndex, k: int, rng: np.random.Generator,
                   class_id: int | None = None) -> Episode:
    """Draw one K-shot episode. Deterministic given the generator state."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.entries:
        raise SamplingError("empty index")
    if class_id is None:
        eligible = _eligible(index, k)
        if not eligible:
            raise SamplingError(f"no class has >= {k + 1} images")
        class_id = eligible[int(rng.integers(len(eligible)))]
    pool = index.images_of(class_id)
    if len(pool) < k + 1:
        raise SamplingError(f"class {class_id} has {len(pool)} images, need {k + 1}")
    # Crops can miss the target; re-draw images until K+1 usable samples are found.
    order = rng.permutation(len(pool))
    picked = []
    for j in order:
        loaded = _load_binary(index, pool[j], class_id, rng)
        if loaded is not None:
            picked.append((pool[j], loaded))
        if len(picked) == k + 1:
            break
    if len(picked) < k + 1:
        raise SamplingError(f"class {class_id}: only {len(picked)} usable crops, need {k + 1}")
    (query_id, (q_img, q_mask)), supports = picked[0], picked[1:]
    return Episode(
        target_class=class_id,
        support=[s for _, s in supports],
        query_image=q_img,
        query_mask=q_mask,
        support_ids=tuple(i for i, _ in supports),
        query_id=query_id,
    )


def materialize_pairs(index: EpisodeIndex, n_pairs: int, k: int, seed: int) -> list[Pair]:
    """Fixed support-query pair list for evaluation. Query images may repeat across pairs.

    Pairs are nested across K: for a given seed and class set, the K-shot list
    has the same queries as the 1-shot list and extends each support set, so
    shot counts are compared on identical queries.
    """
    rng = np.random.default_rng(seed)
    eligible = _eligible(index, k)
    for c in index.classes:
        if c not in eligible:
            warnings.warn(f"class {c} has fewer than {k + 1} images; excluded from evaluation",
                          stacklevel=2)
    if not eligible:
        raise SamplingError(f"no class has >= {k + 1} images")
    pairs = []
    for _ in range(n_pairs):
        c = eligible[int(rng.integers(len(eligible)))]
        pool = index.images_of(c)
        # a full permutation draws the same randomness whatever k is
        chosen = rng.permutation(len(pool))[:k + 1]
        pairs.append(Pair(pool[chosen[0]], tuple(pool[j] for j in chosen[1:]), c))
    return pairs


def write_pairs(pairs: list[Pair], path: str | Path) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(p.to_line() + "\n")


def read_pairs(path: str | Path) -> list[Pair]:
    with open(path) as fh:
        return [Pair.from_line(line) for line in fh if line.strip()]


def episode_from_pair(index: EpisodeIndex, pair: Pair, seed: int = 0) -> Episode:
    # crop positions derive from the pair itself so evaluation is repeatable
    rng = np.random.default_rng([seed, zlib.crc32(pair.to_line().encode())])
    loaded = [_load_binary(index, i, pair.class_id, rng) for i in (pair.query_id, *pair.support_ids)]
    if any(x is None for x in loaded):
        raise SamplingError(f"pair {pair.to_line()}: target class missing from a sample")
    (q_img, q_mask), supports = loaded[0], loaded[1:]
    return Episode(pair.class_id, list(supports), q_img, q_mask, pair.support_ids, pair.query_id)
