"""Fold specs, dataset indexing, episode sampling and the synthetic corpus."""
from .episodes import (Episode, Pair, episode_from_pair, materialize_pairs, random_crop,
                       read_pairs, sample_episode, write_pairs)
from .folds import FoldSpec, load_fold_spec
from .index import EpisodeIndex, build_index, read_image, read_mask, scan_classes
from .synthetic import AppearanceJitter, SyntheticDatasetSpec, generate_synthetic_dataset

__all__ = [
    "AppearanceJitter", "Episode", "EpisodeIndex", "FoldSpec", "Pair", "SyntheticDatasetSpec",
    "build_index", "episode_from_pair", "generate_synthetic_dataset", "load_fold_spec",
    "materialize_pairs", "random_crop", "read_image", "read_mask", "read_pairs",
    "sample_episode", "scan_classes", "write_pairs",
]
