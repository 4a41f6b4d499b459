"""Synthetic multi-class shapes corpus.

Each image holds several shape instances from different classes on a
noisy background. Classes differ in outline, base colour and stripe
texture; instances jitter colour, scale (up to 4x between the smallest
and largest instance of a class), rotation and texture phase so that
intra-class appearance varies.
"""
from __future__ import annotations

import colorsys
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

SHAPES = ("disk", "ring", "triangle", "rectangle", "cross", "star", "ellipse", "lshape")


@dataclass(frozen=True)
class AppearanceJitter:
    hue: float = 0.035
    saturation: tuple[float, float] = (0.45, 0.9)
    value: tuple[float, float] = (0.55, 0.95)
    scale: tuple[float, float] = (0.5, 2.0)
    rotation: tuple[float, float] = (0.0, 360.0)
    texture_amplitude: tuple[float, float] = (0.05, 0.25)


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    shape_classes: tuple[str, ...] = SHAPES
    n_images: int = 600
    image_size: int = 64
    shapes_per_image: tuple[int, int] = (2, 4)
    appearance_jitter: AppearanceJitter = field(default_factory=AppearanceJitter)
    base_radius: float = 0.09  # fraction of the image side at scale 1
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.shape_classes) - set(SHAPES)
        if unknown:
            raise ValueError(f"unknown shape classes: {sorted(unknown)}")
        lo, hi = self.shapes_per_image
        if lo < 1 or hi < lo:
            raise ValueError(f"bad shapes_per_image {self.shapes_per_image}")
        if hi < 2:
            raise ValueError("shapes_per_image max must be >= 2 for multi-class co-existence")

    def class_id(self, name: str) -> int:
        return self.shape_classes.index(name) + 1


def _outline(shape: str, n: int = 48) -> list[np.ndarray]:
    """Polygons (unit radius, centred on the origin) whose even-odd fill is the shape."""
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    circle = np.stack([np.cos(t), np.sin(t)], 1)
    if shape == "disk":
        return [circle]
    if shape == "ring":
        return [circle, 0.55 * circle]
    if shape == "ellipse":
        return [circle * np.array([1.0, 0.45])]
    if shape == "triangle":
        a = np.deg2rad([90, 210, 330])
        return [np.stack([np.cos(a), np.sin(a)], 1)]
    if shape == "rectangle":
        return [np.array([[-1, -0.55], [1, -0.55], [1, 0.55], [-1, 0.55]])]
    if shape == "cross":
        w = 0.33
        return [np.array([
            [-w, -1], [w, -1], [w, -w], [1, -w], [1, w], [w, w],
            [w, 1], [-w, 1], [-w, w], [-1, w], [-1, -w], [-w, -w],
        ])]
    if shape == "star":
        a = np.pi / 2 + np.arange(10) * np.pi / 5
        r = np.where(np.arange(10) % 2 == 0, 1.0, 0.42)
        return [np.stack([r * np.cos(a), r * np.sin(a)], 1)]
    if shape == "lshape":
        return [np.array([[-0.8, -1], [-0.2, -1], [-0.2, 0.4], [0.8, 0.4], [0.8, 1], [-0.8, 1]])]
    raise ValueError(shape)


def _render_mask(shape: str, size: int, center: tuple[float, float], radius: float,
                 rotation: float) -> np.ndarray:
    c, s = math.cos(math.radians(rotation)), math.sin(math.radians(rotation))
    rot = np.array([[c, -s], [s, c]])
    canvas = np.zeros((size, size), dtype=bool)
    for poly in _outline(shape):
        pts = poly @ rot.T * radius + np.asarray(center)
        layer = Image.new("1", (size, size), 0)
        ImageDraw.Draw(layer).polygon([tuple(p) for p in pts.tolist()], fill=1)
        canvas ^= np.asarray(layer, dtype=bool)
    return canvas


def _class_palette(n: int) -> list[float]:
    # Interleave hues so neighbouring class ids are not neighbouring colours.
    order = [(i * 3) % n for i in range(n)]
    return [order[i] / n for i in range(n)]


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.25, 0.6, size=3)
    tint = rng.uniform(-0.12, 0.12, size=3)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy)[..., None]
    img = base + tint * ramp + rng.normal(0, 0.05, size=(size, size, 3))
    return img


def _texture(rng: np.random.Generator, size: int, period: float, amplitude: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
    return 1.0 + amplitude * wave[..., None]


def render_image(spec: SyntheticDatasetSpec, index: int) -> tuple[np.ndarray, np.ndarray, dict]:
    """Render image ``index``: (uint8 RGB image, uint8 class-id mask, metadata record)."""
    rng = np.random.default_rng([spec.seed, index])
    size = spec.image_size
    jit = spec.appearance_jitter
    hues = _class_palette(len(spec.shape_classes))
    periods = [3.0 + 1.5 * (i % 4) for i in range(len(spec.shape_classes))]

    img = _background(rng, size)
    mask = np.zeros((size, size), dtype=np.uint8)
    lo, hi = spec.shapes_per_image
    n_shapes = int(rng.integers(lo, hi + 1))
    n_distinct = min(n_shapes, len(spec.shape_classes))
    chosen = list(rng.choice(len(spec.shape_classes), size=n_distinct, replace=False))
    while len(chosen) < n_shapes:
        chosen.append(int(rng.integers(len(spec.shape_classes))))

    objects = []
    occupied = np.zeros((size, size), dtype=bool)
    instance = np.zeros((size, size), dtype=np.int16)
    for cls_idx in chosen:
        cls_idx = int(cls_idx)
        name = spec.shape_classes[cls_idx]
        scale = float(rng.uniform(*jit.scale))
        radius = spec.base_radius * scale * size
        rotation = float(rng.uniform(*jit.rotation))
        # a few placement tries to limit occlusion
        best = None
        for _ in range(8):
            margin = min(radius * 0.7, size / 2 - 1)
            center = (float(rng.uniform(margin, size - margin)), float(rng.uniform(margin, size - margin)))
            obj = _render_mask(name, size, center, radius, rotation)
            overlap = (obj & occupied).sum() / max(obj.sum(), 1)
            if best is None or overlap < best[0]:
                best = (overlap, center, obj)
            if overlap < 0.05:
                break
        _, center, obj = best
        if not obj.any():
            continue
        hue = (hues[cls_idx] + rng.uniform(-jit.hue, jit.hue)) % 1.0
        sat = rng.uniform(*jit.saturation)
        val = rng.uniform(*jit.value)
        color = np.array(colorsys.hsv_to_rgb(hue, sat, val))
        tex = _texture(rng, size, periods[cls_idx], rng.uniform(*jit.texture_amplitude))
        fill = color * tex + rng.normal(0, 0.03, size=(size, size, 3))
        img[obj] = fill[obj]
        mask[obj] = spec.class_id(name)
        occupied |= obj
        instance[obj] = len(objects) + 1
        objects.append({
            "class": spec.class_id(name),
            "scale": round(scale, 6),
            "radius_px": round(radius, 4),
            "rotation": round(rotation, 4),
            "area_px": int(obj.sum()),
            "color": [round(float(v), 6) for v in color],
        })
    for j, o in enumerate(objects):
        # area left after later objects painted over it
        o["visible_px"] = int((instance == j + 1).sum())
    image = (np.clip(img, 0, 1) * 255).round().astype(np.uint8)
    record = {
        "id": f"{index:05d}",
        "classes": sorted(int(c) for c in np.unique(mask) if c != 0),
        "objects": objects,
    }
    return image, mask, record


def generate_synthetic_dataset(spec: SyntheticDatasetSpec, root: str | Path) -> dict:
    """Write ``images/``, ``masks/`` and ``metadata.json`` under ``root``; returns the metadata."""
    root = Path(root)
    if spec.n_images < len(spec.shape_classes) * 10:
        warnings.warn(
            f"n_images={spec.n_images} < 10 x {len(spec.shape_classes)} classes; "
            "some classes may be unsamplable at k=5",
            stacklevel=2,
        )
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(spec.n_images):
        image, mask, record = render_image(spec, i)
        Image.fromarray(image).save(root / "images" / f"{record['id']}.png")
        Image.fromarray(mask).save(root / "masks" / f"{record['id']}.png")
        records.append(record)
    meta = {
        "spec": asdict(spec),
        "classes": {name: spec.class_id(name) for name in spec.shape_classes},
        "images": records,
    }
    with open(root / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    return meta


def render_hue_image(rng: np.random.Generator, size: int = 64, n_bins: int = 16,
                     n_blobs: tuple[int, int] = (2, 5)) -> tuple[np.ndarray, np.ndarray]:
    """Class-agnostic pretraining sample: random polygons of uniformly random hue.

    Returns a float RGB image in [0, 1] and a label map where 0 is background
    and ``1 + hue_bin`` marks a blob. Outlines are random star-convex
    polygons, not any of the corpus shapes, so no episode class is seen.
    """
    img = _background(rng, size)
    label = np.zeros((size, size), dtype=np.int64)
    for _ in range(int(rng.integers(n_blobs[0], n_blobs[1] + 1))):
        n = int(rng.integers(3, 9))
        angles = np.sort(rng.uniform(0, 2 * np.pi, n))
        radii = rng.uniform(0.4, 1.0, n)
        radius = rng.uniform(0.04, 0.2) * size
        center = rng.uniform(0.1 * size, 0.9 * size, 2)
        pts = np.stack([np.cos(angles), np.sin(angles)], 1) * radii[:, None] * radius + center
        layer = Image.new("1", (size, size), 0)
        ImageDraw.Draw(layer).polygon([tuple(p) for p in pts.tolist()], fill=1)
        blob = np.asarray(layer, dtype=bool)
        if not blob.any():
            continue
        hue = rng.uniform()
        color = np.array(colorsys.hsv_to_rgb(hue, rng.uniform(0.45, 0.9), rng.uniform(0.55, 0.95)))
        fill = color * _texture(rng, size, rng.uniform(3.0, 9.0), rng.uniform(0.05, 0.25))
        fill = fill + rng.normal(0, 0.03, size=(size, size, 3))
        img[blob] = fill[blob]
        label[blob] = 1 + min(int(hue * n_bins), n_bins - 1)
    return np.clip(img, 0, 1), label
