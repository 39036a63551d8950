"""Deterministic synthetic corpus for end-to-end pipeline checks.

21 classes carry distinct color/shape signatures: 7 hue bands crossed with
3 (brightness, shape) tiers, drawn as a single filled figure on black. All
hues live inside the segmentation's green HSV band, so images pass the
background-removal pipeline intact, and the black backdrop matches the real
corpus's leaf-on-black framing.

Everything derives from np.random.default_rng([seed, class_id, idx]), so a
corpus is a pure function of (seed, layout) and can be regenerated
piecemeal (e.g. to recover one image's ground-truth shape mask).
"""

from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np

from .preprocess import save_rgb

# full-degree hues 54..174 -> half-degree 27..87, inside the (25..90) mask band
HUES = (54.0, 74.0, 94.0, 114.0, 134.0, 154.0, 174.0)
VALUES = (1.0, 0.62, 0.36)          # brightness tiers, all comfortably above V=40
SHAPES = ("disk", "square", "diamond")
DEFAULT_CLASSES = len(HUES) * len(VALUES)


def class_name(class_id: int) -> str:
    return f"class_{class_id:02d}"


def generate_image(class_id: int, idx: int, size: int = 128,
                   seed: int = 42) -> tuple:
    """One image and its ground-truth shape mask.

    Returns (uint8 (S,S,3) RGB, bool (S,S) mask). Position, radius, hue and
    brightness jitter keep instances varied without ever leaving the class
    signature's band.
    """
    if not 0 <= class_id < DEFAULT_CLASSES:
        raise ValueError(f"class_id must be in [0,{DEFAULT_CLASSES})")
    rng = np.random.default_rng([seed, class_id, idx])
    hue_idx, tier = divmod(class_id, len(VALUES))

    hue = HUES[hue_idx] + rng.uniform(-1.5, 1.5)
    value = VALUES[tier]
    cy = size / 2 + rng.uniform(-0.05, 0.05) * size
    cx = size / 2 + rng.uniform(-0.05, 0.05) * size
    radius = size * rng.uniform(0.30, 0.38)

    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    shape = SHAPES[tier]
    if shape == "disk":
        mask = dy * dy + dx * dx <= radius * radius
    elif shape == "square":
        mask = np.maximum(np.abs(dy), np.abs(dx)) <= 0.9 * radius
    else:
        mask = np.abs(dy) + np.abs(dx) <= 1.2 * radius

    base = np.array(colorsys.hsv_to_rgb(hue / 360.0, 1.0, value)) * 255.0
    # multiplicative texture keeps hue/saturation fixed while varying V;
    # kept mild so brightness tiers never smear into each other
    texture = rng.uniform(0.96, 1.0, size=(size, size))
    img = np.zeros((size, size, 3), dtype=np.float64)
    img[mask] = base[None, :] * texture[mask, None]
    return np.clip(np.round(img), 0, 255).astype(np.uint8), mask


def generate_corpus(root, num_classes: int = DEFAULT_CLASSES, per_class: int = 20,
                    size: int = 128, seed: int = 42) -> list:
    """Write root/<class_XX>/img_XXX.png for every class; returns class names."""
    if not 1 <= num_classes <= DEFAULT_CLASSES:
        raise ValueError(f"num_classes must be in [1,{DEFAULT_CLASSES}]")
    rootp = Path(root)
    names = []
    for cid in range(num_classes):
        cdir = rootp / class_name(cid)
        cdir.mkdir(parents=True, exist_ok=True)
        names.append(cdir.name)
        for idx in range(per_class):
            rgb, _ = generate_image(cid, idx, size=size, seed=seed)
            save_rgb(cdir / f"img_{idx:03d}.png", rgb)
    return names
