"""Synthetic spoil-like texture fixtures for tests and CI.

Each attribute drives one visual factor: particle size sets the grain scale,
relative density the contrast, fabric structure the number of large clasts
and plasticity the colour. The BMAC label is the weighted vote of the four.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .bmac import SpoilAttribute, score_bmac
from .dataset import TARGETS, write_manifest

CATS = ("Cat-1", "Cat-2", "Cat-3", "Cat-4")
COMBINED = "Cat-2 or 3"
LONG_TAIL = np.array([0.5, 0.27, 0.15, 0.08])

GRAIN_SIGMA = {1: 1.2, 2: 2.5, 3: 5.0, 4: 10.0}
CONTRAST = {1: 0.10, 2: 0.16, 3: 0.22, 4: 0.28}
CLASTS = {1: 0, 2: 4, 3: 10, 4: 18}
TINT = {
    1: (0.42, 0.36, 0.30),
    2: (0.48, 0.44, 0.38),
    3: (0.40, 0.40, 0.42),
    4: (0.34, 0.34, 0.34),
}


def _level(label: str) -> float:
    return 2.5 if label == COMBINED else float(label[-1])


def _interp(table, level):
    lo, hi = int(np.floor(level)), int(np.ceil(level))
    frac = level - lo
    a, b = np.asarray(table[lo], dtype=float), np.asarray(table[hi], dtype=float)
    return a * (1 - frac) + b * frac


def render(labels, rng: np.random.Generator, width: int = 512, height: int = 512) -> np.ndarray:
    """uint8 RGB image for a dict of attribute labels."""
    grain = float(_interp(GRAIN_SIGMA, _level(labels["particle_size"])))
    contrast = float(_interp(CONTRAST, _level(labels["relative_density"])))
    n_clasts = int(round(float(_interp(CLASTS, _level(labels["fabric_structure"])))))
    tint = _interp(TINT, _level(labels["plasticity"]))

    noise = ndimage.gaussian_filter(rng.standard_normal((height, width)), grain)
    noise /= noise.std() + 1e-12
    shade = 0.5 + contrast * noise
    yy, xx = np.mgrid[0:height, 0:width]
    scale = min(width, height) / 512.0
    for _ in range(n_clasts):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry, rx = rng.uniform(18, 45, size=2) * scale
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        shade[inside] = rng.uniform(0.25, 0.75) + 0.03 * noise[inside]
    rgb = np.clip(shade[..., None] * (np.asarray(tint) / 0.4)[None, None, :], 0.0, 1.0)
    rgb += rng.normal(0.0, 0.01, size=rgb.shape)
    return (np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def sample_labels(rng: np.random.Generator, distribution: str = "long_tail",
                  combined_rate: float = 0.0):
    p = LONG_TAIL if distribution == "long_tail" else np.full(4, 0.25)
    labels = {}
    for target in TARGETS[:4]:
        cat = CATS[rng.choice(4, p=p)]
        if target in ("relative_density", "plasticity") and rng.random() < combined_rate:
            cat = COMBINED
        labels[target] = cat
    attrs = {
        SpoilAttribute.PARTICLE_SIZE: labels["particle_size"],
        SpoilAttribute.CONSISTENCY_OR_DENSITY: labels["relative_density"],
        SpoilAttribute.FABRIC_STRUCTURE: labels["fabric_structure"],
        SpoilAttribute.PLASTICITY: labels["plasticity"],
    }
    # combined labels vote for their lower category
    vote = {a: 2 if v == COMBINED else int(v[-1]) for a, v in attrs.items()}
    labels["bmac_category"] = CATS[score_bmac(vote).assigned_category - 1]
    return labels


def texture_arrays(n_per_class: int, size: int = 224, seed: int = 0, target: str = "particle_size"):
    """In-memory fixture: ``n_per_class`` images for each of the four categories of
    ``target``; the other attributes are drawn uniformly.

    Returns ``(ids, tensors float32 N x size x size x 3, labels)``.
    """
    rng = np.random.default_rng(seed)
    ids, images, labels = [], [], []
    for c in range(4):
        for j in range(n_per_class):
            lab = sample_labels(rng, "balanced")
            lab[target] = CATS[c]
            images.append(render(lab, rng, size, size).astype(np.float32) / 255.0)
            ids.append(f"syn_{c}_{j:04d}")
            labels.append(CATS[c])
    return ids, np.stack(images), labels


def generate(out_dir, n: int = 200, seed: int = 0, width: int = 512, height: int = 512,
             distribution: str = "long_tail", combined_rate: float = 0.03,
             min_per_class: int = 6, fmt: str = "jpg") -> Path:
    """Write ``n`` images plus ``manifest.csv`` into ``out_dir``; returns the manifest path.

    Labels are redrawn until every observed class of every target has at
    least ``min_per_class`` members, so stratified five-fold plans exist.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        all_labels = [sample_labels(rng, distribution, combined_rate) for _ in range(n)]
        ok = True
        for t in TARGETS:
            values, counts = np.unique([lab[t] for lab in all_labels], return_counts=True)
            if counts.min() < min_per_class:
                ok = False
        if ok:
            break
    else:
        raise ValueError("could not draw a label set meeting min_per_class; raise n")
    rows = []
    for i, lab in enumerate(all_labels):
        rid = f"img_{i:04d}"
        rel = f"images/{rid}.{fmt}"
        img = Image.fromarray(render(lab, rng, width, height))
        if fmt == "jpg":
            img.save(out / rel, quality=92)
        else:
            img.save(out / rel)
        rows.append((rid, rel, lab))
    vocabs = {}
    for t in TARGETS:
        present = {lab[t] for lab in all_labels}
        vocabs[t] = [v for v in CATS + (COMBINED,) if v in present]
    manifest = out / "manifest.csv"
    write_manifest(manifest, rows, vocabs)
    return manifest
