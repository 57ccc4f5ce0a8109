"""Synthetic corpora for desk-scale experiments and tests.

Two texture families with different entity-level statistics: class 0 is a
smooth low-frequency color field, class 1 a high-frequency oriented stripe
pattern. Both are deterministic functions of the seed.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def _blob_patch(size: int, rng: np.random.Generator) -> np.ndarray:
    coarse = rng.uniform(40.0, 215.0, size=(5, 5, 3))
    zoom = (size / 5.0, size / 5.0, 1.0)
    field = ndimage.zoom(coarse, zoom, order=1, mode="nearest")[:size, :size]
    field = field + rng.normal(0.0, 6.0, size=field.shape)
    return np.clip(field, 0, 255).astype(np.uint8)


def _stripe_patch(size: int, rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0.0, np.pi)
    freq = rng.uniform(0.25, 0.45)  # cycles per pixel: well above blob scale
    phase = rng.uniform(0.0, 2.0 * np.pi)
    c1 = rng.uniform(20.0, 120.0, size=3)
    c2 = rng.uniform(150.0, 240.0, size=3)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    wave = np.sin(2.0 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    mix = (wave + 1.0) / 2.0
    field = c1[None, None, :] * (1.0 - mix[:, :, None]) + c2[None, None, :] * mix[:, :, None]
    field = field + rng.normal(0.0, 6.0, size=field.shape)
    return np.clip(field, 0, 255).astype(np.uint8)


def make_texture_corpus(
    n_patches: int, size: int = 128, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Balanced 2-class corpus of (images, labels); labels permuted by seed."""
    rng = np.random.default_rng(seed)
    labels = np.zeros(n_patches, dtype=np.int64)
    labels[n_patches // 2 :] = 1
    labels = labels[rng.permutation(n_patches)]
    images = np.empty((n_patches, size, size, 3), dtype=np.uint8)
    for i, lab in enumerate(labels):
        images[i] = _blob_patch(size, rng) if lab == 0 else _stripe_patch(size, rng)
    return images, labels


def make_survival_cohort(
    labels: np.ndarray, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """(times, events) where class 1 carries roughly double the hazard."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    hazard = np.where(labels == 1, 2.0, 1.0)
    times = rng.exponential(1.0 / hazard)
    censor = rng.exponential(2.0, size=len(labels))
    events = (times <= censor).astype(np.int64)
    observed = np.minimum(times, censor) + 1e-3  # keep times strictly positive
    return observed, events
