"""Procedural landslide-like scenes: textured terrain with bright irregular scars."""

from __future__ import annotations

import numpy as np

from ..tensor import bilinear_matrix

MIN_FRACTION = 0.02
MAX_FRACTION = 0.40


def value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Smooth ``[size,size]`` noise in [0,1]: a random ``cells x cells`` lattice, bilinearly upsampled."""
    lattice = rng.uniform(0.0, 1.0, size=(cells, cells))
    up = bilinear_matrix(cells, size)
    return up @ lattice @ up.T


def fractal_noise(rng: np.random.Generator, size: int, octaves=(3, 6, 12)) -> np.ndarray:
    total = np.zeros((size, size))
    weight = 1.0
    norm = 0.0
    for cells in octaves:
        total += weight * value_noise(rng, size, min(cells, size))
        norm += weight
        weight *= 0.5
    return total / norm


def blob_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    """Union of 1-3 ellipses whose radius is perturbed by low harmonics."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        cx, cy = rng.uniform(0.2, 0.8, size=2) * size
        a = rng.uniform(0.10, 0.28) * size
        b = a * rng.uniform(0.35, 0.8)  # elongated, like a slope failure
        theta = rng.uniform(0.0, np.pi)
        dx, dy = xx - cx, yy - cy
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        r = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        phi = np.arctan2(v / b, u / a)
        edge = np.ones_like(phi)
        for k in range(2, 6):
            edge += rng.uniform(0.0, 0.12) * np.cos(k * phi + rng.uniform(0.0, 2 * np.pi))
        mask |= r <= edge
    return mask


def generate_sample(seed: int, index: int, size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic ``(image [3,H,W] in [0,1], mask [H,W] uint8)`` for ``(seed, index)``."""
    rng = np.random.default_rng([seed, index])
    while True:
        mask = blob_mask(rng, size)
        frac = mask.mean()
        if MIN_FRACTION <= frac <= MAX_FRACTION:
            break
    terrain = fractal_noise(rng, size)
    vegetation = np.stack([0.22 + 0.20 * terrain, 0.35 + 0.25 * terrain, 0.18 + 0.15 * terrain])
    soil_tex = fractal_noise(rng, size, octaves=(8, 16, 32))
    soil = np.stack([0.62 + 0.20 * soil_tex, 0.55 + 0.18 * soil_tex, 0.45 + 0.15 * soil_tex])
    image = np.where(mask[None], soil, vegetation)
    image = image + rng.normal(0.0, 0.03, size=image.shape)
    return np.clip(image, 0.0, 1.0), mask.astype(np.uint8)
