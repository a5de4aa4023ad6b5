"""In-memory datasets, batching, splitting and directory I/O."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from ..tensor import bilinear_matrix
from .errors import DataError, DimensionMismatchError
from .netpbm import read_netpbm, write_pgm, write_ppm
from .synthetic import generate_sample


@dataclass
class SampleBatch:
    images: np.ndarray  # [B,3,H,W] float64 in [0,1]
    masks: np.ndarray  # [B,H,W] uint8 in {0,1}
    ids: list[str]

    def validate(self) -> None:
        b = self.images.shape[0]
        if b < 1 or self.images.ndim != 4 or self.images.shape[1] != 3:
            raise DataError(f"bad image batch shape {self.images.shape}")
        if self.masks.shape != (b,) + self.images.shape[2:]:
            raise DataError(f"mask batch {self.masks.shape} not aligned with images {self.images.shape}")
        if len(self.ids) != b:
            raise DataError("ids length differs from batch size")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise DataError("image values outside [0, 1]")
        if not np.isin(self.masks, (0, 1)).all():
            raise DataError("mask is not binary")


@dataclass
class Dataset:
    images: np.ndarray
    masks: np.ndarray
    ids: list[str]

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.masks[idx], [self.ids[i] for i in idx])

    def batches(self, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[SampleBatch]:
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            yield SampleBatch(self.images[idx], self.masks[idx], [self.ids[i] for i in idx])


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "synthetic"
    count: int = 64
    image_size: int = 64
    train_fraction: float = 0.8
    val_fraction: float = 0.2
    seed: int = 7
    path: str = ""

    def __post_init__(self):
        if self.source not in ("synthetic", "directory"):
            raise ValueError(f"dataset source must be 'synthetic' or 'directory', got {self.source!r}")
        if abs(self.train_fraction + self.val_fraction - 1.0) > 1e-9:
            raise ValueError("train_fraction + val_fraction must equal 1")
        if self.source == "synthetic" and self.count < 2:
            raise ValueError("synthetic dataset needs count >= 2")
        if self.source == "directory" and not self.path:
            raise ValueError("directory dataset needs a path")


def generate_synthetic(dataset_cfg: DatasetSpec) -> Dataset:
    pairs = [generate_sample(dataset_cfg.seed, i, dataset_cfg.image_size) for i in range(dataset_cfg.count)]
    images = np.stack([p[0] for p in pairs])
    masks = np.stack([p[1] for p in pairs])
    return Dataset(images, masks, [f"syn{dataset_cfg.seed}-{i:05d}" for i in range(dataset_cfg.count)])


def build_dataset(dataset_cfg: DatasetSpec) -> Dataset:
    if dataset_cfg.source == "synthetic":
        return generate_synthetic(dataset_cfg)
    return load_directory(dataset_cfg.path, dataset_cfg.image_size)


def split(dataset: Dataset, fractions: tuple[float, float], seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle then a contiguous cut into (train, val)."""
    n = len(dataset)
    n_train = int(round(n * fractions[0]))
    if n_train < 1 or n_train >= n:
        raise DataError(f"split {fractions} of {n} samples leaves a side empty")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(order[:n_train])), dataset.subset(np.sort(order[n_train:]))


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    return np.minimum((np.arange(n_out) * n_in) // n_out, n_in - 1)


def resize_nearest(arr: np.ndarray, size: int) -> np.ndarray:
    rows = nearest_indices(arr.shape[0], size)
    cols = nearest_indices(arr.shape[1], size)
    return arr[rows][:, cols]


def resize_bilinear_np(arr: np.ndarray, size: int) -> np.ndarray:
    """``[C,H,W]`` bilinear resize (same kernel as the differentiable op)."""
    ah = bilinear_matrix(arr.shape[1], size)
    aw = bilinear_matrix(arr.shape[2], size)
    return ah @ arr @ aw.T


def load_pair(image_path, mask_path, target_size: int) -> tuple[np.ndarray, np.ndarray]:
    img, maxval = read_netpbm(image_path)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    mask, mask_max = read_netpbm(mask_path)
    if mask.ndim != 2:
        raise DataError(f"{mask_path}: mask must be a P5 greyscale image")
    if img.shape[:2] != mask.shape:
        raise DimensionMismatchError(
            f"{image_path} is {img.shape[1]}x{img.shape[0]} but {mask_path} is {mask.shape[1]}x{mask.shape[0]}")
    image = img.astype(np.float64).transpose(2, 0, 1) / maxval
    image = np.clip(resize_bilinear_np(image, target_size), 0.0, 1.0)
    mask8 = mask.astype(np.int64) * 255 // mask_max
    binary = (resize_nearest(mask8, target_size) > 127).astype(np.uint8)
    return image, binary


def load_directory(path, target_size: int) -> Dataset:
    img_dir = os.path.join(path, "images")
    mask_dir = os.path.join(path, "masks")
    if not os.path.isdir(img_dir) or not os.path.isdir(mask_dir):
        raise DataError(f"dataset directory {path} must contain images/ and masks/")
    ids = sorted(os.path.splitext(f)[0] for f in os.listdir(img_dir) if f.endswith((".ppm", ".pgm")))
    if not ids:
        raise DataError(f"no images found under {img_dir}")
    images, masks = [], []
    for sid in ids:
        ext = ".ppm" if os.path.exists(os.path.join(img_dir, sid + ".ppm")) else ".pgm"
        im, mk = load_pair(os.path.join(img_dir, sid + ext), os.path.join(mask_dir, sid + ".pgm"), target_size)
        images.append(im)
        masks.append(mk)
    return Dataset(np.stack(images), np.stack(masks), ids)


def to_uint8_image(image: np.ndarray) -> np.ndarray:
    """``[3,H,W]`` in [0,1] -> ``[H,W,3]`` uint8."""
    return np.clip(np.rint(image.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)


def export_directory(dataset: Dataset, path) -> None:
    for image, mask, sid in zip(dataset.images, dataset.masks, dataset.ids):
        write_ppm(os.path.join(path, "images", sid + ".ppm"), to_uint8_image(image))
        write_pgm(os.path.join(path, "masks", sid + ".pgm"), mask.astype(np.uint8) * 255)
