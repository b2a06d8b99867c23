"""MNIST ingestion (IDX files), the 13x13 shrink transform and spike-time encoding."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .container import read_container, write_container

DATA_DIR_ENV = "TTFSNET_DATA_DIR"
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxError(ValueError):
    pass


@dataclass
class ImageSet:
    images: np.ndarray  # (n, h, w) floats in [0, 1]
    labels: np.ndarray  # (n,) ints 0..9

    def __len__(self):
        return len(self.labels)

    def subset(self, n: Optional[int]) -> "ImageSet":
        if n is None or n >= len(self):
            return self
        return ImageSet(self.images[:n], self.labels[:n])

    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)


def _read_bytes(path) -> bytes:
    path = str(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(data: bytes, magic: int, ndim: int, name: str) -> np.ndarray:
    if len(data) < 4 + 4 * ndim:
        raise IdxError(f"{name}: header truncated")
    found = struct.unpack(">I", data[:4])[0]
    if found != magic:
        raise IdxError(f"{name}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    count = int(np.prod(dims))
    payload = data[4 + 4 * ndim:]
    if len(payload) != count:
        raise IdxError(f"{name}: payload has {len(payload)} bytes, header declares {count}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path) -> ImageSet:
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, 3, str(images_path))
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, 1, str(labels_path))
    if len(images) != len(labels):
        raise IdxError(f"{len(images)} images but {len(labels)} labels")
    if labels.size and labels.max() > 9:
        raise IdxError(f"label {labels.max()} outside 0-9")
    return ImageSet(images.astype(np.float64) / 255.0, labels.astype(np.int64))


def default_data_dir() -> Optional[Path]:
    value = os.environ.get(DATA_DIR_ENV)
    return Path(value) if value else None


def find_split(data_dir, split: str) -> tuple[Path, Path]:
    """Locate the IDX pair for ``split`` ('train' or 'test'), plain or gzipped."""
    data_dir = Path(data_dir)
    paths = []
    for stem in SPLIT_FILES[split]:
        for candidate in (data_dir / stem, data_dir / f"{stem}.gz"):
            if candidate.exists():
                paths.append(candidate)
                break
        else:
            raise FileNotFoundError(f"no {stem}[.gz] in {data_dir}")
    return paths[0], paths[1]


def load_mnist(data_dir, split: str) -> ImageSet:
    return load_idx(*find_split(data_dir, split))


def shrink_13(image: np.ndarray) -> np.ndarray:
    """Average a 28x28 image over 4x4 windows with stride 2, giving 13x13."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape[-2:] != (28, 28):
        raise ValueError(f"expected 28x28 images, got {image.shape}")
    windows = np.lib.stride_tricks.sliding_window_view(image, (4, 4), axis=(-2, -1))
    return windows[..., ::2, ::2, :, :].sum(axis=(-2, -1)) / 16.0


def shrink_images(images: ImageSet) -> ImageSet:
    return ImageSet(shrink_13(images.images), images.labels)


def cached_shrink(images: ImageSet, cache_path) -> ImageSet:
    """Shrink through an on-disk cache keyed by sample count."""
    cache_path = Path(cache_path)
    if cache_path.exists():
        meta, arrays = read_container(cache_path, "images")
        if int(meta.get("count", -1)) == len(images):
            return ImageSet(arrays["images"], arrays["labels"].astype(np.int64))
    small = shrink_images(images)
    write_container(cache_path, "images", {"images": small.images, "labels": small.labels},
                    {"count": len(small)})
    return small


def encode(x, tau_in: float = 5.0) -> np.ndarray:
    """Pixel intensities in [0, 1] to spike times ``tau_in * (1 - x)``; zero pixels stay silent (inf)."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, tau_in * (1.0 - x), np.inf)


def jitter(times, sigma_t: float, rng, clamp: bool = True) -> np.ndarray:
    """Add independent N(0, sigma_t) noise to every present spike; optionally clamp at 0."""
    times = np.asarray(times, dtype=np.float64)
    if sigma_t <= 0:
        return times.copy()
    out = times + sigma_t * rng.standard_normal(times.shape)
    if clamp:
        out = np.maximum(out, 0.0)
    return np.where(np.isfinite(times), out, times)
