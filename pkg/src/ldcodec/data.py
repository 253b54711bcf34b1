"""Desk-scale image corpus built from images bundled with scikit-image and scikit-learn."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import skimage.data
from skimage import io as skio

_SKIMAGE_DIR = Path(skimage.data.__file__).parent

TRAIN_FILES = (
    "astronaut.png", "rocket.jpg", "motorcycle_left.png", "motorcycle_right.png",
    "hubble_deep_field.jpg", "ihc.png", "retina.jpg", "camera.png", "brick.png",
    "grass.png", "gravel.png", "moon.png", "coins.png", "page.png", "text.png",
)
HELDOUT_FILES = ("chelsea.png", "coffee.png")
SKLEARN_TRAIN = ("china.jpg",)
SKLEARN_HELDOUT = ("flower.jpg",)


def _as_rgb(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    arr = arr[..., :3]
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    arr = arr.astype(np.float32)
    return arr / max(float(arr.max()), 1.0)


def _sklearn_image(name: str) -> np.ndarray:
    from sklearn.datasets import load_sample_image

    return _as_rgb(load_sample_image(name))


def load_images(split: str = "train") -> list[np.ndarray]:
    """HxWx3 float32 images in [0, 1]; ``split`` is ``train`` or ``heldout``."""
    if split == "train":
        files, extra = TRAIN_FILES, SKLEARN_TRAIN
    elif split == "heldout":
        files, extra = HELDOUT_FILES, SKLEARN_HELDOUT
    else:
        raise ValueError(f"unknown split {split!r}")
    images = [_as_rgb(skio.imread(_SKIMAGE_DIR / f)) for f in files]
    images += [_sklearn_image(name) for name in extra]
    return images


def random_crops(images, size: int, count: int, rng: np.random.Generator, flip: bool = True) -> np.ndarray:
    """``count`` random ``size``-square crops as an (N, 3, size, size) array."""
    out = np.empty((count, 3, size, size), dtype=np.float32)
    usable = [im for im in images if min(im.shape[:2]) >= size]
    for i in range(count):
        im = usable[rng.integers(len(usable))]
        y = rng.integers(im.shape[0] - size + 1)
        x = rng.integers(im.shape[1] - size + 1)
        crop = im[y : y + size, x : x + size]
        if flip and rng.random() < 0.5:
            crop = crop[:, ::-1]
        out[i] = crop.transpose(2, 0, 1)
    return out


def heldout_crops(size: int = 192, per_image: int = 4, seed: int = 1234) -> list[np.ndarray]:
    """Fixed evaluation crops (HxWx3) from the held-out images."""
    rng = np.random.default_rng(seed)
    crops = []
    for im in load_images("heldout"):
        for _ in range(per_image):
            y = rng.integers(im.shape[0] - size + 1)
            x = rng.integers(im.shape[1] - size + 1)
            crops.append(np.ascontiguousarray(im[y : y + size, x : x + size]))
    return crops
