"""Regenerate the toy image corpus under tests/data from scikit-image sample images.

Each source is box-downscaled so a crop holds some structure, then cut into
96x96 training tiles and 64x64 held-out tiles from disjoint regions.
"""

from pathlib import Path

import numpy as np
import skimage.data

from asymcodec.imageio import write_image

SOURCES = [
    "astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry", "hubble_deep_field",
    "retina", "colorwheel", "stereo_motorcycle", "camera", "coins", "moon", "page",
]
ROOT = Path(__file__).resolve().parents[1] / "tests" / "data"


def load(name: str) -> np.ndarray:
    img = getattr(skimage.data, name)()
    if isinstance(img, tuple):
        img = img[0]
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return img[:, :, :3].astype(np.float64)


def box_downscale(img: np.ndarray, short_side: int = 200) -> np.ndarray:
    f = max(1, min(img.shape[:2]) // short_side)
    h, w = (img.shape[0] // f) * f, (img.shape[1] // f) * f
    small = img[:h, :w].reshape(h // f, f, w // f, f, 3).mean(axis=(1, 3))
    return np.clip(np.round(small), 0, 255).astype(np.uint8)


def main() -> None:
    rng = np.random.default_rng(2024)
    train, held = ROOT / "train", ROOT / "heldout"
    for d in (train, held):
        d.mkdir(parents=True, exist_ok=True)
        for old in d.glob("*.ppm"):
            old.unlink()
    n_train = n_held = 0
    for name in SOURCES:
        img = box_downscale(load(name))
        h, w = img.shape[:2]
        # left half feeds training, right half the held-out set
        half = w // 2
        for _ in range(min(2, 16 - n_train)):
            top = rng.integers(0, h - 96 + 1)
            left = rng.integers(0, half - 96 + 1)
            write_image(train / f"{n_train:02d}_{name}.ppm", img[top : top + 96, left : left + 96])
            n_train += 1
        if n_held < 10:
            top = rng.integers(0, h - 64 + 1)
            left = rng.integers(half, w - 64 + 1)
            write_image(held / f"{n_held:02d}_{name}.ppm", img[top : top + 64, left : left + 64])
            n_held += 1
    print(f"wrote {n_train} training and {n_held} held-out images to {ROOT}")


if __name__ == "__main__":
    main()
