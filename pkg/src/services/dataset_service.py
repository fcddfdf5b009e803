"""
Dataset service: binary dataset loaders, color conversion and patch sampling.
"""
from pathlib import Path
from typing import List, Sequence

import numpy as np
import structlog
from numpy.lib.stride_tricks import sliding_window_view

from src.models.image import LabeledImage, LabeledImageSet, Patch, Split
from src.utils.rng import make_rng

logger = structlog.get_logger(__name__)

CIFAR_SIDE = 32
CIFAR_PIXELS = CIFAR_SIDE * CIFAR_SIDE * 3
STL_SIDE = 96
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

CIFAR10_FILES = {
    Split.TRAIN: [f"data_batch_{i}.bin" for i in range(1, 6)],
    Split.TEST: ["test_batch.bin"],
}
CIFAR100_FILES = {Split.TRAIN: ["train.bin"], Split.TEST: ["test.bin"]}
STL10_FILES = {
    Split.TRAIN: ("train_X.bin", "train_y.bin"),
    Split.TEST: ("test_X.bin", "test_y.bin"),
}


class DatasetNotFoundError(FileNotFoundError):
    """Raised when a dataset file or directory is missing."""
    pass


class DatasetFormatError(ValueError):
    """Raised when a dataset file does not follow its binary layout."""
    pass


class PatchGeometryError(ValueError):
    """Raised when a patch does not fit the image it is cut from."""
    pass


def _resolve_files(path: Path, names: Sequence[str]) -> List[Path]:
    if path.is_file():
        return [path]
    if not path.exists():
        raise DatasetNotFoundError(f"Dataset path {path} does not exist")
    files = [path / name for name in names]
    missing = [str(f) for f in files if not f.is_file()]
    if missing:
        raise DatasetNotFoundError(f"Missing dataset files: {missing}")
    return files


def _read_records(file: Path, record_size: int) -> np.ndarray:
    raw = np.fromfile(file, dtype=np.uint8)
    if raw.size == 0 or raw.size % record_size != 0:
        raise DatasetFormatError(
            f"{file}: {raw.size} bytes is not a positive multiple of the "
            f"{record_size}-byte record size"
        )
    return raw.reshape(-1, record_size)


def _planar_to_hwc(planes: np.ndarray, side: int) -> np.ndarray:
    """N×(3·side·side) channel-planar row-major bytes → N×side×side×3 in [0,1]."""
    images = planes.reshape(-1, 3, side, side).transpose(0, 2, 3, 1)
    return (images.astype(np.float32) / np.float32(255.0))


def _load_cifar(path: Path, split: Split, files: dict, label_bytes: int,
                n_classes: int, name: str) -> LabeledImageSet:
    record_size = label_bytes + CIFAR_PIXELS
    pixel_blocks = []
    label_blocks = []
    for file in _resolve_files(Path(path), files[split]):
        records = _read_records(file, record_size)
        # The fine label is the last label byte (CIFAR-100 stores coarse first)
        labels = records[:, label_bytes - 1].astype(np.int64)
        bad = labels >= n_classes
        if bad.any():
            raise DatasetFormatError(
                f"{file}: label {int(labels[bad][0])} out of range for {n_classes} classes"
            )
        pixel_blocks.append(_planar_to_hwc(records[:, label_bytes:], CIFAR_SIDE))
        label_blocks.append(labels)
    image_set = LabeledImageSet(
        pixels=np.concatenate(pixel_blocks),
        labels=np.concatenate(label_blocks),
        split=split,
        n_classes=n_classes,
        name=name,
    )
    logger.info("Dataset loaded", dataset=name, split=split.value, images=len(image_set))
    return image_set


def load_cifar10(path: Path, split: Split) -> LabeledImageSet:
    """Load CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record)."""
    return _load_cifar(path, Split(split), CIFAR10_FILES, 1, 10, "cifar10")


def load_cifar100(path: Path, split: Split) -> LabeledImageSet:
    """Load CIFAR-100 binary files (coarse byte, fine byte, 3072 pixel bytes)."""
    return _load_cifar(path, Split(split), CIFAR100_FILES, 2, 100, "cifar100")


def load_stl10(path: Path, split: Split) -> LabeledImageSet:
    """
    Load STL-10 binary image and label files.

    Images are channel-separated and column-major inside each channel; labels
    are one byte each, 1-indexed.
    """
    split = Split(split)
    path = Path(path)
    if not path.is_dir():
        raise DatasetNotFoundError(f"STL-10 directory {path} does not exist")
    image_file, label_file = (path / name for name in STL10_FILES[split])
    for file in (image_file, label_file):
        if not file.is_file():
            raise DatasetNotFoundError(f"Missing dataset file: {file}")

    raw = _read_records(image_file, 3 * STL_SIDE * STL_SIDE)
    labels = np.fromfile(label_file, dtype=np.uint8).astype(np.int64)
    if len(labels) != len(raw):
        raise DatasetFormatError(
            f"STL-10 {split.value}: {len(raw)} images but {len(labels)} labels"
        )
    bad = (labels < 1) | (labels > 10)
    if bad.any():
        raise DatasetFormatError(f"STL-10 label {int(labels[bad][0])} outside 1..10")

    # [c, col, row] → [row, col, c]
    images = raw.reshape(-1, 3, STL_SIDE, STL_SIDE).transpose(0, 3, 2, 1)
    image_set = LabeledImageSet(
        pixels=images.astype(np.float32) / np.float32(255.0),
        labels=labels - 1,
        split=split,
        n_classes=10,
        name="stl10",
    )
    logger.info("Dataset loaded", dataset="stl10", split=split.value, images=len(image_set))
    return image_set


def to_grayscale(image: LabeledImage) -> LabeledImage:
    """BT.601 luminance of an RGB image."""
    if image.channels != 3:
        raise ValueError(f"Grayscale conversion needs 3 channels, got {image.channels}")
    gray = np.asarray(image.pixels, dtype=np.float64) @ LUMA_WEIGHTS
    return LabeledImage(pixels=gray[:, :, None], label=image.label, source_id=image.source_id)


def grayscale_set(image_set: LabeledImageSet) -> LabeledImageSet:
    """Whole-set grayscale conversion (the "-bw" dataset variants)."""
    if image_set.pixels.shape[3] != 3:
        raise ValueError("Grayscale conversion needs 3-channel images")
    gray = (image_set.pixels.astype(np.float64) @ LUMA_WEIGHTS).astype(image_set.pixels.dtype)
    return LabeledImageSet(
        pixels=gray[..., None],
        labels=image_set.labels,
        split=image_set.split,
        n_classes=image_set.n_classes,
        name=f"{image_set.name}-bw",
    )


def sample_patch_origins(n_images: int, height: int, width: int, n_p: int,
                         w_p: int, seed: int) -> np.ndarray:
    """
    n_p uniform draws, with replacement, over all (image, row, col) top-left
    positions. Returns an n_p×3 integer array.
    """
    if n_p < 1:
        raise PatchGeometryError(f"n_p must be >= 1, got {n_p}")
    if w_p > height or w_p > width:
        raise PatchGeometryError(f"Patch side {w_p} exceeds image size {height}×{width}")
    rows = height - w_p + 1
    cols = width - w_p + 1
    flat = make_rng(seed).integers(0, n_images * rows * cols, size=n_p)
    image_idx, row, col = np.unravel_index(flat, (n_images, rows, cols))
    return np.stack([image_idx, row, col], axis=1).astype(np.int64)


def cut_patches(maps: np.ndarray, origins: np.ndarray, w_p: int) -> np.ndarray:
    """Cut w_p×w_p windows at `origins` out of an N×H×W×C array."""
    offsets = np.arange(w_p)
    rows = origins[:, 1, None] + offsets
    cols = origins[:, 2, None] + offsets
    return maps[origins[:, 0, None, None], rows[:, :, None], cols[:, None, :]]


def sample_patches(image_set: LabeledImageSet, n_p: int, w_p: int, seed: int) -> List[Patch]:
    """Random w_p×w_p patches drawn uniformly over images and positions."""
    _, height, width, _ = image_set.pixels.shape
    origins = sample_patch_origins(len(image_set), height, width, n_p, w_p, seed)
    values = cut_patches(image_set.pixels, origins, w_p)
    return [Patch(values=v, origin=(int(o[0]), int(o[1]), int(o[2]))) for v, o in zip(values, origins)]


def grid_side(side: int, w_p: int, s: int) -> int:
    """k = floor((side - w_p)/s) + 1."""
    if s < 1:
        raise PatchGeometryError(f"Stride must be >= 1, got {s}")
    if w_p > side:
        raise PatchGeometryError(f"Patch side {w_p} exceeds image side {side}")
    return (side - w_p) // s + 1


def dense_patch_array(maps: np.ndarray, w_p: int, s: int) -> np.ndarray:
    """All w_p×w_p windows of an H×W×C array at stride s, as k×k×w_p×w_p×C."""
    k_rows = grid_side(maps.shape[0], w_p, s)
    k_cols = grid_side(maps.shape[1], w_p, s)
    windows = sliding_window_view(maps, (w_p, w_p), axis=(0, 1))[::s, ::s]
    # sliding_window_view puts the window axes last: k×k×C×w_p×w_p
    return windows[:k_rows, :k_cols].transpose(0, 1, 3, 4, 2)


def dense_patches(image: LabeledImage, w_p: int, s: int) -> List[List[Patch]]:
    """k×k grid of patches, row-major by top-left position."""
    windows = dense_patch_array(image.pixels, w_p, s)
    return [
        [
            Patch(values=windows[i, j], origin=(image.source_id, i * s, j * s))
            for j in range(windows.shape[1])
        ]
        for i in range(windows.shape[0])
    ]


# Class palettes for the synthetic fixture
_SYNTHETIC_COLORS = np.array([
    [0.9, 0.2, 0.1],
    [0.1, 0.3, 0.9],
    [0.2, 0.8, 0.2],
    [0.9, 0.8, 0.1],
    [0.7, 0.2, 0.8],
    [0.1, 0.8, 0.8],
])


def make_synthetic(n_images: int, side: int, n_classes: int, seed: int,
                   split: Split = Split.TRAIN) -> LabeledImageSet:
    """
    Class-conditional bar images on a noisy background.

    Class c draws bars at orientation pi·c/n_classes in a class color, with
    random phase, bar period and contrast; deterministic given the seed.
    """
    if n_classes < 2:
        raise ValueError(f"Synthetic sets need at least 2 classes, got {n_classes}")
    rng = make_rng(seed)
    labels = np.arange(n_images) % n_classes
    rng.shuffle(labels)

    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    pixels = np.empty((n_images, side, side, 3), dtype=np.float32)
    for n, label in enumerate(labels):
        theta = np.pi * label / n_classes
        period = rng.uniform(4.0, 6.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        projection = xx * np.cos(theta) + yy * np.sin(theta)
        bars = (np.sin(2 * np.pi * projection / period + phase) > 0).astype(np.float64)

        color = _SYNTHETIC_COLORS[label % len(_SYNTHETIC_COLORS)]
        background = rng.uniform(0.1, 0.3, size=(side, side, 1)) * np.ones(3)
        contrast = rng.uniform(0.7, 1.0)
        image = background * (1 - bars[..., None]) + contrast * color * bars[..., None]
        image = image + rng.uniform(-0.05, 0.05, size=image.shape)
        pixels[n] = np.clip(image, 0.0, 1.0)

    return LabeledImageSet(
        pixels=pixels,
        labels=labels.astype(np.int64),
        split=Split(split),
        n_classes=n_classes,
        name="synthetic",
    )


def save_cifar_records(image_set: LabeledImageSet, path: Path) -> Path:
    """Write an RGB set in CIFAR-10 record layout (label byte + planar pixels)."""
    if image_set.pixels.shape[3] != 3:
        raise ValueError("CIFAR records hold 3-channel images")
    planes = np.rint(image_set.pixels.astype(np.float64) * 255.0).astype(np.uint8)
    planes = planes.transpose(0, 3, 1, 2).reshape(len(image_set), -1)
    records = np.concatenate([image_set.labels.astype(np.uint8)[:, None], planes], axis=1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records.tofile(path)
    logger.debug("CIFAR-style records written", path=str(path), images=len(image_set))
    return path


