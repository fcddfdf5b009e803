"""
Image, image set and patch records for the feature learning workbench.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Tuple

import numpy as np


class Split(str, Enum):
    """Dataset split."""
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class LabeledImage:
    """A single H×W×C image with pixel values in [0,1]."""

    pixels: np.ndarray
    label: int
    source_id: int

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] not in (1, 3):
            raise ValueError(f"Image must be H×W×C with C in (1, 3), got shape {self.pixels.shape}")
        if self.label < 0:
            raise ValueError(f"Label must be non-negative, got {self.label}")

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def channels(self) -> int:
        return int(self.pixels.shape[2])


@dataclass(frozen=True)
class LabeledImageSet:
    """
    An ordered image set stored as one N×H×W×C array plus labels.

    Images are exposed as LabeledImage views so that dataset-scale sets do not
    allocate one array per image.
    """

    pixels: np.ndarray
    labels: np.ndarray
    split: Split
    n_classes: int
    name: str = ""

    def __post_init__(self) -> None:
        if self.pixels.ndim != 4:
            raise ValueError(f"Image set must be N×H×W×C, got shape {self.pixels.shape}")
        if len(self.labels) != len(self.pixels):
            raise ValueError(
                f"Label count {len(self.labels)} does not match image count {len(self.pixels)}"
            )
        if len(self.labels) and int(self.labels.max()) >= self.n_classes:
            raise ValueError(f"Labels must be < n_classes={self.n_classes}")

    def __len__(self) -> int:
        return int(self.pixels.shape[0])

    def __getitem__(self, index: int) -> LabeledImage:
        return LabeledImage(
            pixels=self.pixels[index],
            label=int(self.labels[index]),
            source_id=int(index),
        )

    def __iter__(self) -> Iterator[LabeledImage]:
        for index in range(len(self)):
            yield self[index]

    @property
    def images(self) -> List[LabeledImage]:
        return list(self)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.pixels.shape[1:])  # type: ignore[return-value]

    def subset(self, count: int) -> "LabeledImageSet":
        """First `count` images, order preserved."""
        return LabeledImageSet(
            pixels=self.pixels[:count],
            labels=self.labels[:count],
            split=self.split,
            n_classes=self.n_classes,
            name=self.name,
        )


@dataclass(frozen=True)
class Patch:
    """A w_p×w_p×C window cut from an image; origin is (image index, row, col)."""

    values: np.ndarray
    origin: Tuple[int, int, int]

    @property
    def side(self) -> int:
        return int(self.values.shape[0])
