"""
Feature maps, pooled image descriptors and linear classifier records.
"""
from dataclasses import dataclass
from typing import List

import numpy as np


@dataclass(frozen=True)
class FeatureMaps:
    """k×k×n_f feature maps of one image."""

    maps: np.ndarray
    image_id: int

    @property
    def grid_side(self) -> int:
        return int(self.maps.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.maps.shape[2])


@dataclass(frozen=True)
class ImageDescriptor:
    """Pooled feature vector of length r·r·n_f."""

    values: np.ndarray
    label: int


@dataclass(frozen=True)
class DescriptorSet:
    """Descriptors stacked row-wise, as cached on disk and fed to the classifier."""

    values: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    @classmethod
    def from_descriptors(cls, descriptors: List[ImageDescriptor], n_classes: int) -> "DescriptorSet":
        if not descriptors:
            return cls(np.zeros((0, 0)), np.zeros(0, dtype=np.int64), n_classes)
        return cls(
            values=np.stack([d.values for d in descriptors]),
            labels=np.array([d.label for d in descriptors], dtype=np.int64),
            n_classes=n_classes,
        )

    def descriptors(self) -> List[ImageDescriptor]:
        return [ImageDescriptor(v, int(y)) for v, y in zip(self.values, self.labels)]


@dataclass(frozen=True)
class LinearModel:
    """
    One-vs-rest linear classifier over standardized descriptors.

    coef has one row per entry of `classes`; mean/scale are the training-set
    standardization vectors.
    """

    coef: np.ndarray
    intercept: np.ndarray
    classes: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    C: float

    @property
    def n_classes(self) -> int:
        return int(self.classes.shape[0])

    def standardize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.scale

    def decision_function(self, values: np.ndarray) -> np.ndarray:
        return self.standardize(values) @ self.coef.T + self.intercept

    def predict(self, values: np.ndarray) -> np.ndarray:
        scores = self.decision_function(values)
        return self.classes[np.argmax(scores, axis=1)]


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    confusion: np.ndarray
    n_samples: int
