"""
Feature-quality analysis reports.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np


@dataclass(frozen=True)
class SparsenessReport:
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values.size else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.values)) if self.values.size else float("nan")

    def summary(self) -> Dict[str, Any]:
        return {"n_samples": int(self.values.size), "mean": self.mean, "std": self.std}


@dataclass(frozen=True)
class CoherenceReport:
    """
    Pairwise absolute cosine similarity of dictionary features.

    `mu` covers the non-dead features only; `dead_units` lists the indices of
    zero-norm rows that were excluded.
    """

    mu: np.ndarray
    mean: float
    std: float
    max_offdiag: float
    near_duplicates: int
    dead_units: List[int] = field(default_factory=list)

    def summary(self) -> Dict[str, Any]:
        return {
            "n_features": int(self.mu.shape[0]),
            "mean": self.mean,
            "std": self.std,
            "max": self.max_offdiag,
            "near_duplicates": self.near_duplicates,
            "dead_units": len(self.dead_units),
        }


@dataclass(frozen=True)
class WeightHistogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def rows(self) -> List[List[Any]]:
        return [[float(e), int(c)] for e, c in zip(self.edges[:-1], self.counts)]


@dataclass(frozen=True)
class ReconstructionReport:
    """Per-image sum of squared errors plus best/worst image indices."""

    errors: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors)) if self.errors.size else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.errors)) if self.errors.size else float("nan")

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.errors))

    @property
    def worst_index(self) -> int:
        return int(np.argmax(self.errors))

    def summary(self) -> Dict[str, Any]:
        return {
            "n_images": int(self.errors.size),
            "mean": self.mean,
            "std": self.std,
            "best_index": self.best_index,
            "best_error": float(self.errors[self.best_index]),
            "worst_index": self.worst_index,
            "worst_error": float(self.errors[self.worst_index]),
        }
