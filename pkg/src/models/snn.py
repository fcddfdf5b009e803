"""
Spiking network configuration, trainable state and simulation results.
"""
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class SnnConfig(BaseModel):
    """Single-layer integrate-and-fire network with STDP and homeostasis."""

    model_config = ConfigDict(frozen=True)

    n_f: int = Field(64, ge=1, description="Number of output neurons")
    n_inputs: int = Field(..., ge=1, description="Synapses per neuron")
    v_th0: float = Field(20.0, gt=0.0, description="Initial threshold (mV)")
    v_rest: float = Field(0.0, description="Rest potential (mV)")
    w_min: float = 0.0
    w_max: float = 1.0
    d_min: float = Field(0.0, ge=0.0)
    d_max: float = Field(0.01, ge=0.0)
    alpha_plus: float = Field(0.001, gt=0.0)
    alpha_minus: float = Field(0.001, gt=0.0)
    beta_plus: float = Field(1.0, gt=0.0)
    beta_minus: float = Field(1.0, gt=0.0)
    t_obj: float = Field(0.7, gt=0.0)
    eta: float = Field(0.001, gt=0.0)
    t_duration: float = Field(1.0, gt=0.0)
    threshold_floor: float = Field(1e-6, gt=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def validate_ranges(self) -> "SnnConfig":
        if not self.w_min < self.w_max:
            raise ValueError(f"w_min ({self.w_min}) must be below w_max ({self.w_max})")
        if not self.d_min <= self.d_max:
            raise ValueError(f"d_min ({self.d_min}) must not exceed d_max ({self.d_max})")
        if not 0.0 < self.t_obj < self.t_duration:
            raise ValueError(
                f"t_obj ({self.t_obj}) must lie strictly inside (0, t_duration={self.t_duration})"
            )
        return self

    @property
    def t_out_min(self) -> float:
        return 0.0 + self.d_min

    @property
    def t_out_max(self) -> float:
        return self.t_duration + self.d_max


@dataclass
class SnnState:
    """Weights and delays are n_f×n_inputs; thresholds has length n_f."""

    weights: np.ndarray
    delays: np.ndarray
    thresholds: np.ndarray
    config: SnnConfig

    @property
    def n_f(self) -> int:
        return int(self.weights.shape[0])

    @property
    def n_inputs(self) -> int:
        return int(self.weights.shape[1])

    def copy(self) -> "SnnState":
        return replace(
            self,
            weights=self.weights.copy(),
            delays=self.delays.copy(),
            thresholds=self.thresholds.copy(),
        )


@dataclass(frozen=True)
class SimResult:
    """Outcome of one presentation with inhibition on."""

    winner: Optional[int]
    fire_time: Optional[float]
    potential_trace: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if (self.winner is None) != (self.fire_time is None):
            raise ValueError("winner and fire_time must be both present or both absent")

    @property
    def fired(self) -> bool:
        return self.winner is not None


@dataclass
class EpochLog:
    """Per-epoch training statistics."""

    epoch: int
    presentations: int
    output_spikes: int
    silent_samples: int
    threshold_min: float
    threshold_mean: float
    threshold_max: float
    win_counts: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epoch": self.epoch,
            "presentations": self.presentations,
            "output_spikes": self.output_spikes,
            "silent_samples": self.silent_samples,
            "threshold_min": self.threshold_min,
            "threshold_mean": self.threshold_mean,
            "threshold_max": self.threshold_max,
            "win_counts": list(self.win_counts),
        }


@dataclass
class TrainingLog:
    epochs: List[EpochLog] = field(default_factory=list)

    def total_wins(self) -> np.ndarray:
        if not self.epochs:
            return np.zeros(0, dtype=np.int64)
        return np.sum([e.win_counts for e in self.epochs], axis=0)

    def dead_units(self) -> List[int]:
        """Neurons that never won during training."""
        return [int(i) for i in np.flatnonzero(self.total_wins() == 0)]
