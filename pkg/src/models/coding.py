"""
Image coding records: DoG parameters, color strategies, channel stacks,
spike trains and feature vectors.
"""
from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class ColorStrategy(str, Enum):
    """How an RGB image becomes the channel maps fed to a feature extractor."""
    GRAYSCALE = "grayscale"
    RGB_OPPONENT = "rgb_opponent"
    BIO_COLOR = "bio_color"
    GRAYSCALE_PLUS_COLOR = "grayscale_plus_color"
    RAW_RGB = "raw_rgb"
    RAW_GRAY = "raw_gray"

    @property
    def uses_dog(self) -> bool:
        return self not in (ColorStrategy.RAW_RGB, ColorStrategy.RAW_GRAY)

    @property
    def channel_groups(self) -> Tuple[int, ...]:
        """Channel count of each independently learned sub-stack."""
        return _CHANNEL_GROUPS[self]

    @property
    def n_channels(self) -> int:
        return sum(self.channel_groups)

    @property
    def tag(self) -> int:
        """Stable small integer used in binary cache headers."""
        return list(ColorStrategy).index(self)

    @classmethod
    def from_tag(cls, tag: int) -> "ColorStrategy":
        return list(ColorStrategy)[tag]


_CHANNEL_GROUPS = {
    ColorStrategy.GRAYSCALE: (2,),
    ColorStrategy.RGB_OPPONENT: (6,),
    ColorStrategy.BIO_COLOR: (4,),
    ColorStrategy.GRAYSCALE_PLUS_COLOR: (2, 4),
    ColorStrategy.RAW_RGB: (3,),
    ColorStrategy.RAW_GRAY: (1,),
}


class DogParams(BaseModel):
    """Difference-of-Gaussians filter parameters."""

    model_config = ConfigDict(frozen=True)

    size: int = Field(7, ge=1, description="Odd kernel side in pixels")
    center_sigma: float = Field(1.0, gt=0.0)
    surround_sigma: float = Field(2.0, gt=0.0)

    @model_validator(mode="after")
    def validate_kernel(self) -> "DogParams":
        if self.size % 2 == 0 or self.size < 3:
            raise ValueError(f"DoG size must be odd and >= 3, got {self.size}")
        if not self.center_sigma < self.surround_sigma:
            raise ValueError(
                f"DoG center sigma ({self.center_sigma}) must be below "
                f"surround sigma ({self.surround_sigma})"
            )
        return self


@dataclass(frozen=True)
class ChannelStack:
    """
    Coded H×W×C_in maps of one image.

    `groups` lists the channel count of each independent sub-stack; only
    grayscale_plus_color has more than one (2 gray + 4 bio_color channels).
    """

    channels: np.ndarray
    strategy: ColorStrategy

    @property
    def groups(self) -> Tuple[int, ...]:
        return self.strategy.channel_groups

    @property
    def n_channels(self) -> int:
        return int(self.channels.shape[2])

    def sub_stacks(self) -> List[np.ndarray]:
        bounds = np.cumsum((0,) + self.groups)
        return [self.channels[:, :, a:b] for a, b in zip(bounds[:-1], bounds[1:])]


@dataclass(frozen=True)
class SpikeTrain:
    """
    Latency-coded input spikes: at most one event per input index.

    Events are sorted by timestamp, simultaneous events by ascending input index.
    """

    times: np.ndarray
    channels: np.ndarray
    t_duration: float
    n_inputs: int

    def __len__(self) -> int:
        return int(self.times.shape[0])

    @property
    def events(self) -> List[Tuple[float, int]]:
        return [(float(t), int(c)) for t, c in zip(self.times, self.channels)]

    def dense_times(self) -> np.ndarray:
        """Per-input spike time, +inf where the input did not spike."""
        dense = np.full(self.n_inputs, np.inf)
        dense[self.channels] = self.times
        return dense


@dataclass(frozen=True)
class FeatureVector:
    """n_f feature values in [0,1]."""

    values: np.ndarray

    @property
    def n_features(self) -> int:
        return int(self.values.shape[0])
